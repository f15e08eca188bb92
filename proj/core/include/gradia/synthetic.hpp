#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradia/attention.hpp"
#include "gradia/reasonability.hpp"
#include "gradia/tensor.hpp"

namespace gradia {

enum class Glyph { kDisk, kSquare, kTriangle, kCross, kRing, kDiamond };

const char* to_string(Glyph glyph);
std::optional<Glyph> parse_glyph(std::string_view text);

enum class Split { kTrain, kValidation, kTest };

const char* to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

// A two-class scene: one class glyph per image, plus a context glyph whose
// presence correlates with `context_attached_class` in the train split.
struct SceneSpec {
  std::size_t image_size = 64;
  Glyph class0_shape = Glyph::kDisk;
  Glyph class1_shape = Glyph::kSquare;
  Glyph context_glyph = Glyph::kTriangle;
  std::size_t shape_size_min = 10;
  std::size_t shape_size_max = 16;
  double context_cooccurrence_train = 0.9;
  double context_cooccurrence_test = 0.5;
  int context_attached_class = 1;
  double noise_std = 0.05;
  // Glyph brightness is drawn uniformly from [intensity_min, 1].
  double intensity_min = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct SplitCounts {
  std::size_t train = 700;
  std::size_t validation = 150;
  std::size_t test = 150;

  // 70/15/15 of `total`, remainder to train.
  static SplitCounts from_total(std::size_t total);
  std::size_t total() const { return train + validation + test; }
};

struct SyntheticInstance {
  std::string id;
  Tensor image;  // (H, W), values on the 8-bit grid k/255
  std::size_t label = 0;
  BinaryMask intrinsic_mask;
  BinaryMask context_mask;
  Split split = Split::kTrain;

  bool has_context() const { return !context_mask.empty_mask(); }
};

// Deterministic in (spec, counts). Validation uses the train co-occurrence,
// test uses the test co-occurrence. Labels alternate within each split.
std::vector<SyntheticInstance> generate_dataset(const SceneSpec& spec,
                                                const SplitCounts& counts);

// Renders a glyph's pixel footprint of side `size` with its top-left corner
// at (row, col) into an image-sized mask.
BinaryMask render_glyph(Glyph glyph, std::size_t size, std::size_t row,
                        std::size_t col, std::size_t image_size);

struct OracleConfig {
  double binarize_tau = 0.5;
  double q1_coverage_min = 0.25;
  double q2_coverage_max = 0.25;

  void validate() const;
};

// Answers both reasonability questions from ground-truth masks. The map is
// upsampled to image resolution and binarized before coverage is measured.
Verdict oracle_verdict(const AttentionMap& attention,
                       const SyntheticInstance& instance,
                       const OracleConfig& config = {});

// The region a human should attend to: the class glyph.
BinaryMask oracle_mask(const SyntheticInstance& instance);

std::vector<const SyntheticInstance*> select_split(
    const std::vector<SyntheticInstance>& dataset, Split split);

}  // namespace gradia
