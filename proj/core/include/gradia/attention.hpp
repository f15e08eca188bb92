#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gradia/autodiff.hpp"
#include "gradia/model.hpp"
#include "gradia/tensor.hpp"

namespace gradia {

// Normalized (or raw) attention over the u x v feature grid.
struct AttentionMap {
  Tensor grid;  // (u, v)
  bool normalized = false;
  std::size_t class_index = 0;
  std::string instance_id;
};

enum class MaskProvenance { kHuman, kOracle, kBinarizedAttention };

const char* to_string(MaskProvenance provenance);

// Row-major boolean grid, usually at image resolution.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width,
             MaskProvenance provenance = MaskProvenance::kHuman);
  BinaryMask(std::size_t height, std::size_t width,
             std::vector<std::uint8_t> bits,
             MaskProvenance provenance = MaskProvenance::kHuman);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  MaskProvenance provenance() const { return provenance_; }
  void set_provenance(MaskProvenance p) { provenance_ = p; }

  bool at(std::size_t row, std::size_t col) const {
    return bits_[row * width_ + col] != 0;
  }
  void set(std::size_t row, std::size_t col, bool value) {
    bits_[row * width_ + col] = value ? 1 : 0;
  }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  std::size_t count() const;
  bool empty_mask() const { return count() == 0; }

  // Pixel contents only; provenance is metadata.
  bool operator==(const BinaryMask& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           bits_ == other.bits_;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
  MaskProvenance provenance_ = MaskProvenance::kHuman;
};

// Run-length text form: "W H r0 r1 ...", row-major, runs alternate
// false/true starting with a (possibly zero) false run. Every later run is
// positive and the runs sum to W*H.
std::string encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(std::string_view text,
                      MaskProvenance provenance = MaskProvenance::kHuman);

// Cell-wise area fraction of a mask over a u x v grid.
struct TargetAttentionGrid {
  Tensor grid;  // (u, v), entries in [0, 1]
  std::string source_id;
};

// Raw Grad-CAM: ReLU(sum_k mean_ij(dY^c/dA^k_ij) * A^k). Shape (u, v).
Tensor grad_cam(const ForwardTrace& trace, std::size_t class_index);
// Same map from explicit feature maps and their gradients, both (K, u, v).
Tensor grad_cam(const Tensor& feature_maps, const Tensor& feature_grads);

// Min-max scaling into [0, 1]; a constant map becomes all zeros.
AttentionMap normalize(const Tensor& raw, std::size_t class_index = 0,
                       std::string instance_id = {});

// Bilinear resampling with half-pixel centres, (u, v) -> (H, W).
Tensor upsample(const AttentionMap& map, std::size_t height, std::size_t width);

// True where value >= threshold; threshold must lie in [0, 1].
BinaryMask binarize(const Tensor& map, double threshold,
                    MaskProvenance provenance = MaskProvenance::kBinarizedAttention);

TargetAttentionGrid mask_to_target_grid(const BinaryMask& mask, std::size_t u,
                                        std::size_t v);

// Differentiable batch forms used by the training objective.
//
// Raw Grad-CAM per sample, (N, u*v). When `higher_order` is false the
// per-map weights are detached, so no gradient flows through them.
ad::Var grad_cam_batch(const TapedForward& tape,
                       const std::vector<std::size_t>& class_indices,
                       bool higher_order);
// Row-wise min-max normalization of (N, cells); constant rows map to zero.
ad::Var normalize_rows(const ad::Var& raw);

}  // namespace gradia
