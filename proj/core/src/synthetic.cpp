#include "gradia/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "gradia/error.hpp"

namespace gradia {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x5eed));
}

struct Box {
  std::size_t row, col, size;

  bool separated_from(const Box& other, std::size_t margin) const {
    return row + size + margin <= other.row ||
           other.row + other.size + margin <= row ||
           col + size + margin <= other.col ||
           other.col + other.size + margin <= col;
  }
};

constexpr std::size_t kPlacementRetries = 200;
constexpr std::size_t kGlyphMargin = 2;

}  // namespace

const char* to_string(Glyph glyph) {
  switch (glyph) {
    case Glyph::kDisk:
      return "disk";
    case Glyph::kSquare:
      return "square";
    case Glyph::kTriangle:
      return "triangle";
    case Glyph::kCross:
      return "cross";
    case Glyph::kRing:
      return "ring";
    case Glyph::kDiamond:
      return "diamond";
  }
  return "?";
}

std::optional<Glyph> parse_glyph(std::string_view text) {
  for (Glyph g : {Glyph::kDisk, Glyph::kSquare, Glyph::kTriangle, Glyph::kCross,
                  Glyph::kRing, Glyph::kDiamond}) {
    if (text == to_string(g)) return g;
  }
  return std::nullopt;
}

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "validation";
    case Split::kTest:
      return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view text) {
  for (Split s : {Split::kTrain, Split::kValidation, Split::kTest}) {
    if (text == to_string(s)) return s;
  }
  return std::nullopt;
}

void SceneSpec::validate() const {
  auto probability = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!probability(context_cooccurrence_train) ||
      !probability(context_cooccurrence_test)) {
    throw ConfigError("co-occurrence probabilities must lie in [0, 1]");
  }
  if (class0_shape == class1_shape || class0_shape == context_glyph ||
      class1_shape == context_glyph) {
    throw ConfigError("class and context glyph kinds must be distinct");
  }
  if (shape_size_min < 3 || shape_size_min > shape_size_max) {
    throw ConfigError("glyph size range must satisfy 3 <= min <= max");
  }
  if (2 * shape_size_max + kGlyphMargin > image_size) {
    throw ConfigError("two glyphs of the maximum size do not fit in the image");
  }
  if (context_attached_class != 0 && context_attached_class != 1) {
    throw ConfigError("context_attached_class must be 0 or 1");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(intensity_min > 0.0 && intensity_min <= 1.0)) {
    throw ConfigError("intensity_min must lie in (0, 1]");
  }
}

SplitCounts SplitCounts::from_total(std::size_t total) {
  SplitCounts counts;
  counts.validation = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(total)));
  counts.test = counts.validation;
  counts.train = total - counts.validation - counts.test;
  return counts;
}

BinaryMask render_glyph(Glyph glyph, std::size_t size, std::size_t row,
                        std::size_t col, std::size_t image_size) {
  BinaryMask mask(image_size, image_size, MaskProvenance::kOracle);
  const double s = static_cast<double>(size);
  const double half = s / 2.0;
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      // Offsets of the pixel centre from the glyph centre.
      const double dy = static_cast<double>(r) + 0.5 - half;
      const double dx = static_cast<double>(c) + 0.5 - half;
      bool inside = false;
      switch (glyph) {
        case Glyph::kDisk:
          inside = dx * dx + dy * dy <= half * half;
          break;
        case Glyph::kSquare:
          inside = true;
          break;
        case Glyph::kTriangle: {
          // Apex at the top centre, base along the bottom row.
          const double reach = (static_cast<double>(r) + 0.5) / s * half;
          inside = std::abs(dx) <= reach;
          break;
        }
        case Glyph::kCross: {
          const double bar = s / 6.0;
          inside = std::abs(dx) <= bar || std::abs(dy) <= bar;
          break;
        }
        case Glyph::kRing: {
          const double d2 = dx * dx + dy * dy;
          inside = d2 <= half * half && d2 >= (half * 0.5) * (half * 0.5);
          break;
        }
        case Glyph::kDiamond:
          inside = std::abs(dx) + std::abs(dy) <= half;
          break;
      }
      if (inside && row + r < image_size && col + c < image_size) {
        mask.set(row + r, col + c, true);
      }
    }
  }
  return mask;
}

std::vector<SyntheticInstance> generate_dataset(const SceneSpec& spec,
                                                const SplitCounts& counts) {
  spec.validate();
  std::vector<SyntheticInstance> out;
  out.reserve(counts.total());
  const std::size_t n = spec.image_size;

  const std::pair<Split, std::size_t> plan[] = {
      {Split::kTrain, counts.train},
      {Split::kValidation, counts.validation},
      {Split::kTest, counts.test},
  };
  std::uint64_t global_index = 0;
  for (const auto& [split, count] : plan) {
    const double p = split == Split::kTest ? spec.context_cooccurrence_test
                                           : spec.context_cooccurrence_train;
    for (std::size_t i = 0; i < count; ++i, ++global_index) {
      std::mt19937_64 rng(instance_seed(spec.seed, global_index));
      std::uniform_int_distribution<std::size_t> size_dist(spec.shape_size_min,
                                                           spec.shape_size_max);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::uniform_real_distribution<double> brightness(spec.intensity_min, 1.0);

      SyntheticInstance inst;
      inst.split = split;
      inst.label = i % 2;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05zu", to_string(split), i);
      inst.id = id;

      const bool attached = static_cast<int>(inst.label) == spec.context_attached_class;
      const double draw = unit(rng);
      const bool with_context = attached ? draw < p : draw < 1.0 - p;

      const Glyph shape = inst.label == 0 ? spec.class0_shape : spec.class1_shape;
      const std::size_t shape_size = size_dist(rng);
      std::uniform_int_distribution<std::size_t> shape_pos(0, n - shape_size);
      const Box shape_box{shape_pos(rng), shape_pos(rng), shape_size};
      inst.intrinsic_mask = render_glyph(shape, shape_size, shape_box.row,
                                         shape_box.col, n);
      inst.context_mask = BinaryMask(n, n, MaskProvenance::kOracle);
      const double shape_level = brightness(rng);
      double context_level = 0.0;

      if (with_context) {
        const std::size_t context_size = size_dist(rng);
        std::uniform_int_distribution<std::size_t> context_pos(0, n - context_size);
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kPlacementRetries; ++attempt) {
          const Box box{context_pos(rng), context_pos(rng), context_size};
          if (box.separated_from(shape_box, kGlyphMargin)) {
            inst.context_mask = render_glyph(spec.context_glyph, context_size,
                                             box.row, box.col, n);
            placed = true;
            break;
          }
        }
        if (!placed) {
          throw GenerationError("could not place the context glyph for " +
                                inst.id + " after " +
                                std::to_string(kPlacementRetries) + " attempts");
        }
        context_level = brightness(rng);
      }

      std::normal_distribution<double> noise(0.0, spec.noise_std);
      inst.image = Tensor({n, n});
      for (std::size_t px = 0; px < n * n; ++px) {
        double v = 0.0;
        if (inst.intrinsic_mask[px]) v = shape_level;
        if (inst.context_mask[px]) v = context_level;
        if (spec.noise_std > 0.0) v += noise(rng);
        v = std::clamp(v, 0.0, 1.0);
        inst.image[px] = std::round(v * 255.0) / 255.0;
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

void OracleConfig::validate() const {
  for (double v : {binarize_tau, q1_coverage_min, q2_coverage_max}) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError("oracle thresholds must lie in [0, 1]");
    }
  }
}

Verdict oracle_verdict(const AttentionMap& attention,
                       const SyntheticInstance& instance,
                       const OracleConfig& config) {
  config.validate();
  const BinaryMask& intrinsic = instance.intrinsic_mask;
  const BinaryMask focus =
      binarize(upsample(attention, intrinsic.height(), intrinsic.width()),
               config.binarize_tau);
  auto covered = [&focus](const BinaryMask& region) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < region.size(); ++i) hit += region[i] && focus[i];
    return hit;
  };

  Verdict verdict;
  verdict.annotator_id = "oracle";
  const std::size_t intrinsic_count = intrinsic.count();
  verdict.q1_sufficient =
      intrinsic_count > 0 &&
      static_cast<double>(covered(intrinsic)) >=
          config.q1_coverage_min * static_cast<double>(intrinsic_count);
  const std::size_t context_count = instance.context_mask.count();
  verdict.q2_contextual =
      context_count > 0 &&
      static_cast<double>(covered(instance.context_mask)) >=
          config.q2_coverage_max * static_cast<double>(context_count);
  return verdict;
}

BinaryMask oracle_mask(const SyntheticInstance& instance) {
  BinaryMask mask = instance.intrinsic_mask;
  mask.set_provenance(MaskProvenance::kOracle);
  return mask;
}

std::vector<const SyntheticInstance*> select_split(
    const std::vector<SyntheticInstance>& dataset, Split split) {
  std::vector<const SyntheticInstance*> out;
  for (const auto& inst : dataset) {
    if (inst.split == split) out.push_back(&inst);
  }
  return out;
}

}  // namespace gradia
