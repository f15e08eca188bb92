#include "gradia/attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "gradia/error.hpp"

namespace gradia {

const char* to_string(MaskProvenance provenance) {
  switch (provenance) {
    case MaskProvenance::kHuman:
      return "human";
    case MaskProvenance::kOracle:
      return "oracle";
    case MaskProvenance::kBinarizedAttention:
      return "binarized-attention";
  }
  return "unknown";
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width,
                       MaskProvenance provenance)
    : height_(height),
      width_(width),
      bits_(height * width, 0),
      provenance_(provenance) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width,
                       std::vector<std::uint8_t> bits,
                       MaskProvenance provenance)
    : height_(height),
      width_(width),
      bits_(std::move(bits)),
      provenance_(provenance) {
  if (bits_.size() != height * width) {
    throw InputError("mask bit count does not match " + std::to_string(height) +
                     "x" + std::to_string(width));
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

std::string encode_rle(const BinaryMask& mask) {
  std::ostringstream out;
  out << mask.width() << ' ' << mask.height();
  bool current = false;
  std::size_t run = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != current) {
      out << ' ' << run;
      current = mask[i];
      run = 0;
    }
    ++run;
  }
  out << ' ' << run;
  return out.str();
}

namespace {

std::vector<std::size_t> parse_counts(std::string_view text) {
  std::vector<std::size_t> values;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos == text.size()) break;
    std::size_t value = 0;
    const char* begin = text.data() + pos;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr == begin) {
      throw InputError("malformed RLE: expected a non-negative integer at offset " +
                       std::to_string(pos));
    }
    if (ptr != end && *ptr != ' ') {
      throw InputError("malformed RLE: unexpected character at offset " +
                       std::to_string(ptr - text.data()));
    }
    values.push_back(value);
    pos = static_cast<std::size_t>(ptr - text.data());
  }
  return values;
}

}  // namespace

BinaryMask decode_rle(std::string_view text, MaskProvenance provenance) {
  const std::vector<std::size_t> values = parse_counts(text);
  if (values.size() < 3) {
    throw InputError("malformed RLE: need width, height and at least one run");
  }
  const std::size_t width = values[0];
  const std::size_t height = values[1];
  if (width == 0 || height == 0) {
    throw InputError("malformed RLE: zero mask dimension");
  }
  const std::size_t total = width * height;
  std::vector<std::uint8_t> bits;
  bits.reserve(total);
  bool current = false;
  for (std::size_t i = 2; i < values.size(); ++i) {
    const std::size_t run = values[i];
    if (i > 2 && run == 0) {
      throw InputError("malformed RLE: zero-length run after the first");
    }
    if (run > total - bits.size()) {
      throw InputError("malformed RLE: runs exceed " + std::to_string(width) +
                       "x" + std::to_string(height));
    }
    bits.insert(bits.end(), run, current ? 1 : 0);
    current = !current;
  }
  if (bits.size() != total) {
    throw InputError("malformed RLE: runs cover " + std::to_string(bits.size()) +
                     " of " + std::to_string(total) + " pixels");
  }
  return BinaryMask(height, width, std::move(bits), provenance);
}

Tensor grad_cam(const Tensor& feature_maps, const Tensor& feature_grads) {
  if (feature_maps.rank() != 3 || feature_maps.shape() != feature_grads.shape()) {
    throw InputError("grad_cam: feature maps " + to_string(feature_maps.shape()) +
                     " and gradients " + to_string(feature_grads.shape()) +
                     " must both be (K, u, v)");
  }
  const std::size_t k = feature_maps.dim(0);
  const std::size_t cells = feature_maps.dim(1) * feature_maps.dim(2);
  Tensor raw({feature_maps.dim(1), feature_maps.dim(2)});
  for (std::size_t m = 0; m < k; ++m) {
    const double* grads = feature_grads.data() + m * cells;
    double weight = 0.0;
    for (std::size_t i = 0; i < cells; ++i) weight += grads[i];
    weight /= static_cast<double>(cells);
    const double* maps = feature_maps.data() + m * cells;
    for (std::size_t i = 0; i < cells; ++i) raw[i] += weight * maps[i];
  }
  for (double& v : raw.values()) v = std::max(v, 0.0);
  return raw;
}

Tensor grad_cam(const ForwardTrace& trace, std::size_t class_index) {
  return grad_cam(trace.feature_maps, grad_wrt_features(trace, class_index));
}

AttentionMap normalize(const Tensor& raw, std::size_t class_index,
                       std::string instance_id) {
  AttentionMap map;
  map.grid = raw;
  map.normalized = true;
  map.class_index = class_index;
  map.instance_id = std::move(instance_id);
  if (raw.empty()) return map;
  const auto [lo, hi] = std::minmax_element(raw.values().begin(),
                                            raw.values().end());
  const double low = *lo;
  const double range = *hi - low;
  for (double& v : map.grid.values()) {
    v = range > 0.0 ? (v - low) / range : 0.0;
  }
  return map;
}

Tensor upsample(const AttentionMap& map, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw InputError("upsample: target dimensions must be positive");
  }
  if (map.grid.rank() != 2 || map.grid.empty()) {
    throw InputError("upsample: attention grid must be a non-empty (u, v) map");
  }
  const std::size_t u = map.grid.dim(0);
  const std::size_t v = map.grid.dim(1);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t out, std::size_t in) {
    std::vector<Tap> result(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      result[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return result;
  };
  const std::vector<Tap> rows = taps(height, u);
  const std::vector<Tap> cols = taps(width, v);

  Tensor out({height, width});
  const Tensor& g = map.grid;
  for (std::size_t y = 0; y < height; ++y) {
    const Tap& r = rows[y];
    for (std::size_t x = 0; x < width; ++x) {
      const Tap& c = cols[x];
      const double top = g[r.lo * v + c.lo] * (1.0 - c.frac) + g[r.lo * v + c.hi] * c.frac;
      const double bottom = g[r.hi * v + c.lo] * (1.0 - c.frac) + g[r.hi * v + c.hi] * c.frac;
      out[y * width + x] = top * (1.0 - r.frac) + bottom * r.frac;
    }
  }
  return out;
}

BinaryMask binarize(const Tensor& map, double threshold,
                    MaskProvenance provenance) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InputError("binarize: threshold must lie in [0, 1]");
  }
  if (map.rank() != 2) throw InputError("binarize: expected a 2-d map");
  std::vector<std::uint8_t> bits(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) bits[i] = map[i] >= threshold;
  return BinaryMask(map.dim(0), map.dim(1), std::move(bits), provenance);
}

TargetAttentionGrid mask_to_target_grid(const BinaryMask& mask, std::size_t u,
                                        std::size_t v) {
  if (u == 0 || v == 0 || mask.height() == 0 || mask.width() == 0) {
    throw InputError("mask_to_target_grid: dimensions must be positive");
  }
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  // Work in coordinates scaled by u (rows) and v (cols): cell i spans
  // [i*h, (i+1)*h) and pixel r spans [r*u, (r+1)*u), so overlaps are integers.
  auto overlap = [](std::size_t cell, std::size_t cell_len, std::size_t pixel,
                    std::size_t pixel_len) -> std::size_t {
    const std::size_t a0 = cell * cell_len;
    const std::size_t a1 = a0 + cell_len;
    const std::size_t b0 = pixel * pixel_len;
    const std::size_t b1 = b0 + pixel_len;
    const std::size_t lo = std::max(a0, b0);
    const std::size_t hi = std::min(a1, b1);
    return hi > lo ? hi - lo : 0;
  };

  TargetAttentionGrid target;
  target.grid = Tensor({u, v});
  const double cell_area = static_cast<double>(h * w);
  for (std::size_t i = 0; i < u; ++i) {
    const std::size_t r0 = (i * h) / u;
    const std::size_t r1 = std::min(h, ((i + 1) * h + u - 1) / u);
    for (std::size_t j = 0; j < v; ++j) {
      const std::size_t c0 = (j * w) / v;
      const std::size_t c1 = std::min(w, ((j + 1) * w + v - 1) / v);
      std::size_t covered = 0;
      for (std::size_t r = r0; r < r1; ++r) {
        const std::size_t oy = overlap(i, h, r, u);
        if (oy == 0) continue;
        for (std::size_t c = c0; c < c1; ++c) {
          if (mask.at(r, c)) covered += oy * overlap(j, w, c, v);
        }
      }
      target.grid[i * v + j] = static_cast<double>(covered) / cell_area;
    }
  }
  return target;
}

ad::Var grad_cam_batch(const TapedForward& tape,
                       const std::vector<std::size_t>& class_indices,
                       bool higher_order) {
  ad::Var grads = grad_wrt_features(tape, class_indices, higher_order);
  const Shape& s = tape.features.shape();
  const std::size_t n = s[0];
  const std::size_t k = s[1];
  const std::size_t cells = s[2] * s[3];
  ad::Var weights = ad::scale(ad::sum_cols(ad::reshape(grads, {n * k, cells})),
                              1.0 / static_cast<double>(cells));
  ad::Var spread = ad::reshape(ad::broadcast_cols(weights, cells), s);
  ad::Var combined = ad::sum_channels(ad::mul(spread, tape.features));
  return ad::relu(ad::reshape(combined, {n, cells}));
}

ad::Var normalize_rows(const ad::Var& raw) {
  const std::size_t cells = raw.shape().at(1);
  ad::Var low = ad::min_rows(raw);
  ad::Var high = ad::max_rows(raw);
  ad::Var inv_range = ad::reciprocal_or_zero(ad::sub(high, low));
  return ad::mul(ad::sub(raw, ad::broadcast_cols(low, cells)),
                 ad::broadcast_cols(inv_range, cells));
}

}  // namespace gradia
