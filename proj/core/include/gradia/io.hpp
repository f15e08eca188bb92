#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gradia/model.hpp"
#include "gradia/synthetic.hpp"
#include "gradia/tensor.hpp"

namespace gradia {

// 8-bit grayscale PNG of an (H, W) image with values in [0, 1].
std::vector<std::uint8_t> encode_png_gray(const Tensor& image);
// 8-bit RGB PNG; `rgb` holds height*width*3 bytes.
std::vector<std::uint8_t> encode_png_rgb(std::span<const std::uint8_t> rgb,
                                         std::size_t height, std::size_t width);
// Decodes any PNG to an (H, W) grayscale tensor with values k/255.
Tensor decode_png_gray(std::span<const std::uint8_t> bytes);

// Maps a [0, 1] map to an RGB heatmap (blue -> red).
std::vector<std::uint8_t> heatmap_rgb(const Tensor& map);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes images/<id>.png plus manifest.jsonl (one JSON record per line with
// id, path, label, split, intrinsic_mask_rle, context_mask_rle).
void write_dataset(const std::vector<SyntheticInstance>& dataset,
                   const std::filesystem::path& directory);
std::vector<SyntheticInstance> read_dataset(const std::filesystem::path& directory);

// Flat binary archive: "GRDP" magic, u32 version, u32 tensor count, then per
// tensor a u32 rank and u64 dims, then every tensor's doubles row-major.
// All integers and doubles little-endian.
std::vector<std::uint8_t> serialize_parameters(const Parameters& params);
Parameters deserialize_parameters(std::span<const std::uint8_t> bytes,
                                  const ModelConfig& config);
void save_parameters(const Parameters& params, const std::filesystem::path& path);
Parameters load_parameters(const std::filesystem::path& path,
                           const ModelConfig& config);

}  // namespace gradia
