#include "gradia/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "gradia/attention.hpp"
#include "gradia/error.hpp"

namespace gradia {
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "parameter archives assume a little-endian host");

std::vector<std::uint8_t> encode_png(png_uint_32 format,
                                     std::span<const std::uint8_t> pixels,
                                     std::size_t height, std::size_t width) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0,
                                 nullptr)) {
    throw Error(std::string("PNG encoding failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0,
                                 nullptr)) {
    throw Error(std::string("PNG encoding failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray(const Tensor& image) {
  if (image.rank() != 2) throw InputError("PNG export expects an (H, W) image");
  std::vector<std::uint8_t> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    pixels[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  return encode_png(PNG_FORMAT_GRAY, pixels, image.dim(0), image.dim(1));
}

std::vector<std::uint8_t> encode_png_rgb(std::span<const std::uint8_t> rgb,
                                         std::size_t height, std::size_t width) {
  if (rgb.size() != height * width * 3) {
    throw InputError("RGB buffer size does not match image dimensions");
  }
  return encode_png(PNG_FORMAT_RGB, rgb, height, width);
}

Tensor decode_png_gray(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(std::string("PNG decoding failed: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    throw DataError(std::string("PNG decoding failed: ") + image.message);
  }
  Tensor out({image.height, image.width});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = pixels[i] / 255.0;
  return out;
}

std::vector<std::uint8_t> heatmap_rgb(const Tensor& map) {
  std::vector<std::uint8_t> rgb(map.size() * 3);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double t = std::clamp(map[i], 0.0, 1.0);
    // Piecewise-linear jet.
    const double r = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
    rgb[3 * i] = static_cast<std::uint8_t>(std::lround(r * 255.0));
    rgb[3 * i + 1] = static_cast<std::uint8_t>(std::lround(g * 255.0));
    rgb[3 * i + 2] = static_cast<std::uint8_t>(std::lround(b * 255.0));
  }
  return rgb;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                             text.size()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_dataset(const std::vector<SyntheticInstance>& dataset,
                   const fs::path& directory) {
  fs::create_directories(directory / "images");
  std::ostringstream manifest;
  for (const auto& inst : dataset) {
    const std::string relative = "images/" + inst.id + ".png";
    write_file(directory / relative, encode_png_gray(inst.image));
    nlohmann::ordered_json record;
    record["id"] = inst.id;
    record["path"] = relative;
    record["label"] = inst.label;
    record["split"] = to_string(inst.split);
    record["intrinsic_mask_rle"] = encode_rle(inst.intrinsic_mask);
    record["context_mask_rle"] = encode_rle(inst.context_mask);
    manifest << record.dump() << '\n';
  }
  write_text(directory / kManifestName, manifest.str());
}

std::vector<SyntheticInstance> read_dataset(const fs::path& directory) {
  const fs::path manifest_path = directory / kManifestName;
  if (!fs::exists(manifest_path)) {
    throw DataError("dataset manifest not found: " + manifest_path.string());
  }
  std::istringstream lines(read_text(manifest_path));
  std::vector<SyntheticInstance> dataset;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto record = nlohmann::json::parse(line);
      SyntheticInstance inst;
      inst.id = record.at("id").get<std::string>();
      inst.label = record.at("label").get<std::size_t>();
      const auto split = parse_split(record.at("split").get<std::string>());
      if (!split) throw DataError("unknown split");
      inst.split = *split;
      inst.image = decode_png_gray(
          read_file(directory / record.at("path").get<std::string>()));
      inst.intrinsic_mask = decode_rle(record.at("intrinsic_mask_rle").get<std::string>(),
                                       MaskProvenance::kOracle);
      inst.context_mask = decode_rle(record.at("context_mask_rle").get<std::string>(),
                                     MaskProvenance::kOracle);
      dataset.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": " + e.what());
    }
  }
  return dataset;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (offset_ + sizeof(T) > bytes_.size()) {
      throw DataError("parameter archive is truncated");
    }
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  bool done() const { return offset_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

constexpr char kMagic[4] = {'G', 'R', 'D', 'P'};
constexpr std::uint32_t kArchiveVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_parameters(const Parameters& params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  }
  for (const auto& t : params.tensors) {
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

Parameters deserialize_parameters(std::span<const std::uint8_t> bytes,
                                  const ModelConfig& config) {
  Reader reader(bytes);
  for (char c : kMagic) {
    if (reader.get<char>() != c) throw DataError("not a parameter archive");
  }
  if (reader.get<std::uint32_t>() != kArchiveVersion) {
    throw DataError("unsupported parameter archive version");
  }
  Parameters params = init_model(config, 0);
  const auto count = reader.get<std::uint32_t>();
  if (count != params.tensors.size()) {
    throw DataError("archive holds " + std::to_string(count) +
                    " tensors, model expects " +
                    std::to_string(params.tensors.size()));
  }
  for (auto& t : params.tensors) {
    Shape shape(reader.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(reader.get<std::uint64_t>());
    if (shape != t.shape()) {
      throw DataError("archive tensor shape " + to_string(shape) +
                      " does not match model " + to_string(t.shape()));
    }
  }
  for (auto& t : params.tensors) {
    for (double& v : t.values()) v = reader.get<double>();
  }
  if (!reader.done()) throw DataError("trailing bytes in parameter archive");
  return params;
}

void save_parameters(const Parameters& params, const fs::path& path) {
  write_file(path, serialize_parameters(params));
}

Parameters load_parameters(const fs::path& path, const ModelConfig& config) {
  return deserialize_parameters(read_file(path), config);
}

}  // namespace gradia
