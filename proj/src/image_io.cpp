#include "desimpl/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "desimpl/detection_io.hpp"

namespace desimpl {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  auto p = stem;
  p += suffix;
  return p;
}

}  // namespace

void write_image_raw(const std::filesystem::path& stem, const ImageTensor& image) {
  std::string bytes;
  bytes.reserve(image.size() * 4);
  for (double v : image.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int shift = 0; shift < 32; shift += 8) bytes.push_back(static_cast<char>((bits >> shift) & 0xff));
  }
  write_file_atomic(with_suffix(stem, ".bin"), bytes);
  nlohmann::json sidecar{{"width", image.width()}, {"height", image.height()}, {"channels", image.channels()}};
  write_file_atomic(with_suffix(stem, ".json"), sidecar.dump() + "\n");
}

ImageTensor read_image_raw(const std::filesystem::path& stem) {
  const auto json_path = with_suffix(stem, ".json");
  std::ifstream meta(json_path);
  if (!meta) throw IoError(fmt::format("cannot open {}", json_path.string()));
  nlohmann::json sidecar;
  try {
    meta >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", json_path.string(), e.what()));
  }
  const int width = sidecar.value("width", 0);
  const int height = sidecar.value("height", 0);
  const int channels = sidecar.value("channels", 0);
  ImageTensor image(width, height, channels);

  const auto bin_path = with_suffix(stem, ".bin");
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError(fmt::format("cannot open {}", bin_path.string()));
  std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() != image.size() * 4) {
    throw ValidationError(fmt::format("{}: expected {} bytes, found {}", bin_path.string(),
                                      image.size() * 4, bytes.size()));
  }
  auto values = image.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return image;
}

void write_pnm(const std::filesystem::path& path, const ImageTensor& image) {
  std::string out = fmt::format("{}\n{} {}\n255\n", image.channels() == 3 ? "P6" : "P5",
                                image.width(), image.height());
  for (double v : image.values()) {
    out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_file_atomic(path, out);
}

}  // namespace desimpl
