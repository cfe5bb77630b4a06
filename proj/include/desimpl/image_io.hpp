#pragma once

#include <filesystem>

#include "desimpl/adversarial_aug.hpp"

namespace desimpl {

/// Writes `<stem>.bin` (float32 little-endian values, row-major, channels
/// interleaved) and `<stem>.json` ({"width":..,"height":..,"channels":..}).
void write_image_raw(const std::filesystem::path& stem, const ImageTensor& image);
ImageTensor read_image_raw(const std::filesystem::path& stem);

/// Binary PGM (1 channel) or PPM (3 channels), 8-bit, for eyeballing.
void write_pnm(const std::filesystem::path& path, const ImageTensor& image);

}  // namespace desimpl
