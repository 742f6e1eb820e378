#pragma once

#include <filesystem>

#include "fuselage/image.h"

namespace fuselage::img {

// PNG input of any bit depth / color type is expanded to 8-bit RGB.
RgbImage read_png(const std::filesystem::path& path);

// Values > 127 in the first channel mark defect pixels.
BinaryMask read_mask(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RgbImage& img);
// Rounds and clamps to 8 bits.
void write_png(const std::filesystem::path& path, const GrayImage& img);
// Defect pixels are written as 255, background as 0.
void write_png(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace fuselage::img
