#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sketchseg/numeric.hpp"

namespace sketchseg {

// 8-bit grayscale PNG as a matrix of byte values.
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> read_png_gray8(
    const std::string& path);

void write_png_gray8(
    const std::string& path,
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& image);

// Interleaved RGB, row-major, 3 bytes per pixel.
void write_png_rgb8(const std::string& path, Index height, Index width,
                    const std::vector<std::uint8_t>& rgb);

}  // namespace sketchseg
