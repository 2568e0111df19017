#pragma once

// 8-bit grayscale PGM (P5) output for field frames.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lavig/tensor.hpp"

namespace lavig::image {

struct Gray {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// round(255 * clamp((v - lo) / (hi - lo), 0, 1)) for every element of an [H, W] slice.
Gray to_gray(const float* values, int height, int width, float lo, float hi);

/// Images stacked top to bottom (all the same width).
Gray stack_rows(const std::vector<Gray>& rows, int gap = 1);
/// Images placed left to right (all the same height).
Gray stack_cols(const std::vector<Gray>& cols, int gap = 1);

void write_pgm(const std::filesystem::path& path, const Gray& img);
Gray read_pgm(const std::filesystem::path& path);

}  // namespace lavig::image
