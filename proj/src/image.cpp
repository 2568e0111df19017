#include "lavig/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace lavig::image {

Gray to_gray(const float* values, int height, int width, float lo, float hi) {
  if (!(hi > lo)) throw std::invalid_argument("image value range must be increasing");
  Gray g{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height * width))};
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    const double u = std::clamp((double(values[i]) - lo) / (double(hi) - lo), 0.0, 1.0);
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * u));
  }
  return g;
}

Gray stack_rows(const std::vector<Gray>& rows, int gap) {
  if (rows.empty()) return {};
  Gray out{0, rows.front().width, {}};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].width != out.width) throw std::invalid_argument("stacked rows differ in width");
    if (r > 0) out.pixels.insert(out.pixels.end(), static_cast<std::size_t>(gap * out.width), 255);
    out.pixels.insert(out.pixels.end(), rows[r].pixels.begin(), rows[r].pixels.end());
    out.height += rows[r].height + (r > 0 ? gap : 0);
  }
  return out;
}

Gray stack_cols(const std::vector<Gray>& cols, int gap) {
  if (cols.empty()) return {};
  const int H = cols.front().height;
  int W = 0;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].height != H) throw std::invalid_argument("stacked columns differ in height");
    W += cols[c].width + (c > 0 ? gap : 0);
  }
  Gray out{H, W, std::vector<std::uint8_t>(static_cast<std::size_t>(H * W), 255)};
  int x0 = 0;
  for (const auto& img : cols) {
    for (int y = 0; y < H; ++y)
      std::copy_n(img.pixels.begin() + y * img.width, img.width, out.pixels.begin() + y * W + x0);
    x0 += img.width + gap;
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Gray& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Gray read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int maxval = 0;
  Gray g;
  f >> magic >> g.width >> g.height >> maxval;
  if (magic != "P5" || maxval != 255 || g.width <= 0 || g.height <= 0)
    throw std::runtime_error("not an 8-bit binary PGM: " + path.string());
  f.get();
  g.pixels.resize(static_cast<std::size_t>(g.width * g.height));
  f.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (!f) throw std::runtime_error("truncated PGM: " + path.string());
  return g;
}

}  // namespace lavig::image
