#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace gust {

// H x W binary material/void grid, row-major. The universal geometry
// representation for unit cells.
struct BinaryCell {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  // 0 = void, 1 = material

  std::uint8_t& at(int r, int c) { return values[std::size_t(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return values[std::size_t(r) * width + c]; }
  bool operator==(const BinaryCell&) const = default;
};

// Signed distance field in pixel units: positive inside material, negative in
// void, magnitude = Euclidean distance between pixel centers.
struct SDFGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double& at(int r, int c) { return values[std::size_t(r) * width + c]; }
  double at(int r, int c) const { return values[std::size_t(r) * width + c]; }
};

// Square structuring element; size is odd so the anchor sits on the center
// pixel and size 1 is the identity.
struct MorphScale {
  int size = 1;
};

BinaryCell make_cell(int height, int width, std::uint8_t fill = 0);
void validate_cell(const BinaryCell& cell);
void validate_scale(MorphScale scale);

// Exact Euclidean distance transform (two-pass lower-envelope method).
// Single-phase inputs saturate to hypot(H, W).
SDFGrid to_sdf(const BinaryCell& cell);

// output(p) = 1 iff sdf(p) > threshold
BinaryCell to_binary(const SDFGrid& sdf, double threshold = 0.0);

BinaryCell dilate(const BinaryCell& cell, MorphScale scale);
BinaryCell erode(const BinaryCell& cell, MorphScale scale);
BinaryCell complement(const BinaryCell& cell);

// Bilinear interpolation at (row, col); out-of-range coordinates clamp to the
// border pixel (edge replication).
double bilinear_at(const SDFGrid& field, double r, double c);
std::vector<double> resample_bilinear(const SDFGrid& field,
                                      std::span<const std::array<double, 2>> points);

double volume_fraction(const BinaryCell& cell);

}  // namespace gust
