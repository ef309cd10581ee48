#include "gust/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gust {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform over a sampled function f (Felzenszwalb &
// Huttenlocher lower-envelope scan). Scratch arrays are caller-provided.
void dt1d(const double* f, int n, double* d, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      double denom = 2.0 * q - 2.0 * v[k];
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / denom;
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    double dq = double(q) - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared distance from every pixel to the nearest pixel where site==phase.
std::vector<double> squared_edt(const BinaryCell& cell, std::uint8_t phase) {
  const int h = cell.height, w = cell.width;
  const double big = 1e30;
  std::vector<double> g(std::size_t(h) * w);
  // columns first
  {
    std::vector<double> f(h), d(h), z(h + 1);
    std::vector<int> v(h);
    for (int c = 0; c < w; ++c) {
      for (int r = 0; r < h; ++r) f[r] = cell.at(r, c) == phase ? 0.0 : big;
      dt1d(f.data(), h, d.data(), v.data(), z.data());
      for (int r = 0; r < h; ++r) g[std::size_t(r) * w + c] = d[r];
    }
  }
  // then rows
  {
    std::vector<double> f(w), d(w), z(w + 1);
    std::vector<int> v(w);
    std::vector<double> out(std::size_t(h) * w);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) f[c] = g[std::size_t(r) * w + c];
      dt1d(f.data(), w, d.data(), v.data(), z.data());
      for (int c = 0; c < w; ++c) out[std::size_t(r) * w + c] = d[c];
    }
    return out;
  }
}

// Separable sliding-window extremum with clipped windows.
BinaryCell window_extremum(const BinaryCell& cell, int radius, bool take_max) {
  const int h = cell.height, w = cell.width;
  BinaryCell tmp = cell, out = cell;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int lo = std::max(0, c - radius), hi = std::min(w - 1, c + radius);
      std::uint8_t x = take_max ? 0 : 1;
      for (int k = lo; k <= hi; ++k) {
        std::uint8_t v = cell.at(r, k);
        x = take_max ? std::max(x, v) : std::min(x, v);
      }
      tmp.at(r, c) = x;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int lo = std::max(0, r - radius), hi = std::min(h - 1, r + radius);
      std::uint8_t x = take_max ? 0 : 1;
      for (int k = lo; k <= hi; ++k) {
        std::uint8_t v = tmp.at(k, c);
        x = take_max ? std::max(x, v) : std::min(x, v);
      }
      out.at(r, c) = x;
    }
  }
  return out;
}

}  // namespace

BinaryCell make_cell(int height, int width, std::uint8_t fill) {
  BinaryCell cell;
  cell.height = height;
  cell.width = width;
  cell.values.assign(std::size_t(height) * width, fill);
  return cell;
}

void validate_cell(const BinaryCell& cell) {
  if (cell.height < 4 || cell.width < 4)
    throw std::invalid_argument("BinaryCell: dimensions must be at least 4x4");
  if (cell.values.size() != std::size_t(cell.height) * cell.width)
    throw std::invalid_argument("BinaryCell: value count does not match declared size");
  for (std::uint8_t v : cell.values)
    if (v > 1) throw std::invalid_argument("BinaryCell: values must be 0 or 1");
}

void validate_scale(MorphScale scale) {
  if (scale.size < 1 || scale.size % 2 == 0)
    throw std::invalid_argument("MorphScale: size must be a positive odd integer");
}

SDFGrid to_sdf(const BinaryCell& cell) {
  validate_cell(cell);
  const int h = cell.height, w = cell.width;
  SDFGrid sdf;
  sdf.height = h;
  sdf.width = w;
  sdf.values.resize(std::size_t(h) * w);

  std::size_t n_mat = 0;
  for (std::uint8_t v : cell.values) n_mat += v;
  const double sat = std::hypot(double(h), double(w));
  if (n_mat == cell.values.size()) {
    std::fill(sdf.values.begin(), sdf.values.end(), sat);
    return sdf;
  }
  if (n_mat == 0) {
    std::fill(sdf.values.begin(), sdf.values.end(), -sat);
    return sdf;
  }

  std::vector<double> d2_to_void = squared_edt(cell, 0);
  std::vector<double> d2_to_mat = squared_edt(cell, 1);
  for (std::size_t i = 0; i < sdf.values.size(); ++i) {
    sdf.values[i] = cell.values[i] ? std::sqrt(d2_to_void[i]) : -std::sqrt(d2_to_mat[i]);
  }
  return sdf;
}

BinaryCell to_binary(const SDFGrid& sdf, double threshold) {
  BinaryCell cell;
  cell.height = sdf.height;
  cell.width = sdf.width;
  cell.values.resize(sdf.values.size());
  for (std::size_t i = 0; i < sdf.values.size(); ++i)
    cell.values[i] = sdf.values[i] > threshold ? 1 : 0;
  return cell;
}

BinaryCell dilate(const BinaryCell& cell, MorphScale scale) {
  validate_cell(cell);
  validate_scale(scale);
  if (scale.size == 1) return cell;
  return window_extremum(cell, (scale.size - 1) / 2, /*take_max=*/true);
}

BinaryCell erode(const BinaryCell& cell, MorphScale scale) {
  validate_cell(cell);
  validate_scale(scale);
  if (scale.size == 1) return cell;
  return window_extremum(cell, (scale.size - 1) / 2, /*take_max=*/false);
}

BinaryCell complement(const BinaryCell& cell) {
  BinaryCell out = cell;
  for (auto& v : out.values) v = v ? 0 : 1;
  return out;
}

double bilinear_at(const SDFGrid& field, double r, double c) {
  const int h = field.height, w = field.width;
  r = std::clamp(r, 0.0, double(h - 1));
  c = std::clamp(c, 0.0, double(w - 1));
  int r0 = int(std::floor(r));
  int c0 = int(std::floor(c));
  int r1 = std::min(r0 + 1, h - 1);
  int c1 = std::min(c0 + 1, w - 1);
  double fr = r - r0, fc = c - c0;
  double top = field.at(r0, c0) * (1.0 - fc) + field.at(r0, c1) * fc;
  double bot = field.at(r1, c0) * (1.0 - fc) + field.at(r1, c1) * fc;
  return top * (1.0 - fr) + bot * fr;
}

std::vector<double> resample_bilinear(const SDFGrid& field,
                                      std::span<const std::array<double, 2>> points) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(bilinear_at(field, p[0], p[1]));
  return out;
}

double volume_fraction(const BinaryCell& cell) {
  validate_cell(cell);
  std::size_t n = 0;
  for (std::uint8_t v : cell.values) n += v;
  return double(n) / double(cell.values.size());
}

}  // namespace gust
