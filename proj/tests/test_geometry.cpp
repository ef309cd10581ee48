#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "gust/geometry.hpp"
#include "gust/rng.hpp"

using namespace gust;

namespace {

// O(N^2) all-pairs scan: distance from each pixel center to the nearest
// opposite-phase pixel center. Independent of the production EDT path.
SDFGrid brute_sdf(const BinaryCell& cell) {
  SDFGrid out;
  out.height = cell.height;
  out.width = cell.width;
  out.values.resize(cell.values.size());
  for (int r = 0; r < cell.height; ++r) {
    for (int c = 0; c < cell.width; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (int rr = 0; rr < cell.height; ++rr)
        for (int cc = 0; cc < cell.width; ++cc)
          if (cell.at(rr, cc) != cell.at(r, c))
            best = std::min(best, std::hypot(double(rr - r), double(cc - c)));
      out.at(r, c) = cell.at(r, c) ? best : -best;
    }
  }
  return out;
}

// Double-loop window maximum, no separability tricks.
BinaryCell brute_max_filter(const BinaryCell& cell, int size) {
  int rad = (size - 1) / 2;
  BinaryCell out = cell;
  for (int r = 0; r < cell.height; ++r)
    for (int c = 0; c < cell.width; ++c) {
      std::uint8_t m = 0;
      for (int dr = -rad; dr <= rad; ++dr)
        for (int dc = -rad; dc <= rad; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= cell.height || cc < 0 || cc >= cell.width) continue;
          m = std::max(m, cell.at(rr, cc));
        }
      out.at(r, c) = m;
    }
  return out;
}

BinaryCell random_cell(int h, int w, double p, RngStream& rng) {
  BinaryCell cell = make_cell(h, w);
  for (auto& v : cell.values) v = rng.uniform() < p ? 1 : 0;
  return cell;
}

bool subset(const BinaryCell& a, const BinaryCell& b) {
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (a.values[i] && !b.values[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("to_sdf: all-material saturates positive") {
  BinaryCell cell = make_cell(8, 8, 1);
  SDFGrid sdf = to_sdf(cell);
  for (double v : sdf.values) CHECK(v >= 0.5);
}

TEST_CASE("to_sdf: single material pixel in 9x9") {
  BinaryCell cell = make_cell(9, 9, 0);
  cell.at(4, 4) = 1;
  SDFGrid sdf = to_sdf(cell);
  CHECK(sdf.at(4, 4) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sdf.at(4, 6) == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("to_sdf matches brute-force scan on random cells") {
  RngStream rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    int h = 5 + int(rng.uniform_index(28));
    int w = 5 + int(rng.uniform_index(28));
    BinaryCell cell = random_cell(h, w, 0.3 + 0.4 * rng.uniform(), rng);
    SDFGrid got = to_sdf(cell);
    SDFGrid want = brute_sdf(cell);
    bool two_phase = false;
    for (std::size_t i = 1; i < cell.values.size(); ++i)
      if (cell.values[i] != cell.values[0]) two_phase = true;
    if (!two_phase) continue;
    for (std::size_t i = 0; i < got.values.size(); ++i)
      CHECK(std::abs(got.values[i] - want.values[i]) < 1e-9);
  }
}

TEST_CASE("to_sdf / to_binary round trip") {
  RngStream rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    BinaryCell cell = random_cell(12, 17, 0.5, rng);
    cell.at(0, 0) = 1;
    cell.at(3, 3) = 0;  // ensure both phases
    CHECK(to_binary(to_sdf(cell)) == cell);
  }
}

TEST_CASE("to_binary sign rule and limits") {
  SDFGrid sdf;
  sdf.height = 4;
  sdf.width = 4;
  sdf.values.assign(16, 2.5);
  BinaryCell ones = to_binary(sdf);
  CHECK(volume_fraction(ones) == 1.0);
  BinaryCell none = to_binary(sdf, std::numeric_limits<double>::infinity());
  CHECK(volume_fraction(none) == 0.0);
}

TEST_CASE("to_binary recovers a disk from its SDF") {
  // field = r - |p - c|: the exact SDF of a disk of radius r
  const int n = 21;
  const double radius = 6.3, cr = 10.0, cc = 10.0;
  SDFGrid sdf;
  sdf.height = n;
  sdf.width = n;
  sdf.values.resize(n * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      sdf.at(r, c) = radius - std::hypot(r - cr, c - cc);
  BinaryCell disk = to_binary(sdf);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      CHECK(disk.at(r, c) == (std::hypot(r - cr, c - cc) < radius ? 1 : 0));
}

TEST_CASE("dilate: scale 1 is the identity") {
  RngStream rng(5);
  BinaryCell cell = random_cell(16, 16, 0.4, rng);
  CHECK(dilate(cell, {1}) == cell);
  CHECK(erode(cell, {1}) == cell);
}

TEST_CASE("dilate: single pixel becomes kernel support") {
  BinaryCell cell = make_cell(9, 9, 0);
  cell.at(4, 4) = 1;
  BinaryCell out = dilate(cell, {3});
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c)
      CHECK(out.at(r, c) == ((std::abs(r - 4) <= 1 && std::abs(c - 4) <= 1) ? 1 : 0));
}

TEST_CASE("erode: 3x3 block shrinks to center") {
  BinaryCell cell = make_cell(9, 9, 0);
  for (int r = 3; r <= 5; ++r)
    for (int c = 3; c <= 5; ++c) cell.at(r, c) = 1;
  BinaryCell out = erode(cell, {3});
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) CHECK(out.at(r, c) == ((r == 4 && c == 4) ? 1 : 0));
}

TEST_CASE("dilate matches brute-force window maximum on 64x64") {
  RngStream rng(99);
  BinaryCell cell = random_cell(64, 64, 0.5, rng);
  CHECK(dilate(cell, {5}) == brute_max_filter(cell, 5));
}

TEST_CASE("morphological duality is bit-exact") {
  RngStream rng(42);
  for (int size : {1, 3, 5, 7}) {
    BinaryCell cell = random_cell(20, 31, 0.5, rng);
    CHECK(erode(cell, {size}) == complement(dilate(complement(cell), {size})));
  }
}

TEST_CASE("dilate is extensive and monotone in kernel size") {
  RngStream rng(7);
  BinaryCell cell = random_cell(24, 24, 0.3, rng);
  BinaryCell d3 = dilate(cell, {3}), d5 = dilate(cell, {5}), d7 = dilate(cell, {7});
  CHECK(subset(cell, d3));
  CHECK(subset(d3, d5));
  CHECK(subset(d5, d7));
  BinaryCell e3 = erode(cell, {3});
  CHECK(subset(e3, cell));
}

TEST_CASE("resample_bilinear: nodes, midpoints, clamping") {
  SDFGrid f;
  f.height = 4;
  f.width = 5;
  f.values.resize(20);
  RngStream rng(3);
  for (auto& v : f.values) v = rng.normal();

  CHECK(bilinear_at(f, 2.0, 3.0) == f.at(2, 3));
  CHECK(bilinear_at(f, 1.0, 2.5) == doctest::Approx(0.5 * (f.at(1, 2) + f.at(1, 3))).epsilon(1e-15));
  CHECK(bilinear_at(f, -5.0, -5.0) == f.at(0, 0));
  CHECK(bilinear_at(f, 100.0, 100.0) == f.at(3, 4));

  std::vector<std::array<double, 2>> pts = {{2.0, 3.0}, {-5.0, -5.0}};
  auto vals = resample_bilinear(f, pts);
  CHECK(vals[0] == f.at(2, 3));
  CHECK(vals[1] == f.at(0, 0));
}

TEST_CASE("volume_fraction counting") {
  CHECK(volume_fraction(make_cell(8, 8, 1)) == 1.0);
  CHECK(volume_fraction(make_cell(8, 8, 0)) == 0.0);
  BinaryCell half = make_cell(64, 64, 0);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 64; ++c) half.at(r, c) = 1;
  CHECK(volume_fraction(half) == 0.5);
}

TEST_CASE("validation rejects malformed inputs") {
  BinaryCell bad = make_cell(3, 8, 0);
  CHECK_THROWS_AS(validate_cell(bad), std::invalid_argument);
  BinaryCell cell = make_cell(8, 8, 0);
  cell.values[5] = 2;
  CHECK_THROWS_AS(validate_cell(cell), std::invalid_argument);
  CHECK_THROWS_AS(validate_scale({2}), std::invalid_argument);
  CHECK_THROWS_AS(validate_scale({-1}), std::invalid_argument);
}
