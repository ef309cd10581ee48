#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gust/geometry.hpp"

namespace gust {

struct TooFewRealPoints : std::runtime_error {
  explicit TooFewRealPoints(const std::string& what) : std::runtime_error(what) {}
};
struct PerplexityTooLarge : std::runtime_error {
  explicit PerplexityTooLarge(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateVariance : std::runtime_error {
  explicit DegenerateVariance(const std::string& what) : std::runtime_error(what) {}
};

enum class EmbeddingKind { Tsne, Pca };
enum class SourceTag { Real, Generated };

struct EmbeddedSet {
  std::vector<std::array<double, 3>> points;
  SourceTag source = SourceTag::Real;
  std::uint64_t provenance = 0;  // embedding config hash
};

struct MetricConfig {
  int k = 5;
  double perplexity = 10.0;
  EmbeddingKind embedding = EmbeddingKind::Pca;
  std::uint64_t seed = 0;
};

// Projection onto the top-3 principal components of the row set.
std::vector<std::array<double, 3>> pca3(const std::vector<std::vector<double>>& rows);

// Exact (O(n^2)) t-SNE to 3 dimensions: early exaggeration 12 for 250
// iterations, learning rate 200, momentum 0.5 -> 0.8 at iteration 250, 1000
// iterations, seeded N(0, 1e-4) init.
std::vector<std::array<double, 3>> tsne3(const std::vector<std::vector<double>>& rows,
                                         double perplexity, std::uint64_t seed);

// Joint embedding of real and generated cells (single fit on the union).
std::pair<EmbeddedSet, EmbeddedSet> embed_cells(const std::vector<BinaryCell>& real_cells,
                                                const std::vector<BinaryCell>& gen_cells,
                                                const MetricConfig& cfg);

// kNN-ball metrics; NND_k(X_i) is the distance from X_i to its k-th nearest
// other real point, ball membership uses <=.
double density(const EmbeddedSet& real, const EmbeddedSet& gen, int k);
double coverage(const EmbeddedSet& real, const EmbeddedSet& gen, int k);

// Exact empirical 1-D Wasserstein distance (merged-CDF integral).
double wasserstein1(std::vector<double> a, std::vector<double> b);

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

// Gaussian-kernel KDE on 256 grid points spanning data +/- 3h; bandwidth <= 0
// selects Silverman's rule (zero-variance samples fall back to a fixed h).
KdeCurve kde_curve(const std::vector<double>& samples, double bandwidth = 0.0,
                   int grid_points = 256);

// Two-sided Welch's t-test p-value (Welch-Satterthwaite dof).
double welch_p_value(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace gust
