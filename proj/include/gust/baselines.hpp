#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "gust/geometry.hpp"
#include "gust/perturb.hpp"
#include "gust/rng.hpp"

namespace gust {

struct EigFailure : std::runtime_error {
  explicit EigFailure(const std::string& what) : std::runtime_error(what) {}
};

// Squared-exponential Gaussian random field over a uniform grid in [0,1]^2,
// sampled through a truncated Karhunen-Loeve expansion.
struct GRFConfig {
  double ell1 = 0.1;   // correlation length along axis 1 (columns)
  double ell2 = 0.1;   // correlation length along axis 2 (rows)
  double sigma2 = 1.5; // field variance, SDF pixel units
  int modes = 64;
  int grid = 32;       // evaluation lattice side
};

void validate_grf(const GRFConfig& cfg);

struct DenseMatrix {
  int n = 0;
  std::vector<double> a;  // row-major n x n

  double& at(int i, int j) { return a[std::size_t(i) * n + j]; }
  double at(int i, int j) const { return a[std::size_t(i) * n + j]; }
};

struct KLBasis {
  std::vector<double> eigenvalues;          // descending, clamped at 0
  std::vector<std::vector<double>> modes;   // orthonormal eigenvectors
  int grid = 0;                             // lattice side the basis lives on
};

DenseMatrix grf_covariance(const GRFConfig& cfg);

// Top-M eigenpairs by cyclic Jacobi sweeps (tolerance 1e-10, max 1e4 sweeps).
KLBasis kl_decompose(const DenseMatrix& C, int M);
KLBasis kl_basis(const GRFConfig& cfg);

std::vector<double> grf_realize(const KLBasis& basis, RngStream& rng);

BinaryCell grf_perturb(const BinaryCell& nominal, const GRFConfig& cfg, RngStream& rng);
BinaryCell grf_perturb(const BinaryCell& nominal, const KLBasis& basis, RngStream& rng);

// Gaussian KDE negative log-likelihood of candidates under refs, cells
// flattened to {0,1}^d; log-sum-exp stabilized.
double kde_neg_loglik(const std::vector<BinaryCell>& candidates,
                      const std::vector<BinaryCell>& refs, double h);

// Median pairwise distance among refs divided by sqrt(2).
double median_bandwidth(const std::vector<BinaryCell>& refs);

// Half the median displacement of one dilation step (scale 1 -> 3) across the
// nominals. Resolves likelihood differences at the scale the fit decides on;
// the plain median heuristic over-smooths and drifts to extreme scales.
double morph_bandwidth_heuristic(const std::vector<BinaryCell>& nominals);

struct DEConfig {
  int pop_size = 15;
  double weight = 0.7;     // differential weight F
  double crossover = 0.9;  // CR
  int max_gen = 60;
  std::uint64_t seed = 0;
  // optional explicit initial population (size pop_size); empty = uniform
  std::vector<std::vector<double>> init_population;
};

struct DEResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> trace;  // best value per generation
  bool stalled = false;       // no improvement for 50 consecutive generations
};

// DE/rand/1/bin with bound clamping; deterministic under seed.
DEResult differential_evolution(const std::function<double(const std::vector<double>&)>& objective,
                                const std::vector<double>& lower,
                                const std::vector<double>& upper, const DEConfig& cfg);

struct MorphFit {
  MorphScale alpha_hat;  // dilation
  MorphScale beta_hat;   // erosion
  double neg_loglik_dilate = 0.0;
  double neg_loglik_erode = 0.0;
  double bandwidth = 0.0;
  bool stalled = false;
};

// MLE of dilation/erosion scales over odd sizes in [1, 101]; continuous DE
// variables are rounded to the nearest odd integer inside the objective.
// h <= 0 selects the median-heuristic bandwidth.
MorphFit fit_morph_scales(const std::vector<BinaryCell>& nominals,
                          const std::vector<BinaryCell>& fabs, double h = 0.0,
                          std::uint64_t seed = 0);

// Appendix-style augmentation: every fabricated record spawns `factor`
// perturbed copies through the pipeline.
PairedDataset augment_dataset(const PairedDataset& real, const PerturbPipeline& pipe, int factor,
                              std::uint64_t seed);

}  // namespace gust
