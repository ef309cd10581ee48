#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gust/baselines.hpp"

using namespace gust;

namespace {

BinaryCell blob_cell(int n, std::uint64_t seed) {
  RngStream rng(seed);
  BinaryCell cell = make_cell(n, n, 0);
  double cr = n / 2.0 + rng.normal(0, 2), cc = n / 2.0 + rng.normal(0, 2);
  double r1 = n / 4.0 + rng.uniform() * n / 6.0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (std::hypot(r - cr, c - cc) < r1 || std::abs(r - n / 2) < n / 8) cell.at(r, c) = 1;
  return cell;
}

}  // namespace

TEST_CASE("grf_covariance: kernel values and PSD") {
  GRFConfig cfg;
  cfg.grid = 16;
  cfg.ell1 = 0.25;
  cfg.ell2 = 0.4;
  cfg.sigma2 = 1.7;
  cfg.modes = 16;
  DenseMatrix C = grf_covariance(cfg);
  const int n = C.n;
  REQUIRE(n == 256);
  for (int i = 0; i < n; i += 37) CHECK(C.at(i, i) == doctest::Approx(1.7).epsilon(1e-12));

  // two points separated by ell1 along axis 1: grid step is 1/15, so pick
  // points (row 0, col 0) and (row 0, col k) where k/15 ~= ell1 is not exact;
  // evaluate the kernel directly instead on a tailor-made config
  GRFConfig tidy = cfg;
  tidy.grid = 5;  // spacing 0.25 = ell1 exactly
  tidy.modes = 4;
  DenseMatrix C2 = grf_covariance(tidy);
  CHECK(C2.at(0, 1) == doctest::Approx(1.7 * std::exp(-0.5)).epsilon(1e-12));

  KLBasis full = kl_decompose(C, 256);
  CHECK(full.eigenvalues.back() >= -1e-8 * cfg.sigma2);  // clamped, originally >= -1e-8*s2
}

TEST_CASE("kl_decompose: identity and rank-1 spectra") {
  DenseMatrix I;
  I.n = 6;
  I.a.assign(36, 0.0);
  for (int i = 0; i < 6; ++i) I.at(i, i) = 1.0;
  KLBasis b = kl_decompose(I, 3);
  for (double l : b.eigenvalues) CHECK(l == doctest::Approx(1.0).epsilon(1e-12));

  RngStream rng(3);
  std::vector<double> v(6);
  for (auto& x : v) x = rng.normal();
  DenseMatrix R;
  R.n = 6;
  R.a.resize(36);
  double norm2 = 0.0;
  for (int i = 0; i < 6; ++i) {
    norm2 += v[i] * v[i];
    for (int j = 0; j < 6; ++j) R.at(i, j) = v[i] * v[j];
  }
  KLBasis rb = kl_decompose(R, 6);
  CHECK(rb.eigenvalues[0] == doctest::Approx(norm2).epsilon(1e-10));
  for (std::size_t k = 1; k < 6; ++k) CHECK(std::abs(rb.eigenvalues[k]) < 1e-10);
}

TEST_CASE("kl_decompose matches a dense eigensolver oracle on a 12x12-grid C") {
  GRFConfig cfg;
  cfg.grid = 12;
  cfg.ell1 = 0.2;
  cfg.ell2 = 0.35;  // distinct lengths avoid symmetric degeneracies
  cfg.sigma2 = 1.0;
  cfg.modes = 30;
  DenseMatrix C = grf_covariance(cfg);
  KLBasis mine = kl_decompose(C, 30);

  Eigen::MatrixXd M(C.n, C.n);
  for (int i = 0; i < C.n; ++i)
    for (int j = 0; j < C.n; ++j) M(i, j) = C.at(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  REQUIRE(es.info() == Eigen::Success);

  for (int k = 0; k < 30; ++k) {
    double oracle = es.eigenvalues()(C.n - 1 - k);  // Eigen sorts ascending
    CHECK(std::abs(mine.eigenvalues[k] - oracle) < 1e-8);
    // residual || C phi - lambda phi ||
    double resid = 0.0, norm = 0.0;
    for (int i = 0; i < C.n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < C.n; ++j) acc += C.at(i, j) * mine.modes[k][j];
      double r = acc - mine.eigenvalues[k] * mine.modes[k][i];
      resid += r * r;
      norm += mine.modes[k][i] * mine.modes[k][i];
    }
    CHECK(std::sqrt(resid) < 1e-8);
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-8);
  }

  // orthonormality of the retained modes
  for (int a = 0; a < 30; a += 7)
    for (int b = a + 1; b < 30; b += 7) {
      double dot = 0.0;
      for (int i = 0; i < C.n; ++i) dot += mine.modes[a][i] * mine.modes[b][i];
      CHECK(std::abs(dot) < 1e-8);
    }
}

TEST_CASE("kl reconstruction error is non-increasing in M and zero at M = N") {
  GRFConfig cfg;
  cfg.grid = 6;
  cfg.ell1 = 0.3;
  cfg.ell2 = 0.3;
  cfg.sigma2 = 2.0;
  cfg.modes = 36;
  DenseMatrix C = grf_covariance(cfg);
  const int n = C.n;
  double prev = 1e300;
  for (int M : {4, 12, 24, 36}) {
    KLBasis b = kl_decompose(C, M);
    double err = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double rec = 0.0;
        for (int k = 0; k < M; ++k) rec += b.eigenvalues[k] * b.modes[k][i] * b.modes[k][j];
        double d = C.at(i, j) - rec;
        err += d * d;
      }
    err = std::sqrt(err);
    CHECK(err <= prev + 1e-12);
    prev = err;
    if (M == 36) CHECK(err < 1e-8);
  }
}

TEST_CASE("grf_realize: single-mode sum and Monte Carlo covariance") {
  GRFConfig cfg;
  cfg.grid = 8;
  cfg.ell1 = 0.3;
  cfg.ell2 = 0.2;
  cfg.sigma2 = 1.0;
  cfg.modes = 20;
  KLBasis basis = kl_basis(cfg);

  SUBCASE("single mode is proportional to the eigenvector") {
    KLBasis one = basis;
    one.eigenvalues.resize(1);
    one.modes.resize(1);
    RngStream rng(5);
    auto g = grf_realize(one, rng);
    double ratio = g[0] / one.modes[0][0];
    for (std::size_t i = 1; i < g.size(); ++i)
      CHECK(g[i] == doctest::Approx(ratio * one.modes[0][i]).epsilon(1e-9));
  }

  SUBCASE("sample covariance approaches the truncated covariance") {
    const int n = cfg.grid * cfg.grid, reps = 5000;
    std::vector<double> cov(std::size_t(n) * n, 0.0);
    RngStream rng(99);
    for (int r = 0; r < reps; ++r) {
      auto g = grf_realize(basis, rng);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cov[std::size_t(i) * n + j] += g[i] * g[j];
    }
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double trunc = 0.0;
        for (std::size_t k = 0; k < basis.modes.size(); ++k)
          trunc += basis.eigenvalues[k] * basis.modes[k][i] * basis.modes[k][j];
        double d = cov[std::size_t(i) * n + j] / reps - trunc;
        num += d * d;
        den += trunc * trunc;
      }
    CHECK(std::sqrt(num) / std::sqrt(den) < 0.05);
  }
}

TEST_CASE("grf_perturb: vanishing variance is the identity, seeds reproduce") {
  BinaryCell nominal = blob_cell(24, 7);
  GRFConfig cfg;
  cfg.grid = 12;
  cfg.modes = 30;

  SUBCASE("sigma2 -> 0") {
    GRFConfig tiny = cfg;
    tiny.sigma2 = 1e-30;
    RngStream rng(3);
    CHECK(grf_perturb(nominal, tiny, rng) == nominal);
  }
  SUBCASE("byte-identical under one seed") {
    cfg.sigma2 = 2.0;
    KLBasis basis = kl_basis(cfg);
    RngStream a(11), b(11);
    CHECK(grf_perturb(nominal, basis, a) == grf_perturb(nominal, basis, b));
  }
  SUBCASE("constant field floods the level set") {
    KLBasis flood;
    flood.grid = 12;
    flood.eigenvalues = {1.0};
    flood.modes = {std::vector<double>(144, 1.0)};  // g = xi * 1
    SDFGrid sdf = to_sdf(nominal);
    double span = 0.0;
    for (double v : sdf.values) span = std::max(span, std::abs(v));
    // draw xi once to learn its value, then scale the mode so g > span
    RngStream probe(21);
    double xi = probe.normal();
    flood.eigenvalues[0] = (span / std::abs(xi) + 2.0) * (span / std::abs(xi) + 2.0);
    RngStream rng(21);
    BinaryCell out = grf_perturb(nominal, flood, rng);
    double vf = volume_fraction(out);
    CHECK((vf == 0.0 || vf == 1.0));  // sign of xi decides flood vs erase
  }
}

TEST_CASE("kde_neg_loglik: closed forms and stability") {
  BinaryCell a = blob_cell(16, 1);
  const double h = 2.5;
  const double d = 256.0;

  SUBCASE("single candidate equal to the single ref") {
    double nll = kde_neg_loglik({a}, {a}, h);
    CHECK(nll == doctest::Approx(d / 2.0 * std::log(2.0 * M_PI * h * h)).epsilon(1e-12));
  }
  SUBCASE("duplicated refs leave the value unchanged") {
    BinaryCell b = blob_cell(16, 2);
    double v1 = kde_neg_loglik({a}, {a, b}, h);
    double v2 = kde_neg_loglik({a}, {a, b, a, b}, h);
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));
  }
  SUBCASE("matches a naive summation without log-sum-exp shifts at h = 10") {
    // (2 pi h^2)^(d/2) alone overflows double at d = 256, so the naive route
    // keeps the normalizer in log space but sums the kernel terms directly.
    std::vector<BinaryCell> cands = {blob_cell(16, 3), blob_cell(16, 4)};
    std::vector<BinaryCell> refs = {blob_cell(16, 5), blob_cell(16, 6), blob_cell(16, 7)};
    double naive = 0.0;
    for (const auto& cand : cands) {
      double p = 0.0;
      for (const auto& ref : refs) {
        double dist2 = 0.0;
        for (std::size_t i = 0; i < cand.values.size(); ++i) {
          double diff = double(cand.values[i]) - double(ref.values[i]);
          dist2 += diff * diff;
        }
        p += std::exp(-dist2 / 200.0);
      }
      naive -= std::log(p / 3.0) - 128.0 * std::log(2.0 * M_PI * 100.0);
    }
    CHECK(kde_neg_loglik(cands, refs, 10.0) == doctest::Approx(naive).epsilon(1e-9));
  }
  SUBCASE("permutation invariance") {
    std::vector<BinaryCell> cands = {blob_cell(16, 3), blob_cell(16, 4)};
    std::vector<BinaryCell> refs = {blob_cell(16, 5), blob_cell(16, 6)};
    double v1 = kde_neg_loglik(cands, refs, 3.0);
    std::swap(cands[0], cands[1]);
    std::swap(refs[0], refs[1]);
    CHECK(kde_neg_loglik(cands, refs, 3.0) == doctest::Approx(v1).epsilon(1e-12));
  }
}

TEST_CASE("differential_evolution: sphere, flat, Rastrigin") {
  SUBCASE("sphere in 2-D") {
    auto sphere = [](const std::vector<double>& x) { return x[0] * x[0] + x[1] * x[1]; };
    DEConfig cfg;
    cfg.pop_size = 20;
    cfg.max_gen = 200;
    cfg.seed = 1;
    DEResult r = differential_evolution(sphere, {-5, -5}, {5, 5}, cfg);
    CHECK(std::abs(r.x[0]) < 1e-3);
    CHECK(std::abs(r.x[1]) < 1e-3);
    CHECK(r.value < 1e-6);
  }
  SUBCASE("constant objective returns without crashing") {
    auto flat = [](const std::vector<double>&) { return 3.5; };
    DEConfig cfg;
    cfg.pop_size = 6;
    cfg.max_gen = 80;
    cfg.seed = 2;
    DEResult r = differential_evolution(flat, {-1}, {1}, cfg);
    CHECK(r.value == 3.5);
    CHECK(r.stalled);  // 50 generations without improvement
  }
  SUBCASE("1-D Rastrigin reaches the grid-scan optimum across seeds") {
    auto rastrigin = [](const std::vector<double>& x) {
      return 10.0 + x[0] * x[0] - 10.0 * std::cos(2.0 * M_PI * x[0]);
    };
    // dense scan oracle
    double scan_min = 1e300;
    for (int i = 0; i <= 102400; ++i) {
      double x = -5.12 + 10.24 * double(i) / 102400.0;
      scan_min = std::min(scan_min, rastrigin({x}));
    }
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      DEConfig cfg;
      cfg.pop_size = 20;
      cfg.max_gen = 300;
      cfg.seed = seed;
      DEResult r = differential_evolution(rastrigin, {-5.12}, {5.12}, cfg);
      CHECK(std::abs(r.value - scan_min) < 1e-4);
    }
  }
  SUBCASE("deterministic under seed") {
    auto sphere = [](const std::vector<double>& x) { return x[0] * x[0]; };
    DEConfig cfg;
    cfg.pop_size = 8;
    cfg.max_gen = 30;
    cfg.seed = 5;
    DEResult a = differential_evolution(sphere, {-2}, {2}, cfg);
    DEResult b = differential_evolution(sphere, {-2}, {2}, cfg);
    CHECK(a.x == b.x);
    CHECK(a.trace == b.trace);
  }
}

TEST_CASE("fit_morph_scales: identity and dilation recovery") {
  std::vector<BinaryCell> nominals;
  for (int k = 0; k < 6; ++k) nominals.push_back(blob_cell(24, 100 + k));

  SUBCASE("fabs equal to nominals recovers scale 1") {
    MorphFit fit = fit_morph_scales(nominals, nominals, 0.0, 3);
    CHECK(fit.alpha_hat.size == 1);
    CHECK(fit.beta_hat.size == 1);
  }

  SUBCASE("fabs = dilate(nominals, 3) recovers 3, matching an exhaustive scan") {
    std::vector<BinaryCell> fabs;
    for (const auto& nom : nominals) fabs.push_back(dilate(nom, {3}));
    MorphFit fit = fit_morph_scales(nominals, fabs, 0.0, 3);

    double h = morph_bandwidth_heuristic(nominals);
    int best_scale = 1;
    double best = 1e300;
    for (int s = 1; s <= 15; s += 2) {
      std::vector<BinaryCell> cands;
      for (const auto& nom : nominals) cands.push_back(dilate(nom, {s}));
      double v = kde_neg_loglik(cands, fabs, h);
      if (v < best) {
        best = v;
        best_scale = s;
      }
    }
    CHECK(best_scale == 3);
    CHECK(fit.alpha_hat.size == 3);
    CHECK(fit.neg_loglik_dilate == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("augment_dataset: counting and identity pipeline") {
  std::vector<BinaryCell> nominals = {blob_cell(16, 1), blob_cell(16, 2)};
  PerturbPipeline pipe;
  pipe.operators = {PipelineOp{OpKind::Ffd, {4, 0.0}, {}, {}}};
  pipe.operator_distribution = {1.0};
  pipe.length_distribution = {1.0};  // length 0: identity
  PairedDataset base = build_dataset(nominals, pipe, 2, 9);

  PairedDataset aug = augment_dataset(base, pipe, 3, 5);
  int fab = 0, nom = 0;
  for (const auto& rec : aug.records) (rec.role == Role::Fabricated ? fab : nom)++;
  CHECK(nom == 2);
  CHECK(fab == 2 * 2 * (1 + 3));
  validate_dataset(aug);
  for (const auto& rec : aug.records)
    if (rec.role == Role::Fabricated)
      CHECK(rec.cell == nominals[rec.nominal_id]);  // identity pipeline copies
}
