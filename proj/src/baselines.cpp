#include "gust/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace gust {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<double> flatten(const BinaryCell& cell) {
  std::vector<double> v(cell.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(cell.values[i]);
  return v;
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int round_odd(double x, int lo, int hi) {
  int s = 2 * int(std::floor((x - 1.0) / 2.0 + 0.5)) + 1;
  return std::clamp(s, lo, hi);
}

}  // namespace

void validate_grf(const GRFConfig& cfg) {
  if (cfg.ell1 <= 0.0 || cfg.ell2 <= 0.0)
    throw std::invalid_argument("GRFConfig: correlation lengths must be positive");
  if (cfg.sigma2 <= 0.0) throw std::invalid_argument("GRFConfig: sigma2 must be positive");
  if (cfg.grid < 2) throw std::invalid_argument("GRFConfig: grid must be >= 2");
  if (cfg.modes < 1 || cfg.modes > cfg.grid * cfg.grid)
    throw std::invalid_argument("GRFConfig: modes must lie in [1, grid^2]");
}

DenseMatrix grf_covariance(const GRFConfig& cfg) {
  validate_grf(cfg);
  const int g = cfg.grid, n = g * g;
  DenseMatrix C;
  C.n = n;
  C.a.resize(std::size_t(n) * n);
  const double inv1 = 1.0 / (cfg.ell1 * cfg.ell1);
  const double inv2 = 1.0 / (cfg.ell2 * cfg.ell2);
  for (int i = 0; i < n; ++i) {
    double xi = double(i % g) / double(g - 1);
    double yi = double(i / g) / double(g - 1);
    for (int j = i; j < n; ++j) {
      double xj = double(j % g) / double(g - 1);
      double yj = double(j / g) / double(g - 1);
      double dx = xi - xj, dy = yi - yj;
      double v = cfg.sigma2 * std::exp(-0.5 * (dx * dx * inv1 + dy * dy * inv2));
      C.at(i, j) = v;
      C.at(j, i) = v;
    }
  }
  return C;
}

KLBasis kl_decompose(const DenseMatrix& C, int M) {
  const int n = C.n;
  if (M < 1 || M > n) throw std::invalid_argument("kl_decompose: M must lie in [1, n]");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(C.at(i, j) - C.at(j, i)) > 1e-12 * (1.0 + std::abs(C.at(i, j))))
        throw std::invalid_argument("kl_decompose: matrix is not symmetric");

  std::vector<double> A = C.a;
  std::vector<double> V(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) V[std::size_t(i) * n + i] = 1.0;
  auto a = [&](int i, int j) -> double& { return A[std::size_t(i) * n + j]; };
  auto v = [&](int i, int j) -> double& { return V[std::size_t(i) * n + j]; };

  double fro = 0.0;
  for (double x : A) fro += x * x;
  fro = std::sqrt(fro);
  const double tol = 1e-10 * std::max(fro, 1e-300);

  bool converged = false;
  for (int sweep = 0; sweep < 10000; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(2.0 * off) <= tol) {
      converged = true;
      break;
    }
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) throw EigFailure("Jacobi sweeps did not converge");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a(i, i) > a(j, j); });
  KLBasis basis;
  basis.grid = int(std::lround(std::sqrt(double(n))));
  basis.eigenvalues.resize(M);
  basis.modes.assign(M, std::vector<double>(n));
  for (int k = 0; k < M; ++k) {
    int col = order[k];
    basis.eigenvalues[k] = std::max(a(col, col), 0.0);
    for (int i = 0; i < n; ++i) basis.modes[k][i] = v(i, col);
  }
  return basis;
}

KLBasis kl_basis(const GRFConfig& cfg) {
  KLBasis b = kl_decompose(grf_covariance(cfg), cfg.modes);
  b.grid = cfg.grid;
  return b;
}

std::vector<double> grf_realize(const KLBasis& basis, RngStream& rng) {
  if (basis.modes.empty()) throw std::invalid_argument("grf_realize: empty basis");
  const std::size_t n = basis.modes.front().size();
  std::vector<double> g(n, 0.0);
  for (std::size_t k = 0; k < basis.modes.size(); ++k) {
    double amp = std::sqrt(basis.eigenvalues[k]) * rng.normal();
    const auto& phi = basis.modes[k];
    for (std::size_t i = 0; i < n; ++i) g[i] += amp * phi[i];
  }
  return g;
}

BinaryCell grf_perturb(const BinaryCell& nominal, const GRFConfig& cfg, RngStream& rng) {
  return grf_perturb(nominal, kl_basis(cfg), rng);
}

BinaryCell grf_perturb(const BinaryCell& nominal, const KLBasis& basis, RngStream& rng) {
  validate_cell(nominal);
  std::vector<double> g = grf_realize(basis, rng);
  SDFGrid field;
  field.height = basis.grid;
  field.width = basis.grid;
  field.values = g;

  SDFGrid sdf = to_sdf(nominal);
  const int h = nominal.height, w = nominal.width;
  for (int r = 0; r < h; ++r) {
    double gr = h > 1 ? double(r) * double(basis.grid - 1) / double(h - 1) : 0.0;
    for (int c = 0; c < w; ++c) {
      double gc = w > 1 ? double(c) * double(basis.grid - 1) / double(w - 1) : 0.0;
      sdf.at(r, c) += bilinear_at(field, gr, gc);
    }
  }
  return to_binary(sdf);
}

double kde_neg_loglik(const std::vector<BinaryCell>& candidates,
                      const std::vector<BinaryCell>& refs, double h) {
  if (candidates.empty() || refs.empty())
    throw std::invalid_argument("kde_neg_loglik: empty sample sets");
  if (h <= 0.0) throw std::invalid_argument("kde_neg_loglik: bandwidth must be positive");
  const std::size_t d = candidates.front().values.size();
  std::vector<std::vector<double>> rflat(refs.size());
  for (std::size_t j = 0; j < refs.size(); ++j) {
    if (refs[j].values.size() != d)
      throw std::invalid_argument("kde_neg_loglik: mixed resolutions");
    rflat[j] = flatten(refs[j]);
  }
  const double log_norm =
      -double(d) / 2.0 * std::log(kTwoPi * h * h) - std::log(double(refs.size()));
  const double inv2h2 = 1.0 / (2.0 * h * h);

  double nll = 0.0;
  std::vector<double> expo(refs.size());
  for (const auto& cand : candidates) {
    if (cand.values.size() != d)
      throw std::invalid_argument("kde_neg_loglik: mixed resolutions");
    auto cf = flatten(cand);
    double mx = -1e300;
    for (std::size_t j = 0; j < refs.size(); ++j) {
      expo[j] = -sqdist(cf, rflat[j]) * inv2h2;
      mx = std::max(mx, expo[j]);
    }
    double sum = 0.0;
    for (double e : expo) sum += std::exp(e - mx);
    nll -= log_norm + mx + std::log(sum);
  }
  return nll;
}

double median_bandwidth(const std::vector<BinaryCell>& refs) {
  if (refs.size() < 2) throw std::invalid_argument("median_bandwidth: need >= 2 refs");
  std::vector<std::vector<double>> flat(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) flat[i] = flatten(refs[i]);
  std::vector<double> dists;
  for (std::size_t i = 0; i < refs.size(); ++i)
    for (std::size_t j = i + 1; j < refs.size(); ++j)
      dists.push_back(std::sqrt(sqdist(flat[i], flat[j])));
  std::sort(dists.begin(), dists.end());
  std::size_t m = dists.size();
  double median = m % 2 == 1 ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
  return std::max(median / std::sqrt(2.0), 1e-9);
}

DEResult differential_evolution(const std::function<double(const std::vector<double>&)>& objective,
                                const std::vector<double>& lower,
                                const std::vector<double>& upper, const DEConfig& cfg) {
  const std::size_t dim = lower.size();
  if (dim == 0 || upper.size() != dim)
    throw std::invalid_argument("differential_evolution: bad bounds");
  for (std::size_t d = 0; d < dim; ++d)
    if (!(lower[d] < upper[d]) || !std::isfinite(lower[d]) || !std::isfinite(upper[d]))
      throw std::invalid_argument("differential_evolution: bounds must be finite and ordered");
  if (cfg.pop_size < 4) throw std::invalid_argument("differential_evolution: pop_size >= 4");

  RngStream rng(derive_seed(cfg.seed, 0xDE));
  const int np = cfg.pop_size;
  if (!cfg.init_population.empty() && cfg.init_population.size() != std::size_t(np))
    throw std::invalid_argument("differential_evolution: init population size mismatch");
  std::vector<std::vector<double>> pop(np, std::vector<double>(dim));
  std::vector<double> fitness(np);
  for (int i = 0; i < np; ++i) {
    if (!cfg.init_population.empty()) {
      if (cfg.init_population[i].size() != dim)
        throw std::invalid_argument("differential_evolution: init member dimension mismatch");
      for (std::size_t d = 0; d < dim; ++d)
        pop[i][d] = std::clamp(cfg.init_population[i][d], lower[d], upper[d]);
    } else {
      for (std::size_t d = 0; d < dim; ++d) pop[i][d] = rng.uniform(lower[d], upper[d]);
    }
    fitness[i] = objective(pop[i]);
  }

  DEResult result;
  int best = int(std::min_element(fitness.begin(), fitness.end()) - fitness.begin());
  result.x = pop[best];
  result.value = fitness[best];

  int since_improvement = 0;
  std::vector<double> trial(dim);
  for (int gen = 0; gen < cfg.max_gen; ++gen) {
    for (int i = 0; i < np; ++i) {
      int a, b, c;
      do a = int(rng.uniform_index(np)); while (a == i);
      do b = int(rng.uniform_index(np)); while (b == i || b == a);
      do c = int(rng.uniform_index(np)); while (c == i || c == a || c == b);
      std::size_t jrand = rng.uniform_index(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        if (d == jrand || rng.uniform() < cfg.crossover) {
          double v = pop[a][d] + cfg.weight * (pop[b][d] - pop[c][d]);
          trial[d] = std::clamp(v, lower[d], upper[d]);
        } else {
          trial[d] = pop[i][d];
        }
      }
      double f = objective(trial);
      if (f <= fitness[i]) {
        pop[i] = trial;
        fitness[i] = f;
      }
    }
    int gbest = int(std::min_element(fitness.begin(), fitness.end()) - fitness.begin());
    if (fitness[gbest] < result.value - 1e-15) {
      result.value = fitness[gbest];
      result.x = pop[gbest];
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    result.trace.push_back(result.value);
    if (since_improvement >= 50) {
      result.stalled = true;
      break;
    }
  }
  return result;
}

double morph_bandwidth_heuristic(const std::vector<BinaryCell>& nominals) {
  if (nominals.empty()) throw std::invalid_argument("morph_bandwidth_heuristic: empty set");
  std::vector<double> step;
  for (const auto& nom : nominals) {
    BinaryCell grown = dilate(nom, {3});
    double changed = 0.0;
    for (std::size_t i = 0; i < nom.values.size(); ++i)
      changed += grown.values[i] != nom.values[i];
    step.push_back(std::sqrt(changed));
  }
  std::sort(step.begin(), step.end());
  std::size_t m = step.size();
  double median = m % 2 == 1 ? step[m / 2] : 0.5 * (step[m / 2 - 1] + step[m / 2]);
  return std::max(median / 2.0, 1e-6);
}

MorphFit fit_morph_scales(const std::vector<BinaryCell>& nominals,
                          const std::vector<BinaryCell>& fabs, double h, std::uint64_t seed) {
  if (nominals.empty() || fabs.empty())
    throw std::invalid_argument("fit_morph_scales: empty sample sets");
  MorphFit fit;
  fit.bandwidth = h > 0.0 ? h : morph_bandwidth_heuristic(nominals);

  auto fit_one = [&](bool dilation, double& nll_out, bool& stalled) {
    std::map<int, double> cache;  // only 51 odd scales exist in [1, 101]
    auto objective = [&](const std::vector<double>& x) {
      int s = round_odd(x[0], 1, 101);
      auto it = cache.find(s);
      if (it != cache.end()) return it->second;
      std::vector<BinaryCell> candidates;
      candidates.reserve(nominals.size());
      for (const auto& nom : nominals)
        candidates.push_back(dilation ? dilate(nom, {s}) : erode(nom, {s}));
      double value = kde_neg_loglik(candidates, fabs, fit.bandwidth);
      cache[s] = value;
      return value;
    };
    DEConfig de;
    de.pop_size = 51;  // one member per odd scale in [1, 101]
    de.max_gen = 60;
    de.seed = derive_seed(seed, dilation ? 0xD : 0xE);
    for (int s = 1; s <= 101; s += 2) de.init_population.push_back({double(s)});
    DEResult res = differential_evolution(objective, {1.0}, {101.0}, de);
    nll_out = res.value;
    stalled = res.stalled;
    return round_odd(res.x[0], 1, 101);
  };

  bool stall_d = false, stall_e = false;
  fit.alpha_hat = MorphScale{fit_one(true, fit.neg_loglik_dilate, stall_d)};
  fit.beta_hat = MorphScale{fit_one(false, fit.neg_loglik_erode, stall_e)};
  fit.stalled = stall_d || stall_e;
  return fit;
}

PairedDataset augment_dataset(const PairedDataset& real, const PerturbPipeline& pipe, int factor,
                              std::uint64_t seed) {
  if (factor < 1) throw std::invalid_argument("augment_dataset: factor must be >= 1");
  validate_dataset(real);
  validate_pipeline(pipe);
  PairedDataset out;
  out.variants_per_nominal = real.variants_per_nominal * std::uint32_t(1 + factor);
  std::size_t fab_index = 0;
  for (const auto& rec : real.records) {
    out.records.push_back(rec);
    if (rec.role != Role::Fabricated) continue;
    for (int k = 0; k < factor; ++k) {
      RngStream rng(derive_seed(seed, fab_index, std::uint64_t(k), 0xA6));
      DatasetRecord copy;
      copy.nominal_id = rec.nominal_id;
      copy.role = Role::Fabricated;
      copy.cell = apply_pipeline(rec.cell, pipe, rng);
      out.records.push_back(std::move(copy));
    }
    ++fab_index;
  }
  return out;
}

}  // namespace gust
