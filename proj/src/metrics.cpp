#include "gust/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "gust/rng.hpp"

namespace gust {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double sq3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// k-th nearest-neighbor squared radii within the real set
std::vector<double> knn_radii_sq(const std::vector<std::array<double, 3>>& pts, int k) {
  const std::size_t n = pts.size();
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (n <= std::size_t(k))
    throw TooFewRealPoints("need more than k real points for NND_k");
  std::vector<double> radii(n);
  std::vector<double> d(n - 1);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) firstprivate(d)
#endif
  for (long long i = 0; i < (long long)n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != std::size_t(i)) d[m++] = sq3(pts[i], pts[j]);
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radii[i] = d[k - 1];
  }
  return radii;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  double pos = q * double(n - 1);
  std::size_t lo = std::size_t(pos);
  std::size_t hi = std::min(lo + 1, n - 1);
  double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// regularized incomplete beta via Lentz continued fraction
double betacf(double a, double b, double x) {
  const int kMaxIter = 300;
  const double eps = 3e-16, fpmin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                       b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

std::vector<std::array<double, 3>> pca3(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  if (n < 2) throw std::invalid_argument("pca3: need at least 2 points");
  const std::size_t d = rows.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (auto& m : mean) m /= double(n);

  // subspace iteration on the covariance operator, matrix-free
  const int kComp = 3;
  std::vector<std::vector<double>> q(kComp, std::vector<double>(d));
  RngStream init(0xBA5E);
  for (auto& col : q)
    for (auto& v : col) v = init.normal();

  auto orthonormalize = [&]() {
    for (int c = 0; c < kComp; ++c) {
      for (int p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += q[c][j] * q[p][j];
        for (std::size_t j = 0; j < d; ++j) q[c][j] -= dot * q[p][j];
      }
      double norm = 0.0;
      for (double v : q[c]) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-300) norm = 1.0;
      for (auto& v : q[c]) v /= norm;
    }
  };
  orthonormalize();

  std::vector<double> proj(n);
  std::array<double, 3> prev_ray = {0, 0, 0};
  for (int iter = 0; iter < 300; ++iter) {
    std::array<double, 3> ray = {0, 0, 0};
    for (int c = 0; c < kComp; ++c) {
      // z = Cov * q_c = X^T (X q_c) / n on centered rows
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += (rows[i][j] - mean[j]) * q[c][j];
        proj[i] = acc;
      }
      std::vector<double> z(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) z[j] += (rows[i][j] - mean[j]) * proj[i];
      double ray_c = 0.0;
      for (std::size_t j = 0; j < d; ++j) ray_c += z[j] * q[c][j];
      ray[c] = ray_c / double(n);
      q[c] = std::move(z);
    }
    orthonormalize();
    double delta = 0.0;
    for (int c = 0; c < kComp; ++c) delta = std::max(delta, std::abs(ray[c] - prev_ray[c]));
    prev_ray = ray;
    if (iter > 2 && delta <= 1e-13 * std::max(1.0, std::abs(ray[0]))) break;
  }

  // sign convention: largest-magnitude loading positive
  for (auto& col : q) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(col[j]) > std::abs(col[arg])) arg = j;
    if (col[arg] < 0.0)
      for (auto& v : col) v = -v;
  }

  std::vector<std::array<double, 3>> out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < kComp; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += (rows[i][j] - mean[j]) * q[c][j];
      out[i][c] = acc;
    }
  return out;
}

std::vector<std::array<double, 3>> tsne3(const std::vector<std::vector<double>>& rows,
                                         double perplexity, std::uint64_t seed) {
  const std::size_t n = rows.size();
  if (n < 4) throw std::invalid_argument("tsne3: need at least 4 points");
  if (!(perplexity >= 1.0) || perplexity >= double(n - 1) / 3.0)
    throw PerplexityTooLarge("tsne: perplexity must lie in [1, (n-1)/3)");

  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t f = 0; f < rows[i].size(); ++f) {
        double diff = rows[i][f] - rows[j][f];
        s += diff * diff;
      }
      d2[i * n + j] = d2[j * n + i] = s;
    }

  // conditional distributions via per-point precision search
  const double log_u = std::log(perplexity);
  std::vector<double> P(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = 1e300;
    for (int it = 0; it < 60; ++it) {
      double sum = 0.0, sum_dp = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double p = std::exp(-d2[i * n + j] * beta);
        sum += p;
        sum_dp += d2[i * n + j] * p;
      }
      double entropy = sum > 0.0 ? std::log(sum) + beta * sum_dp / sum : 0.0;
      double diff = entropy - log_u;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0.0) {
        beta_lo = beta;
        beta = beta_hi > 1e299 ? beta * 2.0 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = beta_lo <= 0.0 ? beta * 0.5 : 0.5 * (beta + beta_lo);
      }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum += std::exp(-d2[i * n + j] * beta);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) P[i * n + j] = std::exp(-d2[i * n + j] * beta) / std::max(sum, 1e-300);
  }
  // symmetrize
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = (P[i * n + j] + P[j * n + i]) / (2.0 * double(n));
      v = std::max(v, 1e-12);
      P[i * n + j] = P[j * n + i] = v;
    }

  RngStream rng(derive_seed(seed, 0x75E3));
  std::vector<std::array<double, 3>> y(n), inc(n, {0, 0, 0}), grad(n);
  for (auto& p : y)
    for (auto& v : p) v = rng.normal(0.0, 1e-4);

  std::vector<double> w(n * n, 0.0);
  const int kIters = 1000;
  for (int iter = 0; iter < kIters; ++iter) {
    const double exaggeration = iter < 250 ? 12.0 : 1.0;
    const double momentum = iter < 250 ? 0.5 : 0.8;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double v = 1.0 / (1.0 + sq3(y[i], y[j]));
        w[i * n + j] = w[j * n + i] = v;
        z += 2.0 * v;
      }
    z = std::max(z, 1e-300);
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 3> g = {0, 0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double wij = w[i * n + j];
        double coeff = 4.0 * (exaggeration * P[i * n + j] - wij / z) * wij;
        for (int c = 0; c < 3; ++c) g[c] += coeff * (y[i][c] - y[j][c]);
      }
      grad[i] = g;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        inc[i][c] = momentum * inc[i][c] - 200.0 * grad[i][c];
        y[i][c] += inc[i][c];
      }
    // re-center
    std::array<double, 3> mean = {0, 0, 0};
    for (const auto& p : y)
      for (int c = 0; c < 3; ++c) mean[c] += p[c];
    for (int c = 0; c < 3; ++c) mean[c] /= double(n);
    for (auto& p : y)
      for (int c = 0; c < 3; ++c) p[c] -= mean[c];
  }
  return y;
}

std::pair<EmbeddedSet, EmbeddedSet> embed_cells(const std::vector<BinaryCell>& real_cells,
                                                const std::vector<BinaryCell>& gen_cells,
                                                const MetricConfig& cfg) {
  if (real_cells.size() + gen_cells.size() < 10)
    throw std::invalid_argument("embed: need at least 10 points");
  std::vector<std::vector<double>> rows;
  rows.reserve(real_cells.size() + gen_cells.size());
  auto push = [&](const BinaryCell& cell) {
    std::vector<double> r(cell.values.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = double(cell.values[i]);
    rows.push_back(std::move(r));
  };
  for (const auto& c : real_cells) push(c);
  for (const auto& c : gen_cells) push(c);

  std::vector<std::array<double, 3>> pts =
      cfg.embedding == EmbeddingKind::Pca ? pca3(rows) : tsne3(rows, cfg.perplexity, cfg.seed);

  std::uint64_t prov = derive_seed(cfg.seed, std::uint64_t(cfg.embedding),
                                   std::uint64_t(cfg.perplexity * 1000), rows.size());
  EmbeddedSet real, gen;
  real.source = SourceTag::Real;
  gen.source = SourceTag::Generated;
  real.provenance = gen.provenance = prov;
  real.points.assign(pts.begin(), pts.begin() + real_cells.size());
  gen.points.assign(pts.begin() + real_cells.size(), pts.end());
  return {std::move(real), std::move(gen)};
}

double density(const EmbeddedSet& real, const EmbeddedSet& gen, int k) {
  auto radii = knn_radii_sq(real.points, k);
  const std::size_t n = real.points.size(), m = gen.points.size();
  if (m == 0) throw std::invalid_argument("density: empty generated set");
  long long hits = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : hits)
#endif
  for (long long j = 0; j < (long long)m; ++j)
    for (std::size_t i = 0; i < n; ++i)
      if (sq3(gen.points[j], real.points[i]) <= radii[i]) ++hits;
  return double(hits) / (double(k) * double(m));
}

double coverage(const EmbeddedSet& real, const EmbeddedSet& gen, int k) {
  auto radii = knn_radii_sq(real.points, k);
  const std::size_t n = real.points.size(), m = gen.points.size();
  if (m == 0) throw std::invalid_argument("coverage: empty generated set");
  long long covered = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : covered)
#endif
  for (long long i = 0; i < (long long)n; ++i) {
    for (std::size_t j = 0; j < m; ++j)
      if (sq3(gen.points[j], real.points[i]) <= radii[i]) {
        ++covered;
        break;
      }
  }
  return double(covered) / double(n);
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = double(a.size()), nb = double(b.size());
  std::size_t i = 0, j = 0;
  double w = 0.0, prev = std::min(a[0], b[0]);
  while (i < a.size() || j < b.size()) {
    double x;
    if (i < a.size() && (j == b.size() || a[i] <= b[j]))
      x = a[i];
    else
      x = b[j];
    w += std::abs(double(i) / na - double(j) / nb) * (x - prev);
    prev = x;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return w;
}

KdeCurve kde_curve(const std::vector<double>& samples, double bandwidth, int grid_points) {
  if (samples.size() < 2) throw std::invalid_argument("kde_curve: need at least 2 samples");
  const std::size_t n = samples.size();
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= double(n);

  double h = bandwidth;
  if (h <= 0.0) {
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= double(n - 1);
    double sd = std::sqrt(var);
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = sd;
    h = 0.9 * spread * std::pow(double(n), -0.2);
    if (h <= 0.0) h = 1e-3 * std::abs(mean) + 1e-9;  // zero-variance fallback
  }

  auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  double lo = *mn_it - 3.0 * h, hi = *mx_it + 3.0 * h;
  KdeCurve curve;
  curve.bandwidth = h;
  curve.grid.resize(grid_points);
  curve.density.assign(grid_points, 0.0);
  const double step = (hi - lo) / double(grid_points - 1);
  const double norm = 1.0 / (double(n) * h * std::sqrt(kTwoPi));
  for (int g = 0; g < grid_points; ++g) {
    double x = lo + step * g;
    curve.grid[g] = x;
    double acc = 0.0;
    for (double v : samples) {
      double u = (x - v) / h;
      acc += std::exp(-0.5 * u * u);
    }
    curve.density[g] = acc * norm;
  }
  // normalize the trapezoid integral to 1 (the +-3h window clips kernel tails)
  double integral = 0.0;
  for (int g = 0; g + 1 < grid_points; ++g)
    integral += 0.5 * (curve.density[g] + curve.density[g + 1]) * step;
  if (integral > 0.0)
    for (auto& v : curve.density) v /= integral;
  return curve;
}

double welch_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw DegenerateVariance("welch: each sample needs at least 2 values");
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= double(v.size() - 1);
    return std::make_pair(m, var);
  };
  auto [ma, va] = moments(a);
  auto [mb, vb] = moments(b);
  if (va <= 0.0 || vb <= 0.0) throw DegenerateVariance("welch: zero-variance sample");
  double sa = va / double(a.size()), sb = vb / double(b.size());
  double t = (ma - mb) / std::sqrt(sa + sb);
  double nu = (sa + sb) * (sa + sb) /
              (sa * sa / double(a.size() - 1) + sb * sb / double(b.size() - 1));
  double x = nu / (nu + t * t);
  return betai(nu / 2.0, 0.5, x);
}

}  // namespace gust
