#include "gust/perturb.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <variant>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gust {

namespace {

void check_distribution(const std::vector<double>& p, const char* what) {
  if (p.empty()) throw std::invalid_argument(std::string(what) + ": empty distribution");
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::invalid_argument(std::string(what) + ": negative mass");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + ": probabilities must sum to 1");
}

std::size_t draw_categorical(const std::vector<double>& p, RngStream& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

double effective_alpha(const SDFGrid& sdf, const HoleConfig& cfg) {
  if (cfg.alpha > 0.0) return cfg.alpha;
  double mx = 0.0;
  for (double v : sdf.values) mx = std::max(mx, v);
  if (mx <= 0.0) throw NoInteriorMaterial();
  return 1.5 * mx;
}

}  // namespace

void validate_ffd(const FFDConfig& cfg) {
  if (cfg.m < 2) throw std::invalid_argument("FFDConfig: lattice side count m must be >= 2");
  if (cfg.sigma < 0.0) throw std::invalid_argument("FFDConfig: sigma must be >= 0");
}

void validate_hole(const HoleConfig& cfg) {
  if (cfg.cov_std < 0.0) throw std::invalid_argument("HoleConfig: cov_std must be >= 0");
  if (cfg.offdiag_fraction_max < 0.0 || cfg.offdiag_fraction_max >= 1.0)
    throw std::invalid_argument("HoleConfig: offdiag_fraction_max must lie in [0,1)");
}

void validate_pipeline(const PerturbPipeline& pipe) {
  if (pipe.operators.empty()) throw std::invalid_argument("PerturbPipeline: no operators");
  check_distribution(pipe.length_distribution, "length_distribution");
  check_distribution(pipe.operator_distribution, "operator_distribution");
  if (pipe.operator_distribution.size() != pipe.operators.size())
    throw std::invalid_argument("PerturbPipeline: operator_distribution size mismatch");
  for (const auto& op : pipe.operators) {
    switch (op.kind) {
      case OpKind::Ffd: validate_ffd(op.ffd); break;
      case OpKind::Hole: validate_hole(op.hole); break;
      case OpKind::Dilate:
      case OpKind::Erode: validate_scale(op.morph); break;
    }
  }
}

void validate_dataset(const PairedDataset& ds) {
  if (ds.records.empty()) throw std::invalid_argument("PairedDataset: empty");
  int h = ds.records.front().cell.height, w = ds.records.front().cell.width;
  std::vector<std::uint32_t> nominal_ids;
  for (const auto& rec : ds.records) {
    if (rec.cell.height != h || rec.cell.width != w)
      throw std::invalid_argument("PairedDataset: mixed resolutions");
    if (rec.role == Role::Nominal) nominal_ids.push_back(rec.nominal_id);
  }
  std::sort(nominal_ids.begin(), nominal_ids.end());
  if (std::adjacent_find(nominal_ids.begin(), nominal_ids.end()) != nominal_ids.end())
    throw std::invalid_argument("PairedDataset: duplicate nominal record");
  for (const auto& rec : ds.records)
    if (rec.role == Role::Fabricated &&
        !std::binary_search(nominal_ids.begin(), nominal_ids.end(), rec.nominal_id))
      throw std::invalid_argument("PairedDataset: fabricated record without nominal");
}

std::vector<std::pair<std::size_t, std::size_t>> PairedDataset::pairs() const {
  std::vector<std::size_t> nominal_index(records.size(), std::size_t(-1));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::vector<std::pair<std::uint32_t, std::size_t>> lookup;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].role == Role::Nominal) lookup.emplace_back(records[i].nominal_id, i);
  std::sort(lookup.begin(), lookup.end());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].role != Role::Fabricated) continue;
    auto it = std::lower_bound(lookup.begin(), lookup.end(),
                               std::make_pair(records[i].nominal_id, std::size_t(0)));
    if (it == lookup.end() || it->first != records[i].nominal_id)
      throw std::invalid_argument("PairedDataset: fabricated record without nominal");
    out.emplace_back(it->second, i);
  }
  return out;
}

std::vector<double> bernstein_basis(int n, double t) {
  // Pascal-triangle binomials; exact in double for the small n used here.
  std::vector<double> binom(n + 1);
  binom[0] = 1.0;
  for (int i = 1; i <= n; ++i) binom[i] = binom[i - 1] * double(n - i + 1) / double(i);
  std::vector<double> out(n + 1);
  for (int i = 0; i <= n; ++i)
    out[i] = binom[i] * std::pow(t, i) * std::pow(1.0 - t, n - i);
  return out;
}

std::vector<std::array<double, 2>> sample_ffd_offsets(const FFDConfig& cfg, RngStream& rng) {
  validate_ffd(cfg);
  std::vector<std::array<double, 2>> offsets(std::size_t(cfg.m) * cfg.m);
  for (auto& o : offsets) {
    o[0] = rng.normal(0.0, cfg.sigma);  // dx
    o[1] = rng.normal(0.0, cfg.sigma);  // dy
  }
  return offsets;
}

BinaryCell ffd_deform_with_offsets(const BinaryCell& cell, int m,
                                   const std::vector<std::array<double, 2>>& offsets) {
  validate_cell(cell);
  if (m < 2 || offsets.size() != std::size_t(m) * m)
    throw std::invalid_argument("ffd_deform: offsets do not match lattice");
  const int h = cell.height, w = cell.width;
  SDFGrid sdf = to_sdf(cell);
  BinaryCell out = make_cell(h, w);
  std::vector<double> bu(m), bv(m);
  for (int r = 0; r < h; ++r) {
    double v = h > 1 ? double(r) / double(h - 1) : 0.0;
    auto bvr = bernstein_basis(m - 1, v);
    for (int c = 0; c < w; ++c) {
      double u = w > 1 ? double(c) / double(w - 1) : 0.0;
      auto bus = bernstein_basis(m - 1, u);
      double dx = 0.0, dy = 0.0;
      for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i) {
          double wgt = bvr[j] * bus[i];
          dx += wgt * offsets[std::size_t(j) * m + i][0];
          dy += wgt * offsets[std::size_t(j) * m + i][1];
        }
      out.at(r, c) = bilinear_at(sdf, r - dy, c - dx) > 0.0 ? 1 : 0;
    }
  }
  return out;
}

BinaryCell ffd_deform(const BinaryCell& cell, const FFDConfig& cfg, RngStream& rng) {
  auto offsets = sample_ffd_offsets(cfg, rng);
  if (cfg.sigma == 0.0) return cell;  // identity, bit-exact
  return ffd_deform_with_offsets(cell, cfg.m, offsets);
}

std::array<double, 4> sample_covariance(const HoleConfig& cfg, RngStream& rng) {
  validate_hole(cfg);
  double s11 = 0.0, s22 = 0.0;
  bool ok = false;
  for (int attempt = 0; attempt < 100; ++attempt) {
    double xi_i = rng.normal(cfg.cov_mean, cfg.cov_std);
    double xi_j = rng.normal(cfg.cov_mean, cfg.cov_std);
    s11 = xi_i * xi_i;
    s22 = xi_j * xi_j;
    if (s11 >= 1e-6 && s22 >= 1e-6) {
      ok = true;
      break;
    }
  }
  if (!ok) throw DegenerateCovariance();
  double bound = cfg.offdiag_fraction_max * std::sqrt(s11 * s22);
  double s12 = bound > 0.0 ? rng.uniform(-bound, bound) : 0.0;
  return {s11, s12, s12, s22};
}

SDFGrid nucleate_hole_at(const SDFGrid& sdf, double mu_r, double mu_c,
                         const std::array<double, 4>& sigma, double alpha) {
  double det = sigma[0] * sigma[3] - sigma[1] * sigma[2];
  if (det <= 0.0) throw std::invalid_argument("nucleate_hole: covariance not positive definite");
  double inv11 = sigma[3] / det, inv22 = sigma[0] / det, inv12 = -sigma[1] / det;
  SDFGrid out = sdf;
  for (int r = 0; r < sdf.height; ++r) {
    for (int c = 0; c < sdf.width; ++c) {
      double dr = r - mu_r, dc = c - mu_c;
      double q = inv11 * dc * dc + 2.0 * inv12 * dc * dr + inv22 * dr * dr;
      out.at(r, c) -= alpha * std::exp(-0.5 * q);
    }
  }
  return out;
}

SDFGrid nucleate_hole(const SDFGrid& sdf, const HoleConfig& cfg, RngStream& rng) {
  validate_hole(cfg);
  double alpha = effective_alpha(sdf, cfg);
  // Seed uniformly over strictly interior material pixels (SDF > 1 px).
  std::vector<std::pair<int, int>> interior;
  for (int r = 0; r < sdf.height; ++r)
    for (int c = 0; c < sdf.width; ++c)
      if (sdf.at(r, c) > 1.0) interior.emplace_back(r, c);
  if (interior.empty()) throw NoInteriorMaterial();
  auto [mu_r, mu_c] = interior[rng.uniform_index(interior.size())];
  auto sigma = sample_covariance(cfg, rng);
  return nucleate_hole_at(sdf, mu_r, mu_c, sigma, alpha);
}

BinaryCell apply_pipeline(const BinaryCell& nominal, const PerturbPipeline& pipe, RngStream& rng) {
  validate_cell(nominal);
  validate_pipeline(pipe);
  std::size_t length = draw_categorical(pipe.length_distribution, rng);
  std::vector<std::size_t> indices(length);
  for (auto& ix : indices) ix = draw_categorical(pipe.operator_distribution, rng);

  // x_fab = F_{i1} o F_{i2} o ... o F_{il}(x_nom): the last drawn index acts
  // first. SDF-domain operators are bridged lazily.
  std::variant<BinaryCell, SDFGrid> state = nominal;
  auto as_cell = [&]() -> BinaryCell {
    if (std::holds_alternative<SDFGrid>(state)) return to_binary(std::get<SDFGrid>(state));
    return std::get<BinaryCell>(state);
  };
  auto as_sdf = [&]() -> SDFGrid {
    if (std::holds_alternative<BinaryCell>(state)) return to_sdf(std::get<BinaryCell>(state));
    return std::get<SDFGrid>(state);
  };
  for (std::size_t k = indices.size(); k-- > 0;) {
    const PipelineOp& op = pipe.operators[indices[k]];
    switch (op.kind) {
      case OpKind::Ffd: state = ffd_deform(as_cell(), op.ffd, rng); break;
      case OpKind::Hole: state = nucleate_hole(as_sdf(), op.hole, rng); break;
      case OpKind::Dilate: state = dilate(as_cell(), op.morph); break;
      case OpKind::Erode: state = erode(as_cell(), op.morph); break;
    }
  }
  return as_cell();
}

PairedDataset build_dataset(const std::vector<BinaryCell>& nominals, const PerturbPipeline& pipe,
                            int variants, std::uint64_t seed) {
  if (nominals.empty()) throw std::invalid_argument("build_dataset: no nominal designs");
  if (variants < 1) throw std::invalid_argument("build_dataset: variants must be >= 1");
  validate_pipeline(pipe);
  int h = nominals.front().height, w = nominals.front().width;
  for (const auto& cell : nominals) {
    validate_cell(cell);
    if (cell.height != h || cell.width != w)
      throw std::invalid_argument("build_dataset: nominals must share one resolution");
  }

  PairedDataset ds;
  ds.variants_per_nominal = std::uint32_t(variants);
  ds.records.resize(nominals.size() * (1 + std::size_t(variants)));
  for (std::size_t n = 0; n < nominals.size(); ++n) {
    auto& rec = ds.records[n * (1 + variants)];
    rec.nominal_id = std::uint32_t(n);
    rec.role = Role::Nominal;
    rec.cell = nominals[n];
  }

  const std::size_t total = nominals.size() * std::size_t(variants);
  std::vector<std::string> failures(nominals.size());
  int skipped = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : skipped)
  for (long long job = 0; job < (long long)total; ++job) {
    std::size_t n = std::size_t(job) / variants;
    std::size_t v = std::size_t(job) % variants;
    BinaryCell fab;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 10; ++attempt) {
      RngStream rng(derive_seed(seed, n, v, attempt));
      fab = apply_pipeline(nominals[n], pipe, rng);
      if (volume_fraction(fab) > 0.0) {
        ok = true;
        break;
      }
      ++skipped;
    }
    if (!ok) {
      failures[n] = "nominal " + std::to_string(n) + " cannot yield a non-degenerate variant";
      continue;
    }
    auto& rec = ds.records[n * (1 + variants) + 1 + v];
    rec.nominal_id = std::uint32_t(n);
    rec.role = Role::Fabricated;
    rec.cell = std::move(fab);
  }
  for (const auto& f : failures)
    if (!f.empty()) throw DatasetDegenerate("build_dataset: " + f);
  if (skipped > 0)
    std::clog << "gust: build_dataset resampled " << skipped << " degenerate variant(s)\n";
  return ds;
}

}  // namespace gust
