#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>

#include "gust/denoiser.hpp"
#include "gust/diffusion.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gust {

namespace {

struct AdamState {
  std::vector<double> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
};

void adam_step(Denoiser& net, AdamState& adam, const std::vector<double>& grad, double lr,
               const std::vector<bool>& frozen) {
  ++adam.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, double(adam.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, double(adam.step));
  auto& params = net.params();
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    if (frozen[ti]) continue;
    ParamTensor& p = params[ti];
    double* m = adam.m.data() + p.offset;
    double* v = adam.v.data() + p.offset;
    const double* g = grad.data() + p.offset;
    for (std::size_t i = 0; i < p.count(); ++i) {
      m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
      v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p.w[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }
}

struct SampleDraw {
  std::size_t pair_index;
  int t;
  std::vector<double> eps;
};

// One optimization run shared by pretrain and finetune.
TrainResult train_loop(Denoiser& net, const PairedDataset& dataset, const ScheduleSpec& sspec,
                       const TrainConfig& tcfg, const std::vector<bool>& frozen,
                       nlohmann::json metadata) {
  validate_train(tcfg);
  validate_dataset(dataset);
  const NoiseSchedule schedule = make_schedule(sspec);
  const auto pairs = dataset.pairs();
  if (pairs.empty()) throw std::invalid_argument("train: dataset holds no (nominal, fabricated) pairs");

  const DenoiserConfig& dcfg = net.config();
  const int hw = dcfg.height * dcfg.width;
  for (const auto& rec : dataset.records)
    if (rec.cell.height != dcfg.height || rec.cell.width != dcfg.width)
      throw ShapeMismatch("train: dataset resolution does not match denoiser config");

  // Precomputed signals per record referenced by pairs.
  std::vector<std::vector<double>> signals(dataset.records.size());
  for (std::size_t i = 0; i < dataset.records.size(); ++i)
    signals[i] = cell_to_signal(dataset.records[i].cell);

  AdamState adam;
  adam.m.assign(net.param_count(), 0.0);
  adam.v.assign(net.param_count(), 0.0);

  const int B = tcfg.batch_size;
  int n_threads = 1;
#ifdef _OPENMP
  n_threads = omp_get_max_threads();
#endif
  std::vector<Workspace> workspaces;
  for (int i = 0; i < std::min(n_threads, B); ++i) workspaces.push_back(net.make_workspace());
  std::vector<std::vector<double>> sample_grads(B);
  std::vector<double> sample_losses(B);
  std::vector<SampleDraw> draws(B);
  std::vector<double> grad(net.param_count());
  std::vector<double> trace;
  trace.reserve(tcfg.iterations);

  RngStream rng(derive_seed(tcfg.seed, 0x7121));
  for (int iter = 0; iter < tcfg.iterations; ++iter) {
    // all stochastic draws happen up front on the master stream so results do
    // not depend on the worker count
    for (int b = 0; b < B; ++b) {
      draws[b].pair_index = rng.uniform_index(pairs.size());
      draws[b].t = 1 + int(rng.uniform_index(std::size_t(schedule.T)));
      draws[b].eps.resize(hw);
      for (auto& e : draws[b].eps) e = rng.normal();
    }
#pragma omp parallel for schedule(static) num_threads(int(workspaces.size()))
    for (int b = 0; b < B; ++b) {
#ifdef _OPENMP
      Workspace& ws = workspaces[omp_get_thread_num()];
#else
      Workspace& ws = workspaces[0];
#endif
      const auto& [nom_idx, fab_idx] = pairs[draws[b].pair_index];
      Grid nom(1, dcfg.height, dcfg.width), xt(1, dcfg.height, dcfg.width);
      nom.v = signals[nom_idx];
      xt.v = forward_sample(signals[fab_idx], draws[b].t, draws[b].eps, schedule);
      const Grid& eps_hat = net.forward(xt, nom, draws[b].t, ws);

      Grid d_eps(1, dcfg.height, dcfg.width);
      double loss = 0.0;
      const double inv = 1.0 / double(B * hw);
      for (int i = 0; i < hw; ++i) {
        double diff = eps_hat.v[i] - draws[b].eps[i];
        if (tcfg.loss_kind == LossKind::L2) {
          loss += diff * diff;
          d_eps.v[i] = 2.0 * diff * inv;
        } else {
          loss += std::abs(diff);
          d_eps.v[i] = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) * inv;
        }
      }
      sample_losses[b] = loss * inv;
      sample_grads[b].assign(net.param_count(), 0.0);
      net.backward(d_eps, ws, sample_grads[b]);
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {  // fixed reduction order
      loss += sample_losses[b];
      const auto& g = sample_grads[b];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
    if (!std::isfinite(loss))
      throw NonFiniteLoss("iteration " + std::to_string(iter) + ": loss is not finite");
    trace.push_back(loss);
    adam_step(net, adam, grad, lr_at(tcfg, iter), frozen);
  }

  metadata["iterations"] = tcfg.iterations;
  metadata["seed"] = tcfg.seed;
  metadata["batch_size"] = tcfg.batch_size;
  metadata["loss_kind"] = tcfg.loss_kind == LossKind::L1 ? "l1" : "l2";
  TrainResult result{net.to_checkpoint(sspec, metadata), std::move(trace)};
  return result;
}

Grid cell_grid(const BinaryCell& cell) {
  Grid g(1, cell.height, cell.width);
  g.v = cell_to_signal(cell);
  return g;
}

}  // namespace

TrainResult pretrain(const PairedDataset& dataset, const ScheduleSpec& schedule,
                     const DenoiserConfig& dcfg, const TrainConfig& tcfg) {
  Denoiser net(dcfg, derive_seed(tcfg.seed, 0x9e1));
  std::vector<bool> frozen(net.params().size(), false);
  return train_loop(net, dataset, schedule, tcfg, frozen, {{"stage", "pretrain"}});
}

TrainResult finetune(const Checkpoint& ckpt, const PairedDataset& dataset,
                     const FreezeSpec& freeze, const TrainConfig& tcfg) {
  Denoiser net = Denoiser::from_checkpoint(ckpt);
  std::vector<bool> frozen = net.freeze_mask(freeze);
  nlohmann::json meta = {{"stage", "finetune"}};
  if (ckpt.metadata.contains("config_hash")) meta["config_hash"] = ckpt.metadata["config_hash"];
  return train_loop(net, dataset, ckpt.schedule, tcfg, frozen, std::move(meta));
}

std::vector<double> denoise_predict(const Checkpoint& ckpt, const std::vector<double>& x_t, int t,
                                    const BinaryCell& x_nom) {
  Denoiser net = Denoiser::from_checkpoint(ckpt);
  const DenoiserConfig& cfg = net.config();
  if (int(x_t.size()) != cfg.height * cfg.width)
    throw ShapeMismatch("denoise_predict: x_t size mismatch");
  if (t < 1 || t > ckpt.schedule.T) throw ShapeMismatch("denoise_predict: t outside schedule");
  Workspace ws = net.make_workspace();
  Grid xt(1, cfg.height, cfg.width);
  xt.v = x_t;
  Grid eps = net.forward(xt, cell_grid(x_nom), t, ws);
  return eps.v;
}

std::vector<BinaryCell> sample_cells(const Checkpoint& ckpt, const BinaryCell& x_nom, int count,
                                     std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
  Denoiser net = Denoiser::from_checkpoint(ckpt);
  const DenoiserConfig& cfg = net.config();
  if (x_nom.height != cfg.height || x_nom.width != cfg.width)
    throw ShapeMismatch("sample: nominal resolution does not match checkpoint");
  const NoiseSchedule s = make_schedule(ckpt.schedule);
  const int hw = cfg.height * cfg.width;
  Grid nom = cell_grid(x_nom);

  std::vector<BinaryCell> out(count);
#pragma omp parallel
  {
    Workspace ws = net.make_workspace();
#pragma omp for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
      RngStream rng(derive_seed(seed, std::uint64_t(i), 0x5a3));
      Grid x(1, cfg.height, cfg.width);
      for (auto& v : x.v) v = rng.normal();
      for (int t = s.T; t >= 1; --t) {
        const Grid& eps = net.forward(x, nom, t, ws);
        double a = s.alphas[t - 1], abar = s.alpha_bars[t - 1];
        double c1 = 1.0 / std::sqrt(a);
        double c2 = (1.0 - a) / std::sqrt(1.0 - abar);
        double sigma = std::sqrt(s.betas[t - 1]);
        if (t > 1) {
          for (int p = 0; p < hw; ++p)
            x.v[p] = c1 * (x.v[p] - c2 * eps.v[p]) + sigma * rng.normal();
        } else {
          for (int p = 0; p < hw; ++p) x.v[p] = c1 * (x.v[p] - c2 * eps.v[p]);
        }
      }
      out[i] = signal_to_cell(x.v, cfg.height, cfg.width);
    }
  }
  return out;
}

UqResult mc_property_uq(const Checkpoint& ckpt, const BinaryCell& x_nom, int n,
                        const std::function<std::array<double, 4>(const BinaryCell&)>& property_fn,
                        std::uint64_t seed, double kappa) {
  if (n < 2) throw std::invalid_argument("mc_property_uq: n must be >= 2");
  std::vector<BinaryCell> cells = sample_cells(ckpt, x_nom, n, seed);
  UqResult result;
  for (const auto& cell : cells) {
    try {
      result.samples.push_back(property_fn(cell));
    } catch (const std::exception& ex) {
      ++result.excluded;
      std::clog << "gust: mc_property_uq excluded a sample: " << ex.what() << "\n";
    }
  }
  static const char* kNames[4] = {"C11", "C12", "C22", "C33"};
  for (int comp = 0; comp < 4; ++comp) {
    ComponentStats st;
    st.component = kNames[comp];
    const std::size_t m = result.samples.size();
    if (m == 0) {
      result.stats.push_back(st);
      continue;
    }
    std::vector<double> vals(m);
    for (std::size_t i = 0; i < m; ++i) vals[i] = result.samples[i][comp];
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(m);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var = m > 1 ? var / double(m - 1) : 0.0;
    std::sort(vals.begin(), vals.end());
    auto quantile = [&](double q) {
      double pos = q * double(m - 1);
      std::size_t lo = std::size_t(pos);
      std::size_t hi = std::min(lo + 1, m - 1);
      double frac = pos - double(lo);
      return vals[lo] * (1.0 - frac) + vals[hi] * frac;
    };
    st.mean = mean;
    st.stddev = std::sqrt(var);
    st.q05 = quantile(0.05);
    st.q95 = quantile(0.95);
    st.lcb = mean - kappa * st.stddev;
    result.stats.push_back(st);
  }
  return result;
}

}  // namespace gust
