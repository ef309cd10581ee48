#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gust/geometry.hpp"
#include "gust/perturb.hpp"
#include "gust/rng.hpp"

namespace gust {

struct InvalidSchedule : std::runtime_error {
  explicit InvalidSchedule(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};
struct UnknownBlockIndex : std::runtime_error {
  explicit UnknownBlockIndex(const std::string& what) : std::runtime_error(what) {}
};
struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

enum class ScheduleKind { Linear };

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_1..beta_T at [0..T-1]
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // running product
};

struct ScheduleSpec {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ScheduleKind kind = ScheduleKind::Linear;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                            ScheduleKind kind = ScheduleKind::Linear);
inline NoiseSchedule make_schedule(const ScheduleSpec& s) {
  return make_schedule(s.T, s.beta_start, s.beta_end, s.kind);
}

// Binary cells enter diffusion space as {-1, +1} signals.
std::vector<double> cell_to_signal(const BinaryCell& cell);
BinaryCell signal_to_cell(const std::vector<double>& signal, int height, int width,
                          double threshold = 0.0);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t in [1, T].
std::vector<double> forward_sample(const std::vector<double>& x0, int t,
                                   const std::vector<double>& eps, const NoiseSchedule& s);

enum class LossKind { L1, L2 };

struct TrainConfig {
  int iterations = 1000;
  int batch_size = 16;
  double initial_lr = 8e-4;
  double decay_factor = 0.9;
  int decay_every = 500;
  double lr_floor = 1e-6;
  LossKind loss_kind = LossKind::L1;
  std::uint64_t seed = 0;
};

void validate_train(const TrainConfig& cfg);
double lr_at(const TrainConfig& cfg, int iteration);  // step decay with floor

enum class FreezeKind { Attention, ConditionalNorm, AllInBlock, Bottleneck };

// Symmetric encoder/decoder freezing: index k (1-based) freezes the k-th
// encoder block and the mirrored decoder block (the k-th counting from the
// output side).
struct FreezeSpec {
  std::set<int> frozen_blocks;
  std::set<FreezeKind> frozen_layer_kinds;
};

struct DenoiserConfig {
  int levels = 3;
  int base_channels = 16;
  std::vector<int> channel_mult = {1, 2, 4};
  std::vector<int> attention_levels = {2};
  int time_embed_dim = 64;
  int spade_hidden = 4;
  int bottleneck_hidden = 64;
  int groups = 8;
  int height = 32;
  int width = 32;
};

void validate_denoiser_config(const DenoiserConfig& cfg);
nlohmann::json denoiser_config_to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  ScheduleSpec schedule;
  DenoiserConfig config;
  nlohmann::json metadata;  // iterations, seed, config_hash, ...
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_trace;
};

TrainResult pretrain(const PairedDataset& dataset, const ScheduleSpec& schedule,
                     const DenoiserConfig& dcfg, const TrainConfig& tcfg);
TrainResult finetune(const Checkpoint& ckpt, const PairedDataset& dataset,
                     const FreezeSpec& freeze, const TrainConfig& tcfg);

// Predicted noise for one (x_t, t, nominal) triple.
std::vector<double> denoise_predict(const Checkpoint& ckpt, const std::vector<double>& x_t, int t,
                                    const BinaryCell& x_nom);

// Ancestral sampling conditioned on a nominal design; per-sample derived
// streams, z = 0 at the final step, sigma_t^2 = beta_t.
std::vector<BinaryCell> sample_cells(const Checkpoint& ckpt, const BinaryCell& x_nom, int count,
                                     std::uint64_t seed);

struct ComponentStats {
  std::string component;
  double mean = 0.0, stddev = 0.0, q05 = 0.0, q95 = 0.0, lcb = 0.0;
};

struct UqResult {
  std::vector<std::array<double, 4>> samples;  // C11, C12, C22, C33 per draw
  std::vector<ComponentStats> stats;
  int excluded = 0;
};

// Monte Carlo property uncertainty: n geometry draws mapped through
// property_fn; lcb(kappa) = mean - kappa * std.
UqResult mc_property_uq(const Checkpoint& ckpt, const BinaryCell& x_nom, int n,
                        const std::function<std::array<double, 4>(const BinaryCell&)>& property_fn,
                        std::uint64_t seed, double kappa = 1.645);

}  // namespace gust
