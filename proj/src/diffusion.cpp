#include "gust/diffusion.hpp"

#include <cmath>

namespace gust {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw InvalidSchedule("timestep count must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw InvalidSchedule("betas must satisfy 0 < beta_start <= beta_end < 1");
  if (kind != ScheduleKind::Linear) throw InvalidSchedule("unknown schedule kind");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double abar = 1.0;
  for (int t = 0; t < T; ++t) {
    double beta = T == 1 ? beta_start
                         : beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
    s.betas[t] = beta;
    s.alphas[t] = 1.0 - beta;
    abar *= s.alphas[t];
    s.alpha_bars[t] = abar;
  }
  return s;
}

std::vector<double> cell_to_signal(const BinaryCell& cell) {
  std::vector<double> out(cell.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cell.values[i] ? 1.0 : -1.0;
  return out;
}

BinaryCell signal_to_cell(const std::vector<double>& signal, int height, int width,
                          double threshold) {
  BinaryCell cell = make_cell(height, width);
  for (std::size_t i = 0; i < signal.size(); ++i) cell.values[i] = signal[i] > threshold ? 1 : 0;
  return cell;
}

std::vector<double> forward_sample(const std::vector<double>& x0, int t,
                                   const std::vector<double>& eps, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw InvalidSchedule("forward_sample: t outside [1, T]");
  if (x0.size() != eps.size()) throw ShapeMismatch("forward_sample: x0/eps size mismatch");
  double abar = s.alpha_bars[t - 1];
  double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

void validate_train(const TrainConfig& cfg) {
  if (cfg.iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (cfg.initial_lr <= 0.0 || cfg.lr_floor <= 0.0 || cfg.lr_floor > cfg.initial_lr)
    throw std::invalid_argument("TrainConfig: need 0 < lr_floor <= initial_lr");
  if (cfg.decay_factor <= 0.0 || cfg.decay_factor > 1.0)
    throw std::invalid_argument("TrainConfig: decay_factor must lie in (0, 1]");
  if (cfg.decay_every < 1) throw std::invalid_argument("TrainConfig: decay_every must be >= 1");
}

double lr_at(const TrainConfig& cfg, int iteration) {
  double lr = cfg.initial_lr * std::pow(cfg.decay_factor, iteration / cfg.decay_every);
  return std::max(lr, cfg.lr_floor);
}

}  // namespace gust
