#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gust/baselines.hpp"
#include "gust/diffusion.hpp"
#include "gust/geometry.hpp"
#include "gust/homogenize.hpp"
#include "gust/io.hpp"
#include "gust/metrics.hpp"

namespace gust {

struct GenerationExhausted : std::runtime_error {
  explicit GenerationExhausted(const std::string& what) : std::runtime_error(what) {}
};
struct MissingDependency : std::runtime_error {
  explicit MissingDependency(const std::string& what) : std::runtime_error(what) {}
};
struct ConfigMismatch : std::runtime_error {
  explicit ConfigMismatch(const std::string& what) : std::runtime_error(what) {}
};

enum class NominalFamily { Bars, Crosses, RingSlots, RandomSymmetricLevelset };

NominalFamily family_from_string(const std::string& name);
std::string family_to_string(NominalFamily family);

// Procedural nominal designs: mirror-symmetric about both axes, one
// 4-connected material component, volume fraction in [0.25, 0.75].
std::vector<BinaryCell> gen_nominals(int count, int resolution, NominalFamily family,
                                     std::uint64_t seed);

bool is_mirror_symmetric(const BinaryCell& cell);
bool is_single_component(const BinaryCell& cell);

// PGM importer for pre-segmented real data: threshold then nearest-neighbor
// resize; rejects empty/full binarizations.
std::vector<BinaryCell> import_cells(const std::string& directory, int threshold,
                                     int resolution);
BinaryCell import_cell(const GrayImage& img, int threshold, int resolution);

struct StageConfig {
  int nominals = 0;
  int variants = 0;
  double ffd_sigma = 0.0;
  int ffd_m = 4;
  bool holes = false;
  HoleConfig hole;
  double hole_prob = 0.3;
};

struct ExperimentConfig {
  int resolution = 32;
  std::string family = "random-symmetric-levelset";
  StageConfig pretrain_data;
  StageConfig finetune_data;
  int eval_nominals = 5;
  int eval_samples = 500;
  ScheduleSpec schedule;
  DenoiserConfig denoiser;
  TrainConfig pretrain_train;
  TrainConfig finetune_train;
  FreezeSpec freeze;
  GRFConfig grf;
  double morph_bandwidth = 0.0;  // <= 0: median heuristic
  MetricConfig metrics;
  Material material;
  double void_ratio = 1e-9;
  std::uint64_t seed = 0;
};

ExperimentConfig desk_profile();
ExperimentConfig paper_profile();

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
std::uint64_t config_hash(const ExperimentConfig& cfg);

enum class Stage { Synth, Pretrain, Finetune, Baseline, Sample, Homogenize, Evaluate };

Stage stage_from_string(const std::string& name);
std::string stage_to_string(Stage stage);

// Idempotent stage runner: a completed stage with the same config hash is a
// no-op. Returns the manifest after the stage.
nlohmann::json run_stage(Stage stage, const ExperimentConfig& cfg, const std::string& out_dir);

// KDE overlay SVGs, metric summary CSV and p-value table; requires evaluate.
void emit_report(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace gust
