#include "gust/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace gust {

namespace {

// ---- nominal designs ---------------------------------------------------------

double center(int n) { return (n - 1) / 2.0; }

BinaryCell bars_cell(int n, RngStream& rng) {
  BinaryCell cell = make_cell(n, n, 0);
  double cy = center(n), cx = center(n);
  double th = n * (0.08 + 0.10 * rng.uniform());
  double tv = n * (0.06 + 0.08 * rng.uniform());
  int k = 1 + int(rng.uniform_index(2));
  double off = n * (0.18 + 0.14 * rng.uniform());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double dy = std::abs(r - cy), dxc = std::abs(c - cx);
      bool mat = dy <= th;
      if (k == 1) mat = mat || dxc <= tv;
      mat = mat || std::abs(dxc - off) <= tv;
      cell.at(r, c) = mat ? 1 : 0;
    }
  return cell;
}

BinaryCell crosses_cell(int n, RngStream& rng) {
  BinaryCell cell = make_cell(n, n, 0);
  double cy = center(n), cx = center(n);
  double t1 = n * (0.10 + 0.14 * rng.uniform());
  double t2 = n * (0.10 + 0.14 * rng.uniform());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      cell.at(r, c) = (std::abs(r - cy) <= t1 || std::abs(c - cx) <= t2) ? 1 : 0;
  return cell;
}

BinaryCell ring_slots_cell(int n, RngStream& rng) {
  BinaryCell cell = make_cell(n, n, 0);
  double cy = center(n), cx = center(n);
  double r2 = n * (0.40 + 0.06 * rng.uniform());
  double slot_out = r2 * (0.62 + 0.10 * rng.uniform());
  double slot_in = slot_out - n * (0.07 + 0.05 * rng.uniform());
  double bridge = n * (0.05 + 0.05 * rng.uniform());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double d = std::hypot(std::abs(r - cy), std::abs(c - cx));
      bool mat = d <= r2;
      bool in_slot = d >= slot_in && d <= slot_out;
      bool on_bridge = std::abs(r - cy) <= bridge || std::abs(c - cx) <= bridge;
      if (in_slot && !on_bridge) mat = false;
      cell.at(r, c) = mat ? 1 : 0;
    }
  return cell;
}

BinaryCell levelset_cell(int n, RngStream& rng) {
  const int kModes = 4;
  std::vector<double> amp(kModes * kModes);
  for (int k = 0; k < kModes; ++k)
    for (int l = 0; l < kModes; ++l)
      amp[k * kModes + l] = rng.normal() / (1.0 + k + l);
  std::vector<double> field(std::size_t(n) * n);
  for (int r = 0; r < n; ++r) {
    double ty = std::abs(2.0 * r - (n - 1)) / double(n - 1);
    for (int c = 0; c < n; ++c) {
      double tx = std::abs(2.0 * c - (n - 1)) / double(n - 1);
      double f = 0.0;
      for (int k = 0; k < kModes; ++k)
        for (int l = 0; l < kModes; ++l)
          f += amp[k * kModes + l] * std::cos(M_PI * k * ty) * std::cos(M_PI * l * tx);
      field[std::size_t(r) * n + c] = f;
    }
  }
  double target_vf = 0.3 + 0.4 * rng.uniform();
  std::vector<double> sorted = field;
  std::sort(sorted.begin(), sorted.end());
  double thresh = sorted[std::size_t((1.0 - target_vf) * double(sorted.size() - 1))];
  BinaryCell cell = make_cell(n, n, 0);
  for (std::size_t i = 0; i < field.size(); ++i) cell.values[i] = field[i] >= thresh ? 1 : 0;
  return cell;
}

std::uint64_t cell_hash(const BinaryCell& cell) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto v : cell.values) h = (h ^ v) * 1099511628211ull;
  return h;
}

// ---- config (de)serialization ---------------------------------------------------

nlohmann::json stage_cfg_to_json(const StageConfig& s) {
  return {{"nominals", s.nominals},
          {"variants", s.variants},
          {"ffd_sigma", s.ffd_sigma},
          {"ffd_m", s.ffd_m},
          {"holes", s.holes},
          {"hole_alpha", s.hole.alpha},
          {"hole_cov_mean", s.hole.cov_mean},
          {"hole_cov_std", s.hole.cov_std},
          {"hole_offdiag_fraction_max", s.hole.offdiag_fraction_max},
          {"hole_prob", s.hole_prob}};
}

StageConfig stage_cfg_from_json(const nlohmann::json& j) {
  StageConfig s;
  s.nominals = j.at("nominals").get<int>();
  s.variants = j.at("variants").get<int>();
  s.ffd_sigma = j.at("ffd_sigma").get<double>();
  s.ffd_m = j.at("ffd_m").get<int>();
  s.holes = j.at("holes").get<bool>();
  s.hole.alpha = j.at("hole_alpha").get<double>();
  s.hole.cov_mean = j.at("hole_cov_mean").get<double>();
  s.hole.cov_std = j.at("hole_cov_std").get<double>();
  s.hole.offdiag_fraction_max = j.at("hole_offdiag_fraction_max").get<double>();
  s.hole_prob = j.at("hole_prob").get<double>();
  return s;
}

nlohmann::json train_cfg_to_json(const TrainConfig& t) {
  return {{"iterations", t.iterations},
          {"batch_size", t.batch_size},
          {"initial_lr", t.initial_lr},
          {"decay_factor", t.decay_factor},
          {"decay_every", t.decay_every},
          {"lr_floor", t.lr_floor},
          {"loss", t.loss_kind == LossKind::L1 ? "l1" : "l2"},
          {"seed", t.seed}};
}

TrainConfig train_cfg_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.iterations = j.at("iterations").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.initial_lr = j.at("initial_lr").get<double>();
  t.decay_factor = j.at("decay_factor").get<double>();
  t.decay_every = j.at("decay_every").get<int>();
  t.lr_floor = j.at("lr_floor").get<double>();
  t.loss_kind = j.at("loss").get<std::string>() == "l2" ? LossKind::L2 : LossKind::L1;
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

PerturbPipeline make_pipe(const StageConfig& s) {
  PerturbPipeline pipe;
  pipe.operators.push_back(PipelineOp{OpKind::Ffd, FFDConfig{s.ffd_m, s.ffd_sigma}, {}, {}});
  if (s.holes) {
    pipe.operators.push_back(PipelineOp{OpKind::Hole, {}, s.hole, {}});
    pipe.operator_distribution = {1.0 - s.hole_prob, s.hole_prob};
    pipe.length_distribution = {0.0, 0.5, 0.5};  // one or two operators
  } else {
    pipe.operator_distribution = {1.0};
    pipe.length_distribution = {0.0, 1.0};  // exactly one FFD
  }
  return pipe;
}

// ---- manifest helpers --------------------------------------------------------------

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

nlohmann::json load_manifest(const std::string& out_dir, const ExperimentConfig& cfg) {
  fs::create_directories(out_dir);
  std::string path = out_dir + "/manifest.json";
  std::string want = hash_hex(config_hash(cfg));
  if (fs::exists(path)) {
    nlohmann::json m = nlohmann::json::parse(read_text_file(path));
    if (m.at("config_hash").get<std::string>() != want)
      throw ConfigMismatch("manifest at " + path + " was produced by a different config");
    return m;
  }
  nlohmann::json m;
  m["config_hash"] = want;
  m["seed"] = cfg.seed;
  m["stages"] = nlohmann::json::object();
  return m;
}

void save_manifest(const std::string& out_dir, const nlohmann::json& m) {
  std::string tmp = out_dir + "/manifest.json.tmp";
  write_text_file(tmp, m.dump(2) + "\n");
  fs::rename(tmp, out_dir + "/manifest.json");
}

void require_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path))
    throw MissingDependency(stage + " needs " + path + "; run the upstream stage first");
}

std::vector<BinaryCell> cells_of(const PairedDataset& ds, Role role, int nominal_id) {
  std::vector<BinaryCell> out;
  for (const auto& rec : ds.records)
    if (rec.role == role && (nominal_id < 0 || int(rec.nominal_id) == nominal_id))
      out.push_back(rec.cell);
  return out;
}

PairedDataset samples_dataset(const std::vector<BinaryCell>& nominals,
                              const std::vector<std::vector<BinaryCell>>& per_design) {
  PairedDataset ds;
  ds.variants_per_nominal = per_design.empty() ? 0 : std::uint32_t(per_design.front().size());
  for (std::size_t d = 0; d < nominals.size(); ++d) {
    ds.records.push_back({std::uint32_t(d), Role::Nominal, nominals[d]});
    for (const auto& cell : per_design[d])
      ds.records.push_back({std::uint32_t(d), Role::Fabricated, cell});
  }
  return ds;
}

const std::vector<std::string> kMethodSets = {"gust", "dt", "grf"};
const std::vector<std::string> kComponents = {"C11", "C12", "C22", "C33"};

std::vector<double> component_values(const std::vector<PropertyRow>& rows, int comp) {
  std::vector<double> vals;
  for (const auto& r : rows) {
    if (r.failed) continue;
    switch (comp) {
      case 0: vals.push_back(r.tensor.c11()); break;
      case 1: vals.push_back(r.tensor.c12()); break;
      case 2: vals.push_back(r.tensor.c22()); break;
      default: vals.push_back(r.tensor.c33()); break;
    }
  }
  return vals;
}

}  // namespace

// ---- public: nominals and import -----------------------------------------------------

NominalFamily family_from_string(const std::string& name) {
  if (name == "bars") return NominalFamily::Bars;
  if (name == "crosses") return NominalFamily::Crosses;
  if (name == "ring-slots") return NominalFamily::RingSlots;
  if (name == "random-symmetric-levelset") return NominalFamily::RandomSymmetricLevelset;
  throw std::invalid_argument("unknown nominal family: " + name);
}

std::string family_to_string(NominalFamily family) {
  switch (family) {
    case NominalFamily::Bars: return "bars";
    case NominalFamily::Crosses: return "crosses";
    case NominalFamily::RingSlots: return "ring-slots";
    default: return "random-symmetric-levelset";
  }
}

bool is_mirror_symmetric(const BinaryCell& cell) {
  for (int r = 0; r < cell.height; ++r)
    for (int c = 0; c < cell.width; ++c) {
      if (cell.at(r, c) != cell.at(cell.height - 1 - r, c)) return false;
      if (cell.at(r, c) != cell.at(r, cell.width - 1 - c)) return false;
    }
  return true;
}

bool is_single_component(const BinaryCell& cell) {
  std::size_t material = 0;
  for (auto v : cell.values) material += v;
  if (material == 0) return false;
  std::vector<std::uint8_t> seen(cell.values.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < cell.height && stack.empty(); ++r)
    for (int c = 0; c < cell.width && stack.empty(); ++c)
      if (cell.at(r, c)) stack.emplace_back(r, c);
  seen[std::size_t(stack[0].first) * cell.width + stack[0].second] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    ++reached;
    const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int rr = r + dr[k], cc = c + dc[k];
      if (rr < 0 || rr >= cell.height || cc < 0 || cc >= cell.width) continue;
      std::size_t idx = std::size_t(rr) * cell.width + cc;
      if (cell.values[idx] && !seen[idx]) {
        seen[idx] = 1;
        stack.emplace_back(rr, cc);
      }
    }
  }
  return reached == material;
}

std::vector<BinaryCell> gen_nominals(int count, int resolution, NominalFamily family,
                                     std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("gen_nominals: count must be >= 1");
  if (resolution < 8) throw std::invalid_argument("gen_nominals: resolution must be >= 8");
  std::vector<BinaryCell> out;
  std::set<std::uint64_t> hashes;
  for (int i = 0; i < count; ++i) {
    bool made = false;
    for (int attempt = 0; attempt < 100; ++attempt) {
      RngStream rng(derive_seed(seed, std::uint64_t(i), std::uint64_t(attempt), 0x90));
      BinaryCell cell;
      switch (family) {
        case NominalFamily::Bars: cell = bars_cell(resolution, rng); break;
        case NominalFamily::Crosses: cell = crosses_cell(resolution, rng); break;
        case NominalFamily::RingSlots: cell = ring_slots_cell(resolution, rng); break;
        default: cell = levelset_cell(resolution, rng); break;
      }
      double vf = volume_fraction(cell);
      if (vf < 0.25 || vf > 0.75) continue;
      if (!is_mirror_symmetric(cell) || !is_single_component(cell)) continue;
      if (!hashes.insert(cell_hash(cell)).second) continue;
      out.push_back(std::move(cell));
      made = true;
      break;
    }
    if (!made)
      throw GenerationExhausted("gen_nominals: design " + std::to_string(i) +
                                " failed after 100 attempts");
  }
  return out;
}

BinaryCell import_cell(const GrayImage& img, int threshold, int resolution) {
  if (img.height != img.width)
    throw UnreadableImage("import: image must be square, got " + std::to_string(img.width) +
                          "x" + std::to_string(img.height));
  BinaryCell bin = make_cell(img.height, img.width, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    bin.values[i] = img.pixels[i] >= threshold ? 1 : 0;
  BinaryCell out = make_cell(resolution, resolution, 0);
  const int S = img.height, D = resolution;
  for (int r = 0; r < D; ++r) {
    int sr = std::min(S - 1, int((r + 0.5) * double(S) / double(D)));
    for (int c = 0; c < D; ++c) {
      int sc = std::min(S - 1, int((c + 0.5) * double(S) / double(D)));
      out.at(r, c) = bin.at(sr, sc);
    }
  }
  double vf = volume_fraction(out);
  if (vf == 0.0) throw EmptyCell("import: binarization produced an all-void cell");
  if (vf == 1.0) throw EmptyCell("import: binarization produced an all-material cell (empty void)");
  return out;
}

std::vector<BinaryCell> import_cells(const std::string& directory, int threshold,
                                     int resolution) {
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".pgm") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw UnreadableImage("import: no .pgm files in " + directory);
  std::vector<BinaryCell> cells;
  for (const auto& p : paths) cells.push_back(import_cell(read_pgm(p), threshold, resolution));
  return cells;
}

// ---- public: config ------------------------------------------------------------------

ExperimentConfig desk_profile() {
  ExperimentConfig cfg;
  cfg.resolution = 32;
  cfg.family = "random-symmetric-levelset";
  cfg.pretrain_data = {200, 10, 3.0, 4, false, {}, 0.0};
  cfg.finetune_data = {10, 32, 6.0, 4, true, {}, 0.3};
  cfg.eval_nominals = 5;
  cfg.eval_samples = 500;
  cfg.schedule = {100, 1e-3, 0.2, ScheduleKind::Linear};
  cfg.denoiser.levels = 3;
  cfg.denoiser.base_channels = 12;
  cfg.denoiser.channel_mult = {1, 2, 4};
  cfg.denoiser.attention_levels = {2};
  cfg.denoiser.time_embed_dim = 64;
  cfg.denoiser.spade_hidden = 4;
  cfg.denoiser.bottleneck_hidden = 64;
  cfg.denoiser.groups = 4;
  cfg.denoiser.height = cfg.denoiser.width = 32;
  cfg.pretrain_train = {6000, 16, 8e-4, 0.9, 500, 1e-6, LossKind::L1, 0};
  cfg.finetune_train = {2500, 16, 4e-4, 0.9, 250, 1e-6, LossKind::L1, 0};
  cfg.metrics.k = 5;
  cfg.metrics.perplexity = 10.0;
  cfg.metrics.embedding = EmbeddingKind::Pca;
  cfg.grf = {0.1, 0.1, 1.5, 64, 32};
  cfg.seed = 2024;
  return cfg;
}

ExperimentConfig paper_profile() {
  // Full-scale settings; impractical on a CPU box but recorded as defaults.
  ExperimentConfig cfg = desk_profile();
  cfg.resolution = 64;
  cfg.pretrain_data = {3000, 20, 6.0, 4, false, {}, 0.0};
  cfg.finetune_data = {15, 64, 13.0, 4, true, {}, 0.3};
  cfg.eval_nominals = 30;
  cfg.eval_samples = 3000;
  cfg.schedule = {1000, 1e-4, 0.02, ScheduleKind::Linear};
  cfg.denoiser.levels = 5;
  cfg.denoiser.base_channels = 64;
  cfg.denoiser.channel_mult = {1, 1, 2, 2, 4};
  cfg.denoiser.attention_levels = {0, 1, 2, 3, 4};
  cfg.denoiser.time_embed_dim = 256;
  cfg.denoiser.spade_hidden = 32;
  cfg.denoiser.bottleneck_hidden = 512;
  cfg.denoiser.groups = 8;
  cfg.denoiser.height = cfg.denoiser.width = 64;
  cfg.pretrain_train = {180000, 64, 8e-4, 0.9, 5000, 1e-6, LossKind::L1, 0};
  cfg.finetune_train = {38400, 64, 8e-4, 0.9, 960, 1e-6, LossKind::L1, 0};
  cfg.metrics.embedding = EmbeddingKind::Tsne;
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["resolution"] = cfg.resolution;
  j["family"] = cfg.family;
  j["pretrain_data"] = stage_cfg_to_json(cfg.pretrain_data);
  j["finetune_data"] = stage_cfg_to_json(cfg.finetune_data);
  j["eval"] = {{"nominals", cfg.eval_nominals}, {"samples", cfg.eval_samples}};
  j["schedule"] = {{"T", cfg.schedule.T},
                   {"beta_start", cfg.schedule.beta_start},
                   {"beta_end", cfg.schedule.beta_end}};
  j["denoiser"] = denoiser_config_to_json(cfg.denoiser);
  j["pretrain_train"] = train_cfg_to_json(cfg.pretrain_train);
  j["finetune_train"] = train_cfg_to_json(cfg.finetune_train);
  j["freeze"] = {{"blocks", std::vector<int>(cfg.freeze.frozen_blocks.begin(),
                                             cfg.freeze.frozen_blocks.end())},
                 {"kinds", [&] {
                    std::vector<std::string> kinds;
                    for (auto k : cfg.freeze.frozen_layer_kinds) {
                      switch (k) {
                        case FreezeKind::Attention: kinds.push_back("attention"); break;
                        case FreezeKind::ConditionalNorm:
                          kinds.push_back("conditional-normalization");
                          break;
                        case FreezeKind::AllInBlock: kinds.push_back("all-in-block"); break;
                        case FreezeKind::Bottleneck: kinds.push_back("bottleneck"); break;
                      }
                    }
                    return kinds;
                  }()}};
  j["grf"] = {{"ell1", cfg.grf.ell1},
              {"ell2", cfg.grf.ell2},
              {"sigma2", cfg.grf.sigma2},
              {"modes", cfg.grf.modes},
              {"grid", cfg.grf.grid}};
  j["morph_bandwidth"] = cfg.morph_bandwidth;
  j["metrics"] = {{"k", cfg.metrics.k},
                  {"perplexity", cfg.metrics.perplexity},
                  {"embedding", cfg.metrics.embedding == EmbeddingKind::Tsne ? "tsne" : "pca"},
                  {"seed", cfg.metrics.seed}};
  j["material"] = {{"E", cfg.material.E}, {"nu", cfg.material.nu}};
  j["void_ratio"] = cfg.void_ratio;
  j["seed"] = cfg.seed;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.resolution = j.at("resolution").get<int>();
  cfg.family = j.at("family").get<std::string>();
  family_from_string(cfg.family);  // validate
  cfg.pretrain_data = stage_cfg_from_json(j.at("pretrain_data"));
  cfg.finetune_data = stage_cfg_from_json(j.at("finetune_data"));
  cfg.eval_nominals = j.at("eval").at("nominals").get<int>();
  cfg.eval_samples = j.at("eval").at("samples").get<int>();
  cfg.schedule.T = j.at("schedule").at("T").get<int>();
  cfg.schedule.beta_start = j.at("schedule").at("beta_start").get<double>();
  cfg.schedule.beta_end = j.at("schedule").at("beta_end").get<double>();
  cfg.denoiser = denoiser_config_from_json(j.at("denoiser"));
  cfg.pretrain_train = train_cfg_from_json(j.at("pretrain_train"));
  cfg.finetune_train = train_cfg_from_json(j.at("finetune_train"));
  for (int b : j.at("freeze").at("blocks").get<std::vector<int>>())
    cfg.freeze.frozen_blocks.insert(b);
  for (const auto& k : j.at("freeze").at("kinds").get<std::vector<std::string>>()) {
    if (k == "attention") cfg.freeze.frozen_layer_kinds.insert(FreezeKind::Attention);
    else if (k == "conditional-normalization")
      cfg.freeze.frozen_layer_kinds.insert(FreezeKind::ConditionalNorm);
    else if (k == "all-in-block") cfg.freeze.frozen_layer_kinds.insert(FreezeKind::AllInBlock);
    else if (k == "bottleneck") cfg.freeze.frozen_layer_kinds.insert(FreezeKind::Bottleneck);
    else throw std::invalid_argument("unknown freeze kind: " + k);
  }
  cfg.grf.ell1 = j.at("grf").at("ell1").get<double>();
  cfg.grf.ell2 = j.at("grf").at("ell2").get<double>();
  cfg.grf.sigma2 = j.at("grf").at("sigma2").get<double>();
  cfg.grf.modes = j.at("grf").at("modes").get<int>();
  cfg.grf.grid = j.at("grf").at("grid").get<int>();
  cfg.morph_bandwidth = j.at("morph_bandwidth").get<double>();
  cfg.metrics.k = j.at("metrics").at("k").get<int>();
  cfg.metrics.perplexity = j.at("metrics").at("perplexity").get<double>();
  cfg.metrics.embedding = j.at("metrics").at("embedding").get<std::string>() == "tsne"
                              ? EmbeddingKind::Tsne
                              : EmbeddingKind::Pca;
  cfg.metrics.seed = j.at("metrics").at("seed").get<std::uint64_t>();
  cfg.material.E = j.at("material").at("E").get<double>();
  cfg.material.nu = j.at("material").at("nu").get<double>();
  cfg.void_ratio = j.at("void_ratio").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::string canon = config_to_json(cfg).dump();  // object keys are sorted
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canon) h = (h ^ ch) * 1099511628211ull;
  return h;
}

Stage stage_from_string(const std::string& name) {
  if (name == "synth") return Stage::Synth;
  if (name == "pretrain") return Stage::Pretrain;
  if (name == "finetune") return Stage::Finetune;
  if (name == "baseline") return Stage::Baseline;
  if (name == "sample") return Stage::Sample;
  if (name == "homogenize") return Stage::Homogenize;
  if (name == "evaluate") return Stage::Evaluate;
  throw std::invalid_argument("unknown stage: " + name);
}

std::string stage_to_string(Stage stage) {
  switch (stage) {
    case Stage::Synth: return "synth";
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    case Stage::Baseline: return "baseline";
    case Stage::Sample: return "sample";
    case Stage::Homogenize: return "homogenize";
    default: return "evaluate";
  }
}

// ---- stages ---------------------------------------------------------------------------

namespace {

void write_loss_csv(const std::vector<double>& trace, const std::string& path) {
  std::string out = "iteration,loss\n";
  char buf[48];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, trace[i]);
    out += buf;
  }
  write_text_file(path, out);
}

void stage_synth(const ExperimentConfig& cfg, const std::string& out) {
  NominalFamily family = family_from_string(cfg.family);
  int total = cfg.pretrain_data.nominals + cfg.finetune_data.nominals + cfg.eval_nominals;
  auto all = gen_nominals(total, cfg.resolution, family, derive_seed(cfg.seed, 0x401));
  std::vector<BinaryCell> pre(all.begin(), all.begin() + cfg.pretrain_data.nominals);
  std::vector<BinaryCell> fine(all.begin() + cfg.pretrain_data.nominals,
                               all.begin() + cfg.pretrain_data.nominals +
                                   cfg.finetune_data.nominals);
  std::vector<BinaryCell> eval(all.end() - cfg.eval_nominals, all.end());

  write_dataset(build_dataset(pre, make_pipe(cfg.pretrain_data), cfg.pretrain_data.variants,
                              derive_seed(cfg.seed, 0x402)),
                out + "/pretrain.gust");
  write_dataset(build_dataset(fine, make_pipe(cfg.finetune_data), cfg.finetune_data.variants,
                              derive_seed(cfg.seed, 0x403)),
                out + "/finetune.gust");
  write_dataset(build_dataset(eval, make_pipe(cfg.finetune_data), cfg.eval_samples,
                              derive_seed(cfg.seed, 0x404)),
                out + "/eval_truth.gust");
  PairedDataset noms;
  noms.variants_per_nominal = 0;
  for (std::size_t d = 0; d < eval.size(); ++d)
    noms.records.push_back({std::uint32_t(d), Role::Nominal, eval[d]});
  write_dataset(noms, out + "/eval_nominals.gust");
}

void stage_pretrain(const ExperimentConfig& cfg, const std::string& out) {
  require_file(out + "/pretrain.gust", "pretrain");
  PairedDataset ds = read_dataset(out + "/pretrain.gust");
  DenoiserConfig dcfg = cfg.denoiser;
  dcfg.height = dcfg.width = cfg.resolution;
  TrainConfig tcfg = cfg.pretrain_train;
  tcfg.seed = derive_seed(cfg.seed, 0x501);
  TrainResult r = pretrain(ds, cfg.schedule, dcfg, tcfg);
  r.checkpoint.metadata["config_hash"] = hash_hex(config_hash(cfg));
  write_checkpoint(r.checkpoint, out + "/gust_pretrained.gckp");
  write_loss_csv(r.loss_trace, out + "/pretrain_loss.csv");
}

void stage_finetune(const ExperimentConfig& cfg, const std::string& out) {
  require_file(out + "/gust_pretrained.gckp", "finetune");
  require_file(out + "/finetune.gust", "finetune");
  Checkpoint ckpt = read_checkpoint(out + "/gust_pretrained.gckp");
  PairedDataset ds = read_dataset(out + "/finetune.gust");
  TrainConfig tcfg = cfg.finetune_train;
  tcfg.seed = derive_seed(cfg.seed, 0x502);
  TrainResult r = finetune(ckpt, ds, cfg.freeze, tcfg);
  r.checkpoint.metadata["config_hash"] = hash_hex(config_hash(cfg));
  write_checkpoint(r.checkpoint, out + "/gust_finetuned.gckp");
  write_loss_csv(r.loss_trace, out + "/finetune_loss.csv");
}

void stage_baseline(const ExperimentConfig& cfg, const std::string& out) {
  require_file(out + "/finetune.gust", "baseline");
  require_file(out + "/eval_nominals.gust", "baseline");
  PairedDataset fine = read_dataset(out + "/finetune.gust");
  PairedDataset eval_noms = read_dataset(out + "/eval_nominals.gust");
  std::vector<BinaryCell> eval_cells = cells_of(eval_noms, Role::Nominal, -1);

  // direct training: same architecture and schedule, random initialization
  DenoiserConfig dcfg = cfg.denoiser;
  dcfg.height = dcfg.width = cfg.resolution;
  TrainConfig tcfg = cfg.finetune_train;
  tcfg.seed = derive_seed(cfg.seed, 0x503);
  TrainResult dt = pretrain(fine, cfg.schedule, dcfg, tcfg);
  dt.checkpoint.metadata["config_hash"] = hash_hex(config_hash(cfg));
  dt.checkpoint.metadata["stage"] = "direct-training";
  write_checkpoint(dt.checkpoint, out + "/dt.gckp");
  write_loss_csv(dt.loss_trace, out + "/dt_loss.csv");

  // dilation-erosion MLE fit on the fine-tuning data
  std::vector<BinaryCell> fine_noms = cells_of(fine, Role::Nominal, -1);
  std::vector<BinaryCell> fine_fabs = cells_of(fine, Role::Fabricated, -1);
  MorphFit fit =
      fit_morph_scales(fine_noms, fine_fabs, cfg.morph_bandwidth, derive_seed(cfg.seed, 0x504));
  nlohmann::json fit_json = {{"alpha", fit.alpha_hat.size},
                             {"beta", fit.beta_hat.size},
                             {"neg_loglik_dilate", fit.neg_loglik_dilate},
                             {"neg_loglik_erode", fit.neg_loglik_erode},
                             {"bandwidth", fit.bandwidth},
                             {"stalled", fit.stalled}};
  write_text_file(out + "/morph_fit.json", fit_json.dump(2) + "\n");

  // point estimates per held-out design
  std::vector<std::vector<BinaryCell>> morph(eval_cells.size());
  for (std::size_t d = 0; d < eval_cells.size(); ++d)
    morph[d] = {dilate(eval_cells[d], fit.alpha_hat), erode(eval_cells[d], fit.beta_hat)};
  write_dataset(samples_dataset(eval_cells, morph), out + "/morph_samples.gust");

  // GRF samples per held-out design
  KLBasis basis = kl_basis(cfg.grf);
  std::vector<std::vector<BinaryCell>> grf(eval_cells.size());
  for (std::size_t d = 0; d < eval_cells.size(); ++d) {
    grf[d].resize(cfg.eval_samples);
#pragma omp parallel for schedule(dynamic)
    for (long long s = 0; s < (long long)cfg.eval_samples; ++s) {
      RngStream rng(derive_seed(cfg.seed, 0x505, d, std::uint64_t(s)));
      grf[d][s] = grf_perturb(eval_cells[d], basis, rng);
    }
  }
  write_dataset(samples_dataset(eval_cells, grf), out + "/grf_samples.gust");
}

void stage_sample(const ExperimentConfig& cfg, const std::string& out) {
  require_file(out + "/gust_finetuned.gckp", "sample");
  require_file(out + "/dt.gckp", "sample");
  require_file(out + "/eval_nominals.gust", "sample");
  PairedDataset eval_noms = read_dataset(out + "/eval_nominals.gust");
  std::vector<BinaryCell> eval_cells = cells_of(eval_noms, Role::Nominal, -1);
  struct Job {
    const char* ckpt;
    const char* dst;
    std::uint64_t salt;
  };
  for (const Job& job : {Job{"/gust_finetuned.gckp", "/gust_samples.gust", 0x601},
                         Job{"/dt.gckp", "/dt_samples.gust", 0x602}}) {
    Checkpoint ckpt = read_checkpoint(out + job.ckpt);
    std::vector<std::vector<BinaryCell>> samples(eval_cells.size());
    for (std::size_t d = 0; d < eval_cells.size(); ++d)
      samples[d] = sample_cells(ckpt, eval_cells[d], cfg.eval_samples,
                                derive_seed(cfg.seed, job.salt, d));
    write_dataset(samples_dataset(eval_cells, samples), out + job.dst);
  }
}

void stage_homogenize(const ExperimentConfig& cfg, const std::string& out) {
  require_file(out + "/eval_truth.gust", "homogenize");
  fs::create_directories(out + "/properties");
  std::vector<std::pair<std::string, std::string>> sets = {
      {"truth", out + "/eval_truth.gust"},
      {"gust", out + "/gust_samples.gust"},
      {"dt", out + "/dt_samples.gust"},
      {"grf", out + "/grf_samples.gust"},
      {"morph", out + "/morph_samples.gust"}};
  for (const auto& [name, path] : sets) {
    require_file(path, "homogenize");
    PairedDataset ds = read_dataset(path);
    for (int d = 0; d < cfg.eval_nominals; ++d) {
      std::vector<BinaryCell> cells = cells_of(ds, Role::Fabricated, d);
      auto rows = property_table(cells, cfg.material, cfg.void_ratio);
      write_property_csv(rows, out + "/properties/" + name + "_d" + std::to_string(d) + ".csv");
    }
  }
}

void stage_evaluate(const ExperimentConfig& cfg, const std::string& out) {
  require_file(out + "/eval_truth.gust", "evaluate");
  PairedDataset truth = read_dataset(out + "/eval_truth.gust");
  std::string csv = "design,method,density,coverage,w1_C11,w1_C12,w1_C22,w1_C33\n";
  for (const std::string& method : kMethodSets) {
    std::string path = out + "/" + method + "_samples.gust";
    require_file(path, "evaluate");
    PairedDataset gen = read_dataset(path);
    for (int d = 0; d < cfg.eval_nominals; ++d) {
      std::vector<BinaryCell> truth_cells = cells_of(truth, Role::Fabricated, d);
      std::vector<BinaryCell> gen_cells = cells_of(gen, Role::Fabricated, d);
      auto [re, ge] = embed_cells(truth_cells, gen_cells, cfg.metrics);
      double dens = density(re, ge, cfg.metrics.k);
      double cov = coverage(re, ge, cfg.metrics.k);
      std::string truth_csv = out + "/properties/truth_d" + std::to_string(d) + ".csv";
      std::string gen_csv = out + "/properties/" + method + "_d" + std::to_string(d) + ".csv";
      require_file(truth_csv, "evaluate");
      require_file(gen_csv, "evaluate");
      auto t_rows = read_property_csv(truth_csv);
      auto g_rows = read_property_csv(gen_csv);
      char buf[220];
      std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g", d, method.c_str(), dens, cov);
      csv += buf;
      for (int comp = 0; comp < 4; ++comp) {
        double w1 = wasserstein1(component_values(t_rows, comp), component_values(g_rows, comp));
        std::snprintf(buf, sizeof buf, ",%.9g", w1);
        csv += buf;
      }
      csv += "\n";
    }
  }
  write_text_file(out + "/metrics.csv", csv);
}

}  // namespace

nlohmann::json run_stage(Stage stage, const ExperimentConfig& cfg, const std::string& out_dir) {
  nlohmann::json manifest = load_manifest(out_dir, cfg);
  std::string name = stage_to_string(stage);
  if (manifest["stages"].contains(name) && manifest["stages"][name].value("completed", false)) {
    return manifest;  // idempotent re-run
  }
  write_text_file(out_dir + "/config.json", config_to_json(cfg).dump(2) + "\n");
  auto start = std::chrono::steady_clock::now();
  switch (stage) {
    case Stage::Synth: stage_synth(cfg, out_dir); break;
    case Stage::Pretrain: stage_pretrain(cfg, out_dir); break;
    case Stage::Finetune: stage_finetune(cfg, out_dir); break;
    case Stage::Baseline: stage_baseline(cfg, out_dir); break;
    case Stage::Sample: stage_sample(cfg, out_dir); break;
    case Stage::Homogenize: stage_homogenize(cfg, out_dir); break;
    case Stage::Evaluate: stage_evaluate(cfg, out_dir); break;
  }
  double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest["stages"][name] = {{"completed", true}, {"wall_s", wall}};
  save_manifest(out_dir, manifest);
  return manifest;
}

void emit_report(const ExperimentConfig& cfg, const std::string& out_dir) {
  require_file(out_dir + "/metrics.csv", "report");
  fs::create_directories(out_dir + "/report");

  // parse metrics.csv
  std::istringstream in(read_text_file(out_dir + "/metrics.csv"));
  std::string line;
  std::getline(in, line);
  const std::vector<std::string> metric_names = {"density", "coverage", "w1_C11",
                                                 "w1_C12",  "w1_C22",   "w1_C33"};
  std::map<std::string, std::map<std::string, std::vector<double>>> values;  // method -> metric
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    for (std::size_t m = 0; m < metric_names.size(); ++m)
      values[f[1]][metric_names[m]].push_back(std::stod(f[2 + m]));
  }

  std::string summary = "method,metric,mean,std\n";
  for (const auto& [method, metrics] : values)
    for (const auto& name : metric_names) {
      const auto& vals = metrics.at(name);
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= double(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var = vals.size() > 1 ? var / double(vals.size() - 1) : 0.0;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g\n", method.c_str(), name.c_str(), mean,
                    std::sqrt(var));
      summary += buf;
    }
  write_text_file(out_dir + "/report/summary.csv", summary);

  std::string pvals = "metric,method,p_value_vs_gust\n";
  for (const auto& name : metric_names)
    for (const std::string& method : {"grf", "dt"}) {
      if (!values.count(method) || !values.count("gust")) continue;
      double p = 1.0;
      try {
        p = welch_p_value(values[method][name], values["gust"][name]);
      } catch (const DegenerateVariance&) {
        p = 1.0;  // identical or constant per-design metrics
      }
      char buf[120];
      std::snprintf(buf, sizeof buf, "%s,%s,%.6g\n", name.c_str(), method.c_str(), p);
      pvals += buf;
    }
  write_text_file(out_dir + "/report/pvalues.csv", pvals);

  // per-design KDE overlays per elastic component
  const std::vector<std::pair<std::string, std::string>> palette = {
      {"truth", "#000000"}, {"gust", "#1f77b4"}, {"dt", "#ff7f0e"}, {"grf", "#2ca02c"}};
  for (int d = 0; d < cfg.eval_nominals; ++d) {
    std::vector<std::vector<PropertyRow>> rows;
    bool missing = false;
    for (const auto& [set, color] : palette) {
      std::string path = out_dir + "/properties/" + set + "_d" + std::to_string(d) + ".csv";
      if (!fs::exists(path)) {
        missing = true;
        break;
      }
      rows.push_back(read_property_csv(path));
    }
    if (missing) continue;
    std::vector<PropertyRow> morph_rows;
    std::string morph_path = out_dir + "/properties/morph_d" + std::to_string(d) + ".csv";
    if (fs::exists(morph_path)) morph_rows = read_property_csv(morph_path);
    for (int comp = 0; comp < 4; ++comp) {
      std::vector<PlotSeries> series;
      double peak = 0.0;
      for (std::size_t s = 0; s < palette.size(); ++s) {
        auto vals = component_values(rows[s], comp);
        if (vals.size() < 2) continue;
        KdeCurve curve = kde_curve(vals);
        for (double v : curve.density) peak = std::max(peak, v);
        series.push_back({palette[s].first, palette[s].second, curve.grid, curve.density});
      }
      // dilation/erosion point estimates as vertical markers
      auto morph_vals = component_values(morph_rows, comp);
      for (double v : morph_vals)
        series.push_back({"morph", "#d62728", {v, v}, {0.0, peak > 0 ? peak : 1.0}});
      std::string svg = svg_line_plot("design " + std::to_string(d) + " " + kComponents[comp],
                                      series);
      write_text_file(out_dir + "/report/kde_d" + std::to_string(d) + "_" + kComponents[comp] +
                          ".svg",
                      svg);
    }
  }
}

}  // namespace gust
