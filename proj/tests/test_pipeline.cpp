#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "gust/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gust;

namespace {

std::string fresh_dir(const std::string& tag) {
  std::string dir = (fs::temp_directory_path() / ("gust_test_" + tag)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PairedDataset random_dataset(RngStream& rng) {
  PairedDataset ds;
  int h = 4 + int(rng.uniform_index(5));
  int w = 4 + int(rng.uniform_index(5));
  int noms = 1 + int(rng.uniform_index(3));
  int vars = int(rng.uniform_index(3));
  ds.variants_per_nominal = std::uint32_t(vars);
  for (int n = 0; n < noms; ++n) {
    DatasetRecord rec;
    rec.nominal_id = std::uint32_t(n);
    rec.role = Role::Nominal;
    rec.cell = make_cell(h, w);
    for (auto& v : rec.cell.values) v = rng.uniform() < 0.5;
    ds.records.push_back(rec);
    for (int k = 0; k < vars; ++k) {
      rec.role = Role::Fabricated;
      for (auto& v : rec.cell.values) v = rng.uniform() < 0.5;
      ds.records.push_back(rec);
    }
  }
  return ds;
}

ExperimentConfig micro_config() {
  ExperimentConfig cfg = desk_profile();
  cfg.resolution = 16;
  cfg.family = "random-symmetric-levelset";
  cfg.pretrain_data = {6, 2, 2.0, 4, false, {}, 0.0};
  cfg.finetune_data = {3, 4, 3.0, 4, true, {}, 0.3};
  cfg.eval_nominals = 2;
  cfg.eval_samples = 12;
  cfg.schedule = {10, 1e-2, 0.3, ScheduleKind::Linear};
  cfg.denoiser.levels = 2;
  cfg.denoiser.base_channels = 4;
  cfg.denoiser.channel_mult = {1, 2};
  cfg.denoiser.attention_levels = {1};
  cfg.denoiser.time_embed_dim = 8;
  cfg.denoiser.spade_hidden = 2;
  cfg.denoiser.bottleneck_hidden = 8;
  cfg.denoiser.groups = 4;
  cfg.denoiser.height = cfg.denoiser.width = 16;
  cfg.pretrain_train = {40, 4, 8e-4, 0.9, 20, 1e-6, LossKind::L1, 0};
  cfg.finetune_train = {30, 4, 4e-4, 0.9, 15, 1e-6, LossKind::L1, 0};
  cfg.freeze.frozen_blocks = {1};
  cfg.grf = {0.2, 0.2, 1.5, 16, 8};
  cfg.metrics.k = 3;
  cfg.metrics.embedding = EmbeddingKind::Pca;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("gen_nominals: family contracts") {
  SUBCASE("crosses are plus-shaped with valid volume fraction") {
    auto cells = gen_nominals(3, 32, NominalFamily::Crosses, 7);
    for (const auto& cell : cells) {
      double vf = volume_fraction(cell);
      CHECK(vf >= 0.25);
      CHECK(vf <= 0.75);
      // both center rows/cols are material arms
      for (int c = 0; c < 32; ++c) CHECK(cell.at(15, c) == 1);
      for (int r = 0; r < 32; ++r) CHECK(cell.at(r, 15) == 1);
      CHECK(cell.at(0, 0) == 0);  // corners stay void
    }
  }
  SUBCASE("every family yields symmetric connected designs") {
    for (auto family : {NominalFamily::Bars, NominalFamily::Crosses, NominalFamily::RingSlots,
                        NominalFamily::RandomSymmetricLevelset}) {
      auto cells = gen_nominals(4, 24, family, 11);
      for (const auto& cell : cells) {
        CHECK(is_mirror_symmetric(cell));
        CHECK(is_single_component(cell));
      }
    }
  }
  SUBCASE("50 levelset designs pass the validator") {
    auto cells = gen_nominals(50, 32, NominalFamily::RandomSymmetricLevelset, 5);
    CHECK(cells.size() == 50);
    for (const auto& cell : cells) {
      double vf = volume_fraction(cell);
      CHECK(vf >= 0.25);
      CHECK(vf <= 0.75);
      CHECK(is_mirror_symmetric(cell));
      CHECK(is_single_component(cell));
    }
  }
  SUBCASE("deterministic under seed") {
    auto a = gen_nominals(5, 16, NominalFamily::Bars, 3);
    auto b = gen_nominals(5, 16, NominalFamily::Bars, 3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("import_cells: thresholding, resizing, rejection") {
  std::string dir = fresh_dir("import");

  SUBCASE("already-binary image imports identically") {
    GrayImage img;
    img.height = img.width = 16;
    img.pixels.assign(256, 0);
    RngStream rng(2);
    for (auto& p : img.pixels) p = rng.uniform() < 0.5 ? 0 : 255;
    img.pixels[0] = 0;
    img.pixels[255] = 255;
    write_pgm(img, dir + "/cell.pgm");
    auto cells = import_cells(dir, 128, 16);
    REQUIRE(cells.size() == 1);
    for (int i = 0; i < 256; ++i) CHECK(cells[0].values[i] == (img.pixels[i] >= 128 ? 1 : 0));
  }

  SUBCASE("uniform gray is rejected as EmptyCell") {
    GrayImage img;
    img.height = img.width = 8;
    img.pixels.assign(64, 200);
    write_pgm(img, dir + "/gray.pgm");
    CHECK_THROWS_AS(import_cell(img, 128, 8), EmptyCell);
  }

  SUBCASE("downscaling matches the nearest-neighbor index map") {
    GrayImage img;
    img.height = img.width = 32;
    img.pixels.assign(1024, 0);
    RngStream rng(8);
    for (auto& p : img.pixels) p = rng.uniform() < 0.5 ? 0 : 255;
    BinaryCell got = import_cell(img, 128, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        int sr = int((r + 0.5) * 32.0 / 16.0);
        int sc = int((c + 0.5) * 32.0 / 16.0);
        CHECK(got.at(r, c) == (img.pixels[sr * 32 + sc] >= 128 ? 1 : 0));
      }
  }

  SUBCASE("non-square raises UnreadableImage") {
    GrayImage img;
    img.height = 8;
    img.width = 10;
    img.pixels.assign(80, 255);
    CHECK_THROWS_AS(import_cell(img, 128, 8), UnreadableImage);
  }

  SUBCASE("ascii P2 parses like binary P5") {
    GrayImage img;
    img.height = img.width = 4;
    img.pixels = {0,   255, 0,   255, 255, 0, 255, 0,
                  128, 64,  200, 30,  255, 0, 0,   255};
    write_pgm(img, dir + "/p5.pgm");
    std::string p2 = "P2\n# comment\n4 4\n255\n";
    for (auto p : img.pixels) p2 += std::to_string(int(p)) + "\n";
    write_text_file(dir + "/p2.pgm", p2);
    GrayImage a = read_pgm(dir + "/p5.pgm");
    GrayImage b = read_pgm(dir + "/p2.pgm");
    CHECK(a.pixels == b.pixels);
  }
}

TEST_CASE("dataset files: 1000 random round trips are bit-identical") {
  std::string dir = fresh_dir("dsio");
  RngStream rng(12);
  for (int k = 0; k < 1000; ++k) {
    PairedDataset ds = random_dataset(rng);
    std::string path = dir + "/ds.gust";
    write_dataset(ds, path);
    std::string bytes1 = read_text_file(path);
    PairedDataset back = read_dataset(path);
    write_dataset(back, path);
    CHECK(read_text_file(path) == bytes1);
    REQUIRE(back.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      CHECK(back.records[i].cell == ds.records[i].cell);
  }
}

TEST_CASE("dataset files: malformed input raises FormatError") {
  std::string dir = fresh_dir("dsbad");
  write_text_file(dir + "/bad.gust", "NOPE");
  CHECK_THROWS_AS(read_dataset(dir + "/bad.gust"), FormatError);
  write_text_file(dir + "/trunc.gust", std::string("GUST") + std::string(8, '\0'));
  CHECK_THROWS_AS(read_dataset(dir + "/trunc.gust"), FormatError);
}

TEST_CASE("checkpoint files: round trip bit-exact") {
  std::string dir = fresh_dir("ckptio");
  Checkpoint ckpt;
  ckpt.schedule = {12, 1e-3, 0.2, ScheduleKind::Linear};
  ckpt.config.levels = 1;
  ckpt.config.base_channels = 2;
  ckpt.config.channel_mult = {1};
  ckpt.config.attention_levels = {};
  ckpt.config.time_embed_dim = 4;
  ckpt.config.spade_hidden = 1;
  ckpt.config.bottleneck_hidden = 2;
  ckpt.config.height = ckpt.config.width = 8;
  ckpt.metadata = {{"stage", "test"}, {"iterations", 5}};
  RngStream rng(4);
  ckpt.tensors.push_back({"a.w", {2, 3}, {}});
  ckpt.tensors.push_back({"b.b", {4}, {}});
  for (auto& t : ckpt.tensors) {
    std::size_t n = 1;
    for (int d : t.shape) n *= std::size_t(d);
    t.values.resize(n);
    for (auto& v : t.values) v = rng.normal();
  }

  std::string path = dir + "/c.gckp";
  write_checkpoint(ckpt, path);
  std::string bytes1 = read_text_file(path);
  Checkpoint back = read_checkpoint(path);
  write_checkpoint(back, path);
  CHECK(read_text_file(path) == bytes1);
  CHECK(back.schedule.T == 12);
  CHECK(back.config.height == 8);
  CHECK(back.metadata.at("iterations").get<int>() == 5);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].shape == std::vector<int>{2, 3});
  for (std::size_t i = 0; i < back.tensors[0].values.size(); ++i)
    CHECK(float(back.tensors[0].values[i]) == float(ckpt.tensors[0].values[i]));
}

TEST_CASE("config: json round trip and stable hash") {
  ExperimentConfig cfg = micro_config();
  nlohmann::json j = config_to_json(cfg);
  ExperimentConfig back = config_from_json(j);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(config_to_json(back).dump() == j.dump());

  ExperimentConfig other = micro_config();
  other.seed = 123456;
  CHECK(config_hash(other) != config_hash(cfg));

  // profiles parse back through json
  CHECK(config_hash(config_from_json(config_to_json(desk_profile()))) ==
        config_hash(desk_profile()));
  CHECK(config_hash(config_from_json(config_to_json(paper_profile()))) ==
        config_hash(paper_profile()));
}

TEST_CASE("run_stage: full micro pipeline, idempotence, report") {
  ExperimentConfig cfg = micro_config();
  std::string out = fresh_dir("micro");

  for (auto stage : {Stage::Synth, Stage::Pretrain, Stage::Finetune, Stage::Baseline,
                     Stage::Sample, Stage::Homogenize, Stage::Evaluate})
    run_stage(stage, cfg, out);

  nlohmann::json manifest = nlohmann::json::parse(read_text_file(out + "/manifest.json"));
  CHECK(manifest["stages"].size() == 7);
  for (const auto& [name, entry] : manifest["stages"].items())
    CHECK(entry["completed"].get<bool>());

  CHECK(fs::exists(out + "/pretrain.gust"));
  CHECK(fs::exists(out + "/gust_finetuned.gckp"));
  CHECK(fs::exists(out + "/metrics.csv"));
  CHECK(fs::exists(out + "/properties/truth_d0.csv"));
  CHECK(fs::exists(out + "/morph_fit.json"));

  SUBCASE("evaluate output matches direct library calls") {
    PairedDataset truth = read_dataset(out + "/eval_truth.gust");
    PairedDataset gen = read_dataset(out + "/gust_samples.gust");
    std::vector<BinaryCell> truth_cells, gen_cells;
    for (const auto& rec : truth.records)
      if (rec.role == Role::Fabricated && rec.nominal_id == 0) truth_cells.push_back(rec.cell);
    for (const auto& rec : gen.records)
      if (rec.role == Role::Fabricated && rec.nominal_id == 0) gen_cells.push_back(rec.cell);
    auto [re, ge] = embed_cells(truth_cells, gen_cells, cfg.metrics);
    double want_density = density(re, ge, cfg.metrics.k);
    double want_coverage = coverage(re, ge, cfg.metrics.k);

    auto t_rows = read_property_csv(out + "/properties/truth_d0.csv");
    auto g_rows = read_property_csv(out + "/properties/gust_d0.csv");
    auto vals = [](const std::vector<PropertyRow>& rows) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (!r.failed) v.push_back(r.tensor.c11());
      return v;
    };
    double want_w1 = wasserstein1(vals(t_rows), vals(g_rows));

    std::istringstream in(read_text_file(out + "/metrics.csv"));
    std::string line;
    std::getline(in, line);  // header
    bool found = false;
    while (std::getline(in, line)) {
      if (line.rfind("0,gust,", 0) != 0) continue;
      found = true;
      std::vector<std::string> f;
      std::size_t start = 0;
      while (true) {
        std::size_t comma = line.find(',', start);
        f.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      CHECK(std::stod(f[2]) == doctest::Approx(want_density).epsilon(1e-8));
      CHECK(std::stod(f[3]) == doctest::Approx(want_coverage).epsilon(1e-8));
      CHECK(std::stod(f[4]) == doctest::Approx(want_w1).epsilon(1e-7));
    }
    CHECK(found);
  }

  SUBCASE("summary mean/std equal a recomputation from metrics.csv") {
    emit_report(cfg, out);
    // gather density values per method from metrics.csv
    std::map<std::string, std::vector<double>> dens;
    std::istringstream in(read_text_file(out + "/metrics.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
      dens[line.substr(c1 + 1, c2 - c1 - 1)].push_back(std::stod(line.substr(c2 + 1, c3 - c2 - 1)));
    }
    std::istringstream sin(read_text_file(out + "/report/summary.csv"));
    std::getline(sin, line);
    int checked = 0;
    while (std::getline(sin, line)) {
      if (line.find(",density,") == std::string::npos) continue;
      std::size_t c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
      std::string method = line.substr(0, c1);
      double mean = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
      double stddev = std::stod(line.substr(c3 + 1));
      const auto& v = dens.at(method);
      double want_mean = 0.0;
      for (double x : v) want_mean += x;
      want_mean /= double(v.size());
      double want_var = 0.0;
      for (double x : v) want_var += (x - want_mean) * (x - want_mean);
      want_var = v.size() > 1 ? want_var / double(v.size() - 1) : 0.0;
      CHECK(mean == doctest::Approx(want_mean).epsilon(1e-7));
      CHECK(stddev == doctest::Approx(std::sqrt(want_var)).epsilon(1e-6));
      ++checked;
    }
    CHECK(checked == 3);
  }

  SUBCASE("re-running a completed stage is a no-op") {
    std::string before = read_text_file(out + "/metrics.csv");
    auto t0 = fs::last_write_time(out + "/gust_finetuned.gckp");
    run_stage(Stage::Finetune, cfg, out);
    run_stage(Stage::Evaluate, cfg, out);
    CHECK(fs::last_write_time(out + "/gust_finetuned.gckp") == t0);
    CHECK(read_text_file(out + "/metrics.csv") == before);
  }

  SUBCASE("changed config is rejected") {
    ExperimentConfig other = cfg;
    other.seed = 1;
    CHECK_THROWS_AS(run_stage(Stage::Synth, other, out), ConfigMismatch);
  }

  SUBCASE("report emits summaries and one KDE SVG per design and component") {
    emit_report(cfg, out);
    CHECK(fs::exists(out + "/report/summary.csv"));
    CHECK(fs::exists(out + "/report/pvalues.csv"));
    for (int d = 0; d < cfg.eval_nominals; ++d)
      for (const std::string& comp : {"C11", "C12", "C22", "C33"})
        CHECK(fs::exists(out + "/report/kde_d" + std::to_string(d) + "_" + comp + ".svg"));

    // summary row count: methods x metrics
    std::istringstream in(read_text_file(out + "/report/summary.csv"));
    std::string line;
    int rows = -1;  // header
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 3 * 6);
  }

  SUBCASE("missing dependency is reported") {
    std::string empty = fresh_dir("micro_dep");
    CHECK_THROWS_AS(run_stage(Stage::Pretrain, cfg, empty), MissingDependency);
  }
}
