#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "gust/pipeline.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::string profile = "desk";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* sub, CommonOpts& opts) {
  sub->add_option("--config", opts.config_path, "JSON config; keys override the profile");
  sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
  sub->add_option("--profile", opts.profile, "base profile: paper or desk")
      ->check(CLI::IsMember({"paper", "desk"}))
      ->capture_default_str();
  sub->add_option("--seed", opts.seed, "master seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
}

gust::ExperimentConfig resolve_config(const CommonOpts& opts) {
  gust::ExperimentConfig cfg =
      opts.profile == "paper" ? gust::paper_profile() : gust::desk_profile();
  if (!opts.config_path.empty()) {
    nlohmann::json base = gust::config_to_json(cfg);
    nlohmann::json patch = nlohmann::json::parse(gust::read_text_file(opts.config_path));
    base.merge_patch(patch);
    cfg = gust::config_from_json(base);
  }
  if (opts.seed_set) cfg.seed = opts.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("GUST_THREADS")) {
    int n = std::atoi(threads);
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
  }

  CLI::App app{"gust: generative manufacturing-uncertainty workbench for 2D unit cells"};
  app.require_subcommand(1);
  CommonOpts opts;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "generate nominal designs and synthetic datasets"},
      {"pretrain", "pretrain the conditional diffusion model"},
      {"finetune", "fine-tune the pretrained model with freezing"},
      {"sample", "draw as-fabricated samples for held-out designs"},
      {"homogenize", "effective elastic properties of all sample sets"},
      {"evaluate", "density/coverage and Wasserstein metrics"},
      {"baseline", "direct training, dilation-erosion MLE, GRF sampling"},
      {"report", "KDE overlays, summary table, p-values"}};
  for (const auto& [name, desc] : stages) add_common(app.add_subcommand(name, desc), opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string cmd = app.get_subcommands().front()->get_name();
  gust::ExperimentConfig cfg;
  try {
    cfg = resolve_config(opts);
  } catch (const std::exception& ex) {
    std::cerr << "gust: config error: " << ex.what() << "\n";
    return 2;
  }

  try {
    if (cmd == "report") {
      gust::emit_report(cfg, opts.out_dir);
    } else {
      gust::run_stage(gust::stage_from_string(cmd), cfg, opts.out_dir);
    }
  } catch (const gust::ConfigMismatch& ex) {
    std::cerr << "gust: config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "gust: " << cmd << " failed: " << ex.what() << "\n";
    return 3;
  }
  return 0;
}
