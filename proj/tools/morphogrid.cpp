// morphogrid command line: one subcommand per pipeline stage plus `run` and
// `train`. Exit codes: 0 ok, 2 config, 3 data, 4 numeric.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "morphogrid/pipeline.hpp"

namespace mg = morphogrid;

namespace {

struct Common {
  std::string config;
  std::string out;
  int jobs = 0;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "pipeline config file")->required();
  sub->add_option("-o,--out", c.out, "output directory (overrides config)");
  sub->add_option("-j,--jobs", c.jobs, "worker threads")->check(CLI::Range(1, 256));
  sub->add_option("--seed", c.seed, "RNG seed (overrides config)");
}

mg::PipelineConfig load(const Common& c) {
  auto cfg = mg::load_config(c.config);
  mg::apply_env(cfg);
  if (!c.out.empty()) cfg.out = c.out;
  if (c.jobs > 0) cfg.jobs = c.jobs;
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.training.train.seed = *c.seed;
    for (auto& p : cfg.gbm_grid) p.seed = *c.seed;
  }
  mg::validate_config(cfg);
  return cfg;
}

std::optional<mg::CellId> parse_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto parts = mg::csv::split_line(s);
  if (parts.size() != 2) throw mg::ArgumentError("--cell expects col,row");
  return mg::CellId{mg::csv::parse_int(parts[0]), mg::csv::parse_int(parts[1])};
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const mg::Error*>(&e)) return static_cast<int>(err->exit_code());
  return static_cast<int>(mg::ExitCode::Data);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morphogrid: road-network morphology and urban vitality on a 30 arc-second grid"};
  app.require_subcommand(1);

  Common ingest, grid, render, classify, indices, vitality, fitc, analyze, run;
  auto* s_ingest = app.add_subcommand("ingest", "parse sources into extract/<city>.geojson");
  add_common(s_ingest, ingest);
  auto* s_grid = app.add_subcommand("grid", "lay out grid cells and mark built ones");
  add_common(s_grid, grid);

  auto* s_render = app.add_subcommand("render", "render CRHD images for built cells");
  add_common(s_render, render);
  std::string cell_arg, city_arg;
  s_render->add_option("--cell", cell_arg, "render only this cell (col,row)");
  s_render->add_option("--city", city_arg, "restrict to one city");

  auto* s_classify = app.add_subcommand("classify", "assign road-network categories");
  add_common(s_classify, classify);
  std::string backend_arg, probs_arg, model_arg;
  s_classify->add_option("--backend", backend_arg, "cnn, heuristic or external");
  s_classify->add_option("--probs", probs_arg, "external probabilities CSV");
  s_classify->add_option("--model", model_arg, "CNN checkpoint");

  auto* s_indices = app.add_subcommand("indices", "compute morphology indices");
  add_common(s_indices, indices);
  auto* s_vitality = app.add_subcommand("vitality", "compute vitality indicators and scores");
  add_common(s_vitality, vitality);
  auto* s_fit = app.add_subcommand("fit", "cross-validated GBM fit, baseline vs augmented");
  add_common(s_fit, fitc);

  auto* s_analyze = app.add_subcommand("analyze", "shares, clusters, statistics and maps");
  add_common(s_analyze, analyze);
  std::string group_by;
  s_analyze->add_option("--group-by", group_by, "cluster or none")->check(CLI::IsMember({"cluster", "none"}));

  auto* s_run = app.add_subcommand("run", "full pipeline with manifest");
  add_common(s_run, run);

  auto* s_train = app.add_subcommand("train", "train the CRHD classifier on synthetic or listed images");
  mg::TrainOptions topt;
  std::string train_out = "crhd_cnn.mgrd", dataset_arg;
  std::uint64_t train_seed = topt.train.seed;
  s_train->add_option("--n-per-class", topt.n_per_class, "synthetic images per category")->check(CLI::PositiveNumber);
  s_train->add_option("--seed", train_seed, "RNG seed");
  s_train->add_option("--epochs", topt.train.epochs, "training epochs")->check(CLI::PositiveNumber);
  s_train->add_option("--lr", topt.train.learning_rate, "learning rate");
  s_train->add_option("--batch-size", topt.train.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  s_train->add_option("--channels", topt.arch.channels, "base channel count")->check(CLI::PositiveNumber);
  s_train->add_option("--max-jitter", topt.max_jitter, "synthetic geometry jitter");
  s_train->add_option("--out", train_out, "checkpoint path");
  s_train->add_option("--dataset", dataset_arg, "manifest CSV path,label,split");
  bool quiet = false;
  s_train->add_flag("-q,--quiet", quiet, "no per-epoch lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*s_ingest) {
      mg::stage_ingest(load(ingest));
    } else if (*s_grid) {
      mg::stage_grid(load(grid));
    } else if (*s_render) {
      const auto cfg = load(render);
      const auto n = mg::stage_render(cfg, parse_cell(cell_arg),
                                      city_arg.empty() ? std::nullopt : std::optional<std::string>(city_arg));
      std::cout << "rendered " << n << " cells\n";
    } else if (*s_classify) {
      const auto cfg = load(classify);
      mg::ClassifyOverrides ov;
      if (!backend_arg.empty()) ov.backend = mg::parse_backend(backend_arg);
      if (!probs_arg.empty()) ov.probs = probs_arg;
      if (!model_arg.empty()) ov.model = model_arg;
      mg::stage_classify(cfg, ov);
    } else if (*s_indices) {
      mg::stage_indices(load(indices));
    } else if (*s_vitality) {
      mg::stage_vitality(load(vitality));
    } else if (*s_fit) {
      mg::stage_fit(load(fitc));
    } else if (*s_analyze) {
      const auto cfg = load(analyze);
      std::optional<bool> by_cluster;
      if (!group_by.empty()) by_cluster = group_by == "cluster";
      mg::stage_analyze(cfg, by_cluster);
    } else if (*s_run) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto cfg = load(run);
      const auto s = mg::cmd_run(cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("run complete: %zu artifacts, manifest %s, %.1f s\n", s.artifacts, s.manifest_sha256.c_str(),
                  secs);
    } else if (*s_train) {
      topt.train.seed = train_seed;
      topt.train.validate();
      std::optional<mg::fs::path> dataset;
      if (!dataset_arg.empty()) dataset = dataset_arg;
      auto on_epoch = [&](int epoch, const mg::EpochStats& st) {
        if (!quiet)
          std::printf("epoch %3d  loss %.5f  selection acc %.4f\n", epoch, st.train_loss, st.selection_accuracy);
        std::fflush(stdout);
      };
      const auto r = mg::cmd_train(topt, train_out, dataset, on_epoch);
      std::printf("best epoch %d\n", r.result.best_epoch);
      std::printf("test accuracy %.4f\n", r.test_report.overall_accuracy);
      std::cout << mg::format_confusion(r.test_report);
      std::printf("checkpoint %s sha256 %s\n", train_out.c_str(), r.checkpoint_sha256.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "morphogrid: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
