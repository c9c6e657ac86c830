// Copyright 2026 The SAM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// sam: synthetic data, training, evaluation, margin export and sweeps.
//
// Exit codes: 0 success, 1 usage error, 2 data or config error, 3 divergence.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sam/dataset.hpp"
#include "sam/error.hpp"
#include "sam/margin.hpp"
#include "sam/projection_net.hpp"
#include "sam/retrieval.hpp"
#include "sam/trainer.hpp"

#ifndef SAM_VERSION
#define SAM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

// Training flags shared by train and sweep. Unset optionals leave the config
// file (or the defaults) untouched.
struct TrainFlags {
  std::string data;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> ablation;
  std::optional<int> epochs;
  std::optional<double> lambda;
  std::optional<double> fa;
  std::optional<double> k;
  std::optional<double> m;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> n_neg;
  std::optional<std::size_t> hidden;
  std::optional<std::size_t> dim;
  std::optional<double> dropout;
  std::optional<std::string> selection;
  std::optional<std::size_t> stats_pairs;
  bool timing = false;

  void attach(CLI::App& cmd, bool with_grid_params) {
    cmd.add_option("--data", data, "Dataset directory")->required();
    cmd.add_option("--config", config, "JSON config; flags override its values");
    cmd.add_option("--seed", seed, "Run seed");
    cmd.add_option("--threads", threads, "Worker threads (1 = bitwise reproducible)");
    cmd.add_option("--ablation", ablation, "none | static | alpha1-lambda1")
        ->check(CLI::IsMember({"none", "static", "alpha1-lambda1"}));
    cmd.add_option("--epochs", epochs, "Number of epochs n_e");
    if (with_grid_params) {
      cmd.add_option("--lambda", lambda, "Semantic/cluster blend");
      cmd.add_option("--fa", fa, "Activation fraction of the scheduler");
    }
    cmd.add_option("--k", k, "Scheduler steepness");
    cmd.add_option("--m", m, "Static margin");
    cmd.add_option("--lr", lr, "Learning rate");
    cmd.add_option("--batch-size", batch_size, "Mini-batch size");
    cmd.add_option("--n-neg", n_neg, "Negatives per anchor");
    cmd.add_option("--hidden", hidden, "Hidden layer width");
    cmd.add_option("--dim", dim, "Common space dimension");
    cmd.add_option("--dropout", dropout, "Hidden-layer dropout rate");
    cmd.add_option("--selection", selection, "validation-map | static-margin-loss")
        ->check(CLI::IsMember({"validation-map", "static-margin-loss"}));
    cmd.add_option("--stats-pairs", stats_pairs, "Pairs sampled for distance normalisation");
    cmd.add_flag("--timing", timing, "Record wall time per epoch in history.csv");
  }

  sam::TrainConfig resolve() const {
    sam::TrainConfig cfg;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw sam::IoError("cannot read config " + config);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw sam::InvalidConfig(std::string("config: ") + e.what());
      }
      // A run's config.json nests the training config under "config".
      if (j.contains("config") && j.at("config").is_object()) j = j.at("config");
      cfg = sam::train_config_from_json(j, cfg);
    }
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (epochs) cfg.margin.n_e = *epochs;
    if (lambda) cfg.margin.lambda = *lambda;
    if (fa) cfg.margin.f_a = *fa;
    if (k) cfg.margin.k = *k;
    if (m) cfg.margin.m = *m;
    if (lr) cfg.learning_rate = *lr;
    if (batch_size) cfg.batch_size = *batch_size;
    if (n_neg) cfg.n_neg = *n_neg;
    if (hidden) cfg.hidden_dim = *hidden;
    if (dim) cfg.out_dim = *dim;
    if (dropout) cfg.dropout_p = *dropout;
    if (selection) cfg.selection = sam::parse_selection(*selection);
    if (stats_pairs) cfg.stats_max_pairs = *stats_pairs;
    const sam::Ablation mode = ablation ? sam::parse_ablation(*ablation) : cfg.ablation;
    cfg = sam::ablation_mode(cfg, mode);
    cfg.validate();
    return cfg;
  }
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw sam::IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json run_manifest(const sam::TrainConfig& cfg, const std::string& data, const fs::path& out,
                  const std::string& command) {
  return {
      {"config", sam::to_json(cfg)},
      {"dataset", fs::absolute(data).lexically_normal().string()},
      {"out", fs::absolute(out).lexically_normal().string()},
      {"command", command},
      {"timestamp", utc_timestamp()},
      {"version", SAM_VERSION},
  };
}

std::string joined_argv(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// Reads config.json from a run directory.
json read_manifest(const fs::path& run) {
  std::ifstream in(run / "config.json");
  if (!in) throw sam::IoError("no config.json in " + run.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw sam::InvalidConfig(std::string("config.json: ") + e.what());
  }
}

int cmd_synth(const sam::SyntheticSpec& spec, const std::string& out) {
  const sam::Dataset ds = sam::generate_synthetic(spec);
  sam::save_dataset(ds, out);
  std::printf("wrote %zu instances (%d categories) to %s\n", ds.instances.size(), spec.n_categories,
              out.c_str());
  return 0;
}

int cmd_train(const TrainFlags& flags, const std::string& out, const std::string& command) {
  const sam::TrainConfig cfg = flags.resolve();
  const sam::Dataset ds = sam::load_dataset(flags.data);
  const fs::path run(out);
  fs::create_directories(run);
  write_json(run_manifest(cfg, flags.data, run, command), run / "config.json");

  sam::TrainObserver observer;
  observer.on_epoch = [](const sam::EpochRecord& r) {
    std::fprintf(stderr, "epoch %3d  loss %.6f  val %.4f  alpha %.4f  margin %.4f\n", r.epoch,
                 r.train_loss, r.val_metric, r.alpha, r.mean_margin);
  };
  const sam::TrainResult result = sam::train(ds, cfg, &observer);

  sam::save_checkpoint({result.net_v, result.net_t, cfg.seed, result.history.best_epoch},
                       run / "checkpoint-best");
  sam::write_history_csv(result.history, run / "history.csv", flags.timing);
  result.trace.write_csv(run / "margins.csv");

  std::printf("best epoch %d\n", result.history.best_epoch);
  if (!ds.indices(sam::Split::kTest).empty()) {
    std::printf("%s", sam::format_report(sam::evaluate(result.net_v, result.net_t, ds,
                                                       sam::Split::kTest))
                          .c_str());
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             std::optional<std::size_t> at_k, const std::string& out) {
  const sam::Checkpoint ckpt = sam::load_checkpoint(checkpoint);
  const sam::Dataset ds = sam::load_dataset(data);
  if (at_k && *at_k == 0) throw sam::InvalidConfig("--at-k must be positive");
  const sam::EvalReport report =
      sam::evaluate(ckpt.visual, ckpt.textual, ds, sam::parse_split(split), at_k);
  std::printf("%s", sam::format_report(report).c_str());
  const fs::path dir = out.empty() ? fs::path(checkpoint).parent_path() : fs::path(out);
  if (!dir.empty()) fs::create_directories(dir);
  sam::write_eval_csv(report, ds.categories, dir / "eval.csv");
  return 0;
}

// Without --snapshot the run is replayed from its config.json, which
// reproduces the original per-epoch trace. With --snapshot the checkpointed
// networks score every different-category training pair at their epoch.
int cmd_margins(const std::string& run_dir, const std::string& data_override,
                const std::string& out, bool snapshot) {
  const fs::path run(run_dir);
  const json manifest = read_manifest(run);
  const sam::TrainConfig cfg = sam::train_config_from_json(manifest.at("config"));
  const std::string data =
      data_override.empty() ? manifest.at("dataset").get<std::string>() : data_override;
  const sam::Dataset ds = sam::load_dataset(data);
  const fs::path target = out.empty() ? run / "margins.csv" : fs::path(out);

  if (!snapshot) {
    const sam::TrainResult result = sam::train(ds, cfg);
    result.trace.write_csv(target);
    const fs::path ckpt_dir = run / "checkpoint-best";
    if (fs::exists(ckpt_dir)) {
      const sam::Checkpoint saved = sam::load_checkpoint(ckpt_dir);
      if (saved.epoch != result.history.best_epoch) {
        std::fprintf(stderr, "warning: replay selected epoch %d, checkpoint holds epoch %d\n",
                     result.history.best_epoch, saved.epoch);
      }
    }
    std::printf("wrote %zu epochs to %s\n", result.trace.epochs().size(), target.c_str());
    return 0;
  }

  const sam::Checkpoint ckpt = sam::load_checkpoint(run / "checkpoint-best");
  if (ckpt.visual.input_dim() != ds.d_v || ckpt.textual.input_dim() != ds.d_t) {
    throw sam::IncompatibleCheckpoint("checkpoint input dims do not match the dataset");
  }
  const int t = std::max(ckpt.epoch, 1);
  const sam::DistanceStats stats = sam::training_distance_stats(ds, cfg);
  const sam::CentroidTable table = sam::compute_centroids(ckpt.visual, ckpt.textual, ds, t);
  sam::MarginTrace trace;
  trace.set_alpha(t, sam::effective_alpha(t, cfg.margin));
  const auto members = ds.indices(sam::Split::kTrain);
  for (std::size_t i : members) {
    for (std::size_t j : members) {
      const auto& a = ds.instances[i];
      const auto& n = ds.instances[j];
      if (a.category == n.category) continue;
      trace.record(t, a.category, n.category, sam::scheduled_margin(a, n, t, table, stats, cfg.margin));
    }
  }
  trace.write_csv(target);
  std::printf("wrote epoch-%d snapshot to %s\n", t, target.c_str());
  return 0;
}

struct SweepCell {
  double lambda = 0.0;
  double fa = 0.0;
  double map_i2t = 0.0;
  double map_t2i = 0.0;
  double map_avg = 0.0;
  double std = 0.0;
};

SweepCell run_cell(const sam::Dataset& ds, sam::TrainConfig cfg, double lambda, double fa,
                   int repeats) {
  SweepCell cell{lambda, fa};
  cfg.margin.lambda = lambda;
  cfg.margin.f_a = fa;
  cfg.validate();
  std::vector<double> avgs;
  const std::uint64_t base_seed = cfg.seed;
  for (int r = 0; r < repeats; ++r) {
    cfg.seed = base_seed + static_cast<std::uint64_t>(r);
    const sam::TrainResult result = sam::train(ds, cfg);
    const sam::EvalReport rep = sam::evaluate(result.net_v, result.net_t, ds, sam::Split::kTest);
    cell.map_i2t += rep.map_i2t / repeats;
    cell.map_t2i += rep.map_t2i / repeats;
    avgs.push_back(rep.map_avg);
  }
  double mean = 0.0;
  for (double a : avgs) mean += a / repeats;
  cell.map_avg = mean;
  if (repeats > 1) {
    double ss = 0.0;
    for (double a : avgs) ss += (a - mean) * (a - mean);
    cell.std = std::sqrt(ss / (repeats - 1));
  }
  return cell;
}

int cmd_sweep(const TrainFlags& flags, const std::string& out, const std::vector<double>& lambdas,
              const std::vector<double>& fas, int repeats, int parallel, const std::string& command) {
  if (lambdas.empty() || fas.empty()) throw sam::InvalidConfig("sweep grids must be non-empty");
  if (repeats < 1) throw sam::InvalidConfig("--repeats must be at least 1");
  if (parallel < 1) throw sam::InvalidConfig("--parallel must be at least 1");
  const sam::TrainConfig base = flags.resolve();
  const sam::Dataset ds = sam::load_dataset(flags.data);
  const fs::path dir(out);
  fs::create_directories(dir);
  json manifest = run_manifest(base, flags.data, dir, command);
  manifest["sweep"] = {{"lambda", lambdas}, {"fa", fas}, {"repeats", repeats}};
  write_json(manifest, dir / "config.json");

  std::ofstream csv(dir / "sweep.csv");
  if (!csv) throw sam::IoError("cannot write " + (dir / "sweep.csv").string());
  csv << "lambda,fa,map_i2t,map_t2i,map_avg,std\n" << std::flush;

  std::vector<std::pair<double, double>> grid;
  for (double l : lambdas) {
    for (double f : fas) grid.emplace_back(l, f);
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t idx;
      {
        std::lock_guard lock(mu);
        if (next >= grid.size() || failure) return;
        idx = next++;
      }
      try {
        const SweepCell c = run_cell(ds, base, grid[idx].first, grid[idx].second, repeats);
        std::lock_guard lock(mu);
        char row[256];
        std::snprintf(row, sizeof row, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", c.lambda, c.fa,
                      c.map_i2t, c.map_t2i, c.map_avg, c.std);
        csv << row << std::flush;
        std::fprintf(stderr, "cell lambda=%g fa=%g  avg mAP %.4f (std %.4f)\n", c.lambda, c.fa,
                     c.map_avg, c.std);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_workers = std::min<int>(parallel, static_cast<int>(grid.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  std::printf("wrote %zu cells to %s\n", grid.size(), (dir / "sweep.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scheduled adaptive margin training for cross-modal retrieval"};
  app.set_version_flag("--version", SAM_VERSION);
  app.require_subcommand(1);

  sam::SyntheticSpec spec;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
  synth->add_option("--categories", spec.n_categories, "Number of categories");
  synth->add_option("--per-category", spec.per_category, "Instances per category");
  synth->add_option("--dv", spec.d_v, "Visual feature dimension");
  synth->add_option("--dt", spec.d_t, "Textual feature dimension");
  synth->add_option("--spread", spec.intra_spread, "Within-category standard deviation");
  synth->add_option("--sep", spec.inter_sep, "Distance between category means");
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  TrainFlags train_flags;
  std::string train_out;
  CLI::App* train = app.add_subcommand("train", "Train both projection towers");
  train_flags.attach(*train, true);
  train->add_option("--out", train_out, "Run directory")->required();

  std::string eval_ckpt, eval_run, eval_data, eval_split = "test", eval_out;
  std::optional<std::size_t> at_k;
  CLI::App* eval = app.add_subcommand("eval", "Cross-modal retrieval mAP of a checkpoint");
  auto* ckpt_opt = eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory");
  auto* run_opt = eval->add_option("--run", eval_run, "Run directory (uses checkpoint-best)");
  ckpt_opt->excludes(run_opt);
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--split", eval_split, "train | validation | test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  eval->add_option("--at-k", at_k, "Only score the top k of each ranking");
  eval->add_option("--out", eval_out, "Directory for eval.csv (default: next to the checkpoint)");

  std::string margins_run, margins_data, margins_out;
  bool snapshot = false;
  CLI::App* margins = app.add_subcommand("margins", "Re-export margins.csv from a run");
  margins->add_option("--run", margins_run, "Run directory")->required();
  margins->add_option("--data", margins_data, "Dataset directory (default: the run's)");
  margins->add_option("--out", margins_out, "Output file (default: <run>/margins.csv)");
  margins->add_flag("--snapshot", snapshot, "Score all training pairs with the checkpoint");

  TrainFlags sweep_flags;
  std::string sweep_out;
  std::vector<double> lambdas{0.0, 0.1, 0.25, 0.75, 1.0};
  std::vector<double> fas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  int repeats = 1, parallel = 1;
  CLI::App* sweep = app.add_subcommand("sweep", "Grid over lambda and the activation fraction");
  sweep_flags.attach(*sweep, false);
  sweep->add_option("--out", sweep_out, "Sweep directory")->required();
  sweep->add_option("--lambdas", lambdas, "Lambda grid")->delimiter(',');
  sweep->add_option("--fas", fas, "Activation fraction grid")->delimiter(',');
  sweep->add_option("--repeats", repeats, "Seeds per cell");
  sweep->add_option("--parallel", parallel, "Cells trained concurrently");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  const std::string command = joined_argv(argc, argv);
  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*train) return cmd_train(train_flags, train_out, command);
    if (*eval) {
      if (eval_ckpt.empty() && eval_run.empty()) {
        std::cerr << "eval: one of --checkpoint or --run is required\n";
        return kExitUsage;
      }
      const std::string ckpt =
          eval_ckpt.empty() ? (fs::path(eval_run) / "checkpoint-best").string() : eval_ckpt;
      return cmd_eval(ckpt, eval_data, eval_split, at_k, eval_out);
    }
    if (*margins) return cmd_margins(margins_run, margins_data, margins_out, snapshot);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_out, lambdas, fas, repeats, parallel, command);
  } catch (const sam::DivergenceDetected& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const sam::NonFiniteGradient& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const sam::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
