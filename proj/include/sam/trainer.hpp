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

#ifndef SAM_TRAINER_HPP_
#define SAM_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sam/dataset.hpp"
#include "sam/loss.hpp"
#include "sam/margin.hpp"
#include "sam/projection_net.hpp"

namespace sam {

enum class SelectionMetric { kValidationMap, kStaticMarginLoss };

enum class Ablation {
  kNone,
  kStaticOnly,         // f_m == m
  kAlphaOneLambdaOne,  // f_m == f_ms
};

std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);
std::string_view selection_name(SelectionMetric s);
SelectionMetric parse_selection(std::string_view name);

struct TrainConfig {
  MarginConfig margin;  // margin.n_e is the epoch count
  double learning_rate = 5e-3;
  double lr_decay = 1e-6;  // per optimizer step
  double momentum = 0.9;
  int batch_size = 200;
  int n_neg = 1;
  std::size_t hidden_dim = 1024;
  std::size_t out_dim = 200;
  double dropout_p = 0.1;
  std::uint64_t seed = 1;
  SelectionMetric selection = SelectionMetric::kValidationMap;
  Ablation ablation = Ablation::kNone;
  std::size_t stats_max_pairs = kDefaultStatsPairs;
  // 1 = reproducibility mode (serial, bitwise deterministic).
  int threads = 1;

  int epochs() const { return margin.n_e; }
  void validate() const;
};

// Pins the margin schedule for one of the ablation variants.
TrainConfig ablation_mode(TrainConfig cfg, Ablation which);

nlohmann::json to_json(const TrainConfig& cfg);
// Fields present in `j` override `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Momentum buffers for both towers.
struct OptimizerState {
  Gradients velocity_v;
  Gradients velocity_t;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t);
};

// v <- mu v - lr g;  theta <- theta + mu v - lr g.
void nesterov_update(std::span<double> params, std::span<const double> grads,
                     std::span<double> velocity, double lr, double mu);
void nesterov_update(ProjectionNetwork& net, const Gradients& grads, Gradients& velocity, double lr,
                     double mu);

// learning_rate / (1 + lr_decay * step)
double effective_lr(std::uint64_t step, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double alpha = 0.0;
  double mean_margin = 0.0;
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch ran
};

// Snapshot handed to TrainObserver::on_batch after the loss is computed and
// before the parameters are updated.
struct BatchRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  std::span<const MultimodalInstance> batch;
  std::span<const Triplet> triplets;  // margins attached
  std::span<const MarginBreakdown> margins;  // parallel to triplets
  const ProjectionTable* projections = nullptr;
  const BatchLoss* loss = nullptr;
};

struct TrainObserver {
  std::function<void(const BatchRecord&)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ProjectionNetwork net_v;
  ProjectionNetwork net_t;
  TrainingHistory history;
  MarginTrace trace;
  DistanceStats stats;
};

// Epoch loop: refresh centroids, shuffle, batch, sample triplets, scheduled
// margins, backprop, Nesterov step; keep the epoch with the best validation
// metric.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const TrainObserver* observer = nullptr);

// The distance statistics train() derives from cfg.seed.
DistanceStats training_distance_stats(const Dataset& ds, const TrainConfig& cfg);

// Validation loss with the margin pinned to m, averaged per instance.
double static_margin_loss(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                          const Dataset& ds, Split split, const TrainConfig& cfg);

// epoch,train_loss,val_metric,alpha,mean_margin,seconds. The seconds column is
// written as 0 unless record_timing is set, so reruns produce identical files.
void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path,
                       bool record_timing);

}  // namespace sam

#endif  // SAM_TRAINER_HPP_
