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

#include "sam/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#include "sam/retrieval.hpp"

namespace sam {

using nlohmann::json;

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kStaticOnly: return "static";
    case Ablation::kAlphaOneLambdaOne: return "alpha1-lambda1";
  }
  return "none";
}

Ablation parse_ablation(std::string_view name) {
  if (name == "none") return Ablation::kNone;
  if (name == "static") return Ablation::kStaticOnly;
  if (name == "alpha1-lambda1") return Ablation::kAlphaOneLambdaOne;
  throw InvalidConfig("unknown ablation '" + std::string(name) + "'");
}

std::string_view selection_name(SelectionMetric s) {
  return s == SelectionMetric::kValidationMap ? "validation-map" : "static-margin-loss";
}

SelectionMetric parse_selection(std::string_view name) {
  if (name == "validation-map") return SelectionMetric::kValidationMap;
  if (name == "static-margin-loss") return SelectionMetric::kStaticMarginLoss;
  throw InvalidConfig("unknown selection metric '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  margin.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidConfig("learning rate must be positive");
  }
  if (!(lr_decay >= 0.0) || !std::isfinite(lr_decay)) throw InvalidConfig("lr decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must be in [0, 1)");
  if (batch_size < 2) throw InvalidConfig("batch size must be at least 2");
  if (n_neg < 1) throw InvalidConfig("n_neg must be at least 1");
  if (hidden_dim == 0 || out_dim == 0) throw InvalidConfig("network dims must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfig("dropout_p must be in [0, 1)");
  if (stats_max_pairs == 0) throw InvalidConfig("stats_max_pairs must be positive");
  if (threads < 1) throw InvalidConfig("threads must be at least 1");
}

TrainConfig ablation_mode(TrainConfig cfg, Ablation which) {
  cfg.ablation = which;
  switch (which) {
    case Ablation::kNone:
      cfg.margin.forced_alpha.reset();
      break;
    case Ablation::kStaticOnly:
      cfg.margin.forced_alpha = 0.0;
      break;
    case Ablation::kAlphaOneLambdaOne:
      cfg.margin.forced_alpha = 1.0;
      cfg.margin.lambda = 1.0;
      break;
  }
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  json margin = {
      {"m", cfg.margin.m},     {"lambda", cfg.margin.lambda}, {"k", cfg.margin.k},
      {"f_a", cfg.margin.f_a}, {"n_e", cfg.margin.n_e},
  };
  margin["forced_alpha"] = cfg.margin.forced_alpha ? json(*cfg.margin.forced_alpha) : json(nullptr);
  return {
      {"margin", margin},
      {"learning_rate", cfg.learning_rate},
      {"lr_decay", cfg.lr_decay},
      {"momentum", cfg.momentum},
      {"batch_size", cfg.batch_size},
      {"n_neg", cfg.n_neg},
      {"hidden_dim", cfg.hidden_dim},
      {"out_dim", cfg.out_dim},
      {"dropout_p", cfg.dropout_p},
      {"seed", cfg.seed},
      {"selection", selection_name(cfg.selection)},
      {"ablation", ablation_name(cfg.ablation)},
      {"stats_max_pairs", cfg.stats_max_pairs},
      {"threads", cfg.threads},
  };
}

TrainConfig train_config_from_json(const json& j, TrainConfig base) {
  if (!j.is_object()) throw InvalidConfig("config must be a JSON object");
  try {
    if (j.contains("margin")) {
      const json& m = j.at("margin");
      if (m.contains("m")) base.margin.m = m.at("m").get<double>();
      if (m.contains("lambda")) base.margin.lambda = m.at("lambda").get<double>();
      if (m.contains("k")) base.margin.k = m.at("k").get<double>();
      if (m.contains("f_a")) base.margin.f_a = m.at("f_a").get<double>();
      if (m.contains("n_e")) base.margin.n_e = m.at("n_e").get<int>();
      if (m.contains("forced_alpha")) {
        const json& fa = m.at("forced_alpha");
        if (fa.is_null()) {
          base.margin.forced_alpha.reset();
        } else {
          base.margin.forced_alpha = fa.get<double>();
        }
      }
    }
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("learning_rate", base.learning_rate);
    take("lr_decay", base.lr_decay);
    take("momentum", base.momentum);
    take("batch_size", base.batch_size);
    take("n_neg", base.n_neg);
    take("hidden_dim", base.hidden_dim);
    take("out_dim", base.out_dim);
    take("dropout_p", base.dropout_p);
    take("seed", base.seed);
    take("stats_max_pairs", base.stats_max_pairs);
    take("threads", base.threads);
    if (j.contains("selection")) base.selection = parse_selection(j.at("selection").get<std::string>());
    if (j.contains("ablation")) {
      // Re-applying keeps forced_alpha and lambda consistent with the mode.
      const Ablation which = parse_ablation(j.at("ablation").get<std::string>());
      if (which != Ablation::kNone) base = ablation_mode(base, which);
      base.ablation = which;
    }
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }
  return base;
}

OptimizerState OptimizerState::zeros_like(const ProjectionNetwork& net_v,
                                          const ProjectionNetwork& net_t) {
  return {Gradients::zeros_like(net_v), Gradients::zeros_like(net_t), 0};
}

void nesterov_update(std::span<double> params, std::span<const double> grads,
                     std::span<double> velocity, double lr, double mu) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeMismatch("nesterov_update: parameter, gradient and velocity sizes differ");
  }
  if (!all_finite(grads)) throw NonFiniteGradient("nesterov_update: non-finite gradient");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] - lr * grads[i];
    params[i] += mu * velocity[i] - lr * grads[i];
  }
}

void nesterov_update(ProjectionNetwork& net, const Gradients& grads, Gradients& velocity, double lr,
                     double mu) {
  if (!grads.dw1.same_shape(net.w1) || !grads.dw2.same_shape(net.w2) ||
      !velocity.dw1.same_shape(net.w1) || !velocity.dw2.same_shape(net.w2)) {
    throw ShapeMismatch("nesterov_update: gradient shapes differ from the network");
  }
  nesterov_update(net.w1.values(), grads.dw1.values(), velocity.dw1.values(), lr, mu);
  nesterov_update(net.b1, grads.db1, velocity.db1, lr, mu);
  nesterov_update(net.w2.values(), grads.dw2.values(), velocity.dw2.values(), lr, mu);
  nesterov_update(net.b2, grads.db2, velocity.db2, lr, mu);
}

double effective_lr(std::uint64_t step, const TrainConfig& cfg) {
  return cfg.learning_rate / (1.0 + cfg.lr_decay * static_cast<double>(step));
}

namespace {

// Stream ids under the run seed.
enum Stream : std::uint64_t {
  kInitVisual = 1,
  kInitTextual = 2,
  kStats = 3,
  kShuffle = 4,
  kNegatives = 5,
  kDropout = 6,
  kValidationTriplets = 7,
};

// Contiguous [begin, end) row ranges, one per worker.
std::vector<std::pair<std::size_t, std::size_t>> chunk_bounds(std::size_t n, int threads) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += chunk) out.emplace_back(begin, std::min(n, begin + chunk));
  return out;
}

// Runs fn(i) for i in [0, n), one thread per index; inline when n == 1.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  if (n <= 1) {
    if (n == 1) fn(std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n);
  for (std::size_t w = 0; w < n; ++w) {
    pool.emplace_back([&, w] {
      try {
        fn(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct EvalProjections {
  std::vector<MultimodalInstance> members;
  ProjectionTable table;
};

EvalProjections project_split(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                              const Dataset& ds, Split split) {
  EvalProjections out;
  out.members = ds.subset(split);
  for (const auto& inst : out.members) {
    out.table.insert(inst.id, project(net_v, inst.visual), project(net_t, inst.textual));
  }
  return out;
}

}  // namespace

double static_margin_loss(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                          const Dataset& ds, Split split, const TrainConfig& cfg) {
  EvalProjections proj = project_split(net_v, net_t, ds, split);
  if (proj.members.empty()) throw InsufficientData("static margin loss: split is empty");
  Rng rng = Rng(cfg.seed).split(kValidationTriplets);
  auto triplets = sample_triplets(proj.members, cfg.n_neg, rng);
  for (auto& t : triplets) t.margin = cfg.margin.m;
  const BatchLoss loss = batch_loss_and_grads(triplets, proj.table);
  return loss.total / static_cast<double>(proj.members.size());
}

DistanceStats training_distance_stats(const Dataset& ds, const TrainConfig& cfg) {
  return compute_distance_stats(ds, cfg.stats_max_pairs, Rng(cfg.seed).split(kStats).seed());
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const TrainObserver* observer) {
  cfg.validate();
  const auto train_idx = ds.indices(Split::kTrain);
  if (train_idx.size() < 2) throw InsufficientData("training split needs at least 2 instances");
  if (ds.indices(Split::kValidation).empty()) throw InsufficientData("validation split is empty");

  const Rng root(cfg.seed);
  TrainResult result;
  result.net_v = init_network(ds.d_v, cfg.hidden_dim, cfg.out_dim, root.split(kInitVisual).seed(),
                              cfg.dropout_p);
  result.net_t = init_network(ds.d_t, cfg.hidden_dim, cfg.out_dim, root.split(kInitTextual).seed(),
                              cfg.dropout_p);
  result.stats = training_distance_stats(ds, cfg);
  if (cfg.epochs() == 0) return result;

  ProjectionNetwork net_v = result.net_v;
  ProjectionNetwork net_t = result.net_t;
  OptimizerState opt = OptimizerState::zeros_like(net_v, net_t);
  Rng shuffle_rng = root.split(kShuffle);
  Rng negative_rng = root.split(kNegatives);
  const Rng dropout_root = root.split(kDropout);

  const bool maximize = cfg.selection == SelectionMetric::kValidationMap;
  double best_metric = maximize ? -std::numeric_limits<double>::infinity()
                                : std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order = train_idx;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  for (int t = 1; t <= cfg.epochs(); ++t) {
    const auto started = std::chrono::steady_clock::now();
    const CentroidTable centroids = compute_centroids(net_v, net_t, ds, t);
    const double alpha = effective_alpha(t, cfg.margin);
    result.trace.set_alpha(t, alpha);

    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const std::size_t b = end - start;
      std::vector<MultimodalInstance> batch;
      batch.reserve(b);
      for (std::size_t i = start; i < end; ++i) batch.push_back(ds.instances[order[i]]);

      // Train-mode forward, one row block per worker. Dropout masks come from
      // per-instance streams so they do not depend on the worker layout.
      const auto chunks = chunk_bounds(b, cfg.threads);
      std::vector<BatchTrace> trace_v(chunks.size()), trace_t(chunks.size());
      parallel_for(chunks.size(), [&](std::size_t w) {
        const auto [lo, hi] = chunks[w];
        Mat xv(hi - lo, ds.d_v), xt(hi - lo, ds.d_t);
        std::vector<Rng> rv, rt;
        for (std::size_t i = lo; i < hi; ++i) {
          std::copy(batch[i].visual.begin(), batch[i].visual.end(), xv.row(i - lo).begin());
          std::copy(batch[i].textual.begin(), batch[i].textual.end(), xt.row(i - lo).begin());
          const std::uint64_t key = (opt.step << 24) ^ (static_cast<std::uint64_t>(i) << 1);
          rv.push_back(dropout_root.split(key));
          rt.push_back(dropout_root.split(key | 1));
        }
        trace_v[w] = forward_batch(net_v, std::move(xv), Mode::kTrain, rv);
        trace_t[w] = forward_batch(net_t, std::move(xt), Mode::kTrain, rt);
      });
      ProjectionTable projections;
      std::unordered_map<std::int64_t, std::size_t> position;
      for (std::size_t w = 0; w < chunks.size(); ++w) {
        for (std::size_t i = chunks[w].first; i < chunks[w].second; ++i) {
          const auto pv = trace_v[w].output.row(i - chunks[w].first);
          const auto pt = trace_t[w].output.row(i - chunks[w].first);
          projections.insert(batch[i].id, Vec(pv.begin(), pv.end()), Vec(pt.begin(), pt.end()));
          position[batch[i].id] = i;
        }
      }

      std::vector<Triplet> triplets = sample_triplets(batch, cfg.n_neg, negative_rng);
      std::vector<MarginBreakdown> margins;
      margins.reserve(triplets.size());
      for (auto& tr : triplets) {
        const auto& anchor = batch[position.at(tr.anchor_id)];
        const auto& negative = batch[position.at(tr.negative_id)];
        margins.push_back(margin_components(anchor, negative, t, centroids, result.stats, cfg.margin));
        tr.margin = margins.back().f_m;
        result.trace.record(t, anchor.category, negative.category, tr.margin);
      }

      const BatchLoss loss = batch_loss_and_grads(triplets, projections);
      if (!std::isfinite(loss.total)) {
        throw DivergenceDetected("non-finite training loss at epoch " + std::to_string(t) +
                                 ", step " + std::to_string(opt.step));
      }
      if (observer && observer->on_batch) {
        observer->on_batch({t, opt.step, batch, triplets, margins, &projections, &loss});
      }

      // Gradient of loss / b, accumulated per worker and reduced in worker order.
      const double scale = 1.0 / static_cast<double>(b);
      std::vector<Gradients> acc_v, acc_t;
      for (std::size_t w = 0; w < chunks.size(); ++w) {
        acc_v.push_back(Gradients::zeros_like(net_v));
        acc_t.push_back(Gradients::zeros_like(net_t));
      }
      parallel_for(chunks.size(), [&](std::size_t w) {
        const auto [lo, hi] = chunks[w];
        Mat gv(hi - lo, cfg.out_dim), gt(hi - lo, cfg.out_dim);
        for (std::size_t i = lo; i < hi; ++i) {
          const Vec& dv = loss.grads.visual(batch[i].id);
          const Vec& dt = loss.grads.textual(batch[i].id);
          auto rv = gv.row(i - lo);
          auto rt = gt.row(i - lo);
          for (std::size_t d = 0; d < cfg.out_dim; ++d) {
            rv[d] = dv[d] * scale;
            rt[d] = dt[d] * scale;
          }
        }
        backward_batch(net_v, trace_v[w], gv, acc_v[w]);
        backward_batch(net_t, trace_t[w], gt, acc_t[w]);
      });
      for (std::size_t w = 1; w < acc_v.size(); ++w) {
        acc_v[0].add(acc_v[w]);
        acc_t[0].add(acc_t[w]);
      }
      if (!acc_v[0].finite() || !acc_t[0].finite()) {
        throw DivergenceDetected("non-finite gradient at epoch " + std::to_string(t));
      }

      const double lr = effective_lr(opt.step, cfg);
      nesterov_update(net_v, acc_v[0], opt.velocity_v, lr, cfg.momentum);
      nesterov_update(net_t, acc_t[0], opt.velocity_t, lr, cfg.momentum);
      ++opt.step;

      loss_sum += loss.total * scale;
      ++n_batches;
    }

    EpochRecord rec;
    rec.epoch = t;
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    if (!std::isfinite(rec.train_loss)) {
      throw DivergenceDetected("non-finite mean training loss at epoch " + std::to_string(t));
    }
    rec.val_metric = maximize ? evaluate(net_v, net_t, ds, Split::kValidation).map_avg
                              : static_margin_loss(net_v, net_t, ds, Split::kValidation, cfg);
    rec.alpha = alpha;
    const MarginTrace::Epoch* e = result.trace.find(t);
    rec.mean_margin = e ? e->global.mean() : 0.0;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const bool better = maximize ? rec.val_metric > best_metric : rec.val_metric < best_metric;
    if (better) {
      best_metric = rec.val_metric;
      result.history.best_epoch = t;
      result.net_v = net_v;
      result.net_t = net_t;
    }
    result.history.epochs.push_back(rec);
    if (observer && observer->on_epoch) observer->on_epoch(rec);
  }
  return result;
}

void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path,
                       bool record_timing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_metric,alpha,mean_margin,seconds\n";
  char buf[160];
  for (const auto& r : history.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.epoch, r.train_loss,
                  r.val_metric, r.alpha, r.mean_margin, record_timing ? r.seconds : 0.0);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace sam
