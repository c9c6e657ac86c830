// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sam/dataset.hpp"
#include "sam/loss.hpp"
#include "sam/margin.hpp"
#include "sam/projection_net.hpp"
#include "sam/retrieval.hpp"
#include "sam/trainer.hpp"
#include "test_util.hpp"

using namespace sam;
using sam::testing::random_unit;
using sam::testing::random_vec;
using sam::testing::scratch_dir;
using sam::testing::slurp;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// ---- reference helpers, written independently of the library ----

double ref_dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double ref_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double ref_unit_range(double d, const DistanceRange& r) {
  return std::clamp((d - r.min_dist) / (r.max_dist - r.min_dist), 0.0, 1.0);
}

double ref_semantic(const MultimodalInstance& a, const MultimodalInstance& n, const DistanceStats& s) {
  return (ref_unit_range(ref_dist(a.visual, n.visual), s.visual) +
          ref_unit_range(ref_dist(a.textual, n.textual), s.textual)) /
         2.0;
}

double ref_cluster(const Vec& ca, const Vec& cn, const Vec& ta, const Vec& tn) {
  auto term = [](const Vec& x, const Vec& y) {
    const double c = std::clamp(ref_dot(x, y) / std::sqrt(ref_dot(x, x) * ref_dot(y, y)), -1.0, 1.0);
    return 1.0 - (c + 1.0) / 2.0;
  };
  return (term(ca, cn) + term(ta, tn)) / 2.0;
}

double ref_alpha(double t, double k, double fa, int ne) {
  return 1.0 / (1.0 + std::exp(-k * (t - fa * ne)));
}

// AP by definition: mean precision at each relevant rank.
double ref_ap(const std::vector<std::uint8_t>& rel) {
  double sum = 0.0;
  int relevant = 0;
  for (std::size_t j = 0; j < rel.size(); ++j) {
    if (!rel[j]) continue;
    int upto = 0;
    for (std::size_t i = 0; i <= j; ++i) upto += rel[i];
    sum += static_cast<double>(upto) / static_cast<double>(j + 1);
    ++relevant;
  }
  return relevant ? sum / relevant : 0.0;
}

// ---- criterion 1 ----

struct PipelineCase {
  std::vector<MultimodalInstance> batch;
  std::vector<Triplet> triplets;
  ProjectionNetwork net_v;
  ProjectionNetwork net_t;
};

ProjectionTable project_batch(const PipelineCase& c) {
  ProjectionTable table;
  for (const auto& inst : c.batch) {
    table.insert(inst.id, project(c.net_v, inst.visual), project(c.net_t, inst.textual));
  }
  return table;
}

double pipeline_loss(const PipelineCase& c) {
  return batch_loss_and_grads(c.triplets, project_batch(c)).total;
}

bool near_kink(const PipelineCase& c) {
  const ProjectionTable p = project_batch(c);
  for (const auto& t : c.triplets) {
    const bool i2t = t.direction == Direction::kImageToText;
    const Vec& a = i2t ? p.visual(t.anchor_id) : p.textual(t.anchor_id);
    const Vec& pos = i2t ? p.textual(t.anchor_id) : p.visual(t.anchor_id);
    const Vec& neg = i2t ? p.textual(t.negative_id) : p.visual(t.negative_id);
    if (std::abs(t.margin - ref_dot(a, pos) + ref_dot(a, neg)) < 1e-3) return true;
  }
  return false;
}

Outcome criterion_gradients() {
  const auto start = Clock::now();
  Rng rng(2024);
  double worst_rel = 0.0;
  int configs = 0, rejected = 0;
  std::size_t params_checked = 0;
  while (configs < 100) {
    PipelineCase c;
    const int n = 4 + static_cast<int>(rng.below(5));
    const int cats = 2 + static_cast<int>(rng.below(2));
    for (int i = 0; i < n; ++i) {
      c.batch.push_back({i, random_vec(rng, 8), random_vec(rng, 8), i < cats ? i : static_cast<int>(rng.below(cats))});
    }
    c.net_v = init_network(8, 16, 4, rng.next_u64(), 0.0);
    c.net_t = init_network(8, 16, 4, rng.next_u64(), 0.0);
    for (ProjectionNetwork* net : {&c.net_v, &c.net_t}) {
      const double gain = rng.uniform(0.5, 2.0);
      for (double& w : net->w1.values()) w *= gain;
      for (double& w : net->w2.values()) w *= gain;
      for (double& b : net->b1) b = 0.1 * rng.normal();
      for (double& b : net->b2) b = 0.1 * rng.normal();
    }
    c.triplets = sample_triplets(c.batch, 1 + static_cast<int>(rng.below(3)), rng);
    for (auto& t : c.triplets) t.margin = rng.uniform(0.2, 1.5);
    if (near_kink(c) || pipeline_loss(c) == 0.0) {
      ++rejected;
      continue;
    }
    ++configs;

    // Analytic: loss -> projection grads -> backprop through both towers.
    const BatchLoss loss = batch_loss_and_grads(c.triplets, project_batch(c));
    Gradients gv = Gradients::zeros_like(c.net_v), gt = Gradients::zeros_like(c.net_t);
    for (const auto& inst : c.batch) {
      backward_accumulate(c.net_v, forward(c.net_v, inst.visual, Mode::kEval), loss.grads.visual(inst.id), gv);
      backward_accumulate(c.net_t, forward(c.net_t, inst.textual, Mode::kEval), loss.grads.textual(inst.id), gt);
    }

    auto check = [&](std::vector<double>& params, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + 1e-5;
        const double up = pipeline_loss(c);
        params[i] = saved - 1e-5;
        const double down = pipeline_loss(c);
        params[i] = saved;
        const double numeric = (up - down) / 2e-5;
        const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
        // Below 1e-7 the central difference is dominated by rounding noise.
        const double rel = scale < 1e-7 ? std::abs(numeric - analytic[i]) / 1e-7
                                        : std::abs(numeric - analytic[i]) / scale;
        worst_rel = std::max(worst_rel, rel);
        ++params_checked;
      }
    };
    check(c.net_v.w1.values(), gv.dw1.values());
    check(c.net_v.b1, gv.db1);
    check(c.net_v.w2.values(), gv.dw2.values());
    check(c.net_v.b2, gv.db2);
    check(c.net_t.w1.values(), gt.dw1.values());
    check(c.net_t.b1, gt.db1);
    check(c.net_t.w2.values(), gt.dw2.values());
    check(c.net_t.b2, gt.db2);
  }
  const double elapsed = seconds_since(start);
  return {worst_rel < 1e-4 && elapsed < 10.0,
          fmt("100 configs (%d redrawn near a hinge kink), %zu parameters, max rel err %.3g, %.2f s",
              rejected, params_checked, worst_rel, elapsed)};
}

// ---- criterion 2 ----

Outcome criterion_scheduler() {
  bool ok = true;
  std::string notes;
  MarginConfig cfg;
  cfg.f_a = 0.4;
  cfg.n_e = 100;
  for (double k : {0.01, 0.1, 1.0}) {
    cfg.k = k;
    ok = ok && std::abs(scheduler_alpha(cfg.f_a * cfg.n_e, cfg) - 0.5) <= 1e-12;
    int saturated = 0;
    for (int t = 1; t <= cfg.n_e; ++t) {
      const double prev = scheduler_alpha(t - 1, cfg), cur = scheduler_alpha(t, cfg);
      if (prev == 1.0 && cur == 1.0) {
        // 1 - alpha is below half an ulp of 1; the rise is not representable.
        ++saturated;
        continue;
      }
      ok = ok && cur > prev;
    }
    if (saturated > 0) notes += fmt(" k=%g: %d steps saturated at 1.0 in double;", k, saturated);
  }
  cfg.k = 0.1;
  const double lo = scheduler_alpha(0, cfg), hi = scheduler_alpha(100, cfg);
  ok = ok && std::abs(lo - 1.0 / (1.0 + std::exp(4.0))) <= 1e-12;
  ok = ok && std::abs(hi - 1.0 / (1.0 + std::exp(-6.0))) <= 1e-12;
  return {ok, fmt("alpha(0)=%.16g alpha(100)=%.16g;", lo, hi) + notes};
}

// ---- criterion 3 ----

Outcome criterion_margin_bounds() {
  Rng rng(77);
  constexpr int kDraws = 100000;
  int violations = 0, asymmetric = 0, ablation_mismatch = 0;
  for (int draw = 0; draw < kDraws; ++draw) {
    const std::size_t dv = 1 + rng.below(6), dt = 1 + rng.below(6);
    const std::size_t dim = 2 + rng.below(5);
    const int cats = 2 + static_cast<int>(rng.below(4));
    CentroidTable table;
    table.epoch = 1;
    for (int c = 0; c < cats; ++c) {
      table.visual.push_back(random_vec(rng, dim, rng.uniform(0.1, 1.0)));
      table.textual.push_back(random_vec(rng, dim, rng.uniform(0.1, 1.0)));
      table.counts.push_back(1);
    }
    const int la = static_cast<int>(rng.below(cats));
    const int ln = (la + 1 + static_cast<int>(rng.below(cats - 1))) % cats;
    const MultimodalInstance a{0, random_vec(rng, dv), random_vec(rng, dt), la};
    const MultimodalInstance n{1, random_vec(rng, dv), random_vec(rng, dt), ln};
    DistanceStats stats;
    stats.visual = {rng.uniform(0.0, 1.0), 0.0};
    stats.visual.max_dist = stats.visual.min_dist + rng.uniform(0.5, 4.0);
    stats.textual = {rng.uniform(0.0, 1.0), 0.0};
    stats.textual.max_dist = stats.textual.min_dist + rng.uniform(0.5, 4.0);

    MarginConfig cfg;
    cfg.m = rng.uniform(0.05, 2.0);
    cfg.lambda = rng.uniform();
    cfg.k = rng.uniform(0.01, 1.0);
    cfg.f_a = rng.uniform();
    cfg.n_e = 1 + static_cast<int>(rng.below(200));
    const double t = rng.uniform(0.0, cfg.n_e);

    const MarginBreakdown b = margin_components(a, n, t, table, stats, cfg);
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    const double tol = 1e-12;
    const bool bounded = in01(b.f_ms) && in01(b.f_mc) && in01(b.f_am) &&
                         b.f_m >= std::min(b.f_am, cfg.m) - tol &&
                         b.f_m <= std::max(b.f_am, cfg.m) + tol &&
                         std::abs(b.f_ms - ref_semantic(a, n, stats)) <= tol &&
                         std::abs(b.f_mc - ref_cluster(table.visual[la], table.visual[ln],
                                                       table.textual[la], table.textual[ln])) <= tol &&
                         std::abs(b.alpha - ref_alpha(t, cfg.k, cfg.f_a, cfg.n_e)) <= tol;
    violations += bounded ? 0 : 1;
    asymmetric += cluster_margin(la, ln, table) == cluster_margin(ln, la, table) ? 0 : 1;

    MarginConfig pinned = cfg;
    pinned.forced_alpha = 1.0;
    pinned.lambda = 1.0;
    ablation_mismatch += scheduled_margin(a, n, t, table, stats, pinned) == b.f_ms ? 0 : 1;
  }
  return {violations == 0 && asymmetric == 0 && ablation_mismatch == 0,
          fmt("%d draws: %d bound/oracle violations, %d asymmetric f_mc, %d ablation mismatches",
              kDraws, violations, asymmetric, ablation_mismatch)};
}

// ---- criterion 4 ----

Outcome criterion_map_oracle() {
  double worst = 0.0;
  for (unsigned mask = 0; mask < 256; ++mask) {
    std::vector<std::uint8_t> rel(8);
    for (int b = 0; b < 8; ++b) rel[b] = (mask >> b) & 1U;
    worst = std::max(worst, std::abs(average_precision(rel) - ref_ap(rel)));
  }
  bool in_band = true;
  std::string maps;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const Dataset ds = generate_synthetic(spec);
    Rng rng(seed * 1000 + 1);
    std::vector<std::int64_t> ids;
    std::vector<int> cats;
    std::vector<Vec> v, t;
    for (std::size_t i : ds.indices(Split::kTest)) {
      ids.push_back(ds.instances[i].id);
      cats.push_back(ds.instances[i].category);
      // Embeddings drawn independently of the labels.
      v.push_back(random_unit(rng, 200));
      t.push_back(random_unit(rng, 200));
    }
    const double m = evaluate_projections(ids, cats, v, t, 10).map_avg;
    in_band = in_band && m >= 0.08 && m <= 0.12;
    maps += fmt(" %.4f", m);
  }
  return {worst <= 1e-12 && in_band,
          fmt("256 sequences max |AP - brute force| = %.3g; random mAP over 5 seeds:", worst) + maps};
}

// ---- criteria 5, 6, 8 share the default run ----

struct DefaultRun {
  Dataset ds;
  TrainConfig cfg;
  TrainResult result;
  EvalReport test;
  double seconds = 0.0;
};

DefaultRun train_default() {
  DefaultRun run;
  run.ds = generate_synthetic(SyntheticSpec{});
  run.cfg.margin.n_e = 50;
  run.cfg.threads = 1;
  const auto start = Clock::now();
  run.result = train(run.ds, run.cfg);
  run.seconds = seconds_since(start);
  run.test = evaluate(run.result.net_v, run.result.net_t, run.ds, Split::kTest);
  return run;
}

Outcome criterion_end_to_end(const DefaultRun& run) {
  const bool ok = run.test.map_i2t >= 0.90 && run.test.map_t2i >= 0.90 && run.seconds < 120.0;
  return {ok, fmt("test mAP I->T %.4f T->I %.4f Avg %.4f, best epoch %d, %.1f s single-threaded",
                  run.test.map_i2t, run.test.map_t2i, run.test.map_avg,
                  run.result.history.best_epoch, run.seconds)};
}

Outcome criterion_margin_schedule(const DefaultRun& run) {
  const auto dir = scratch_dir("accept_schedule");
  run.result.trace.write_csv(dir / "margins.csv");
  std::map<int, MarginCsvRow> global;
  for (const auto& row : read_margins_csv(dir / "margins.csv")) {
    if (!row.cat_a) global[row.epoch] = row;
  }
  const MarginConfig& m = run.cfg.margin;

  int early_epochs = 0, early_bad = 0;
  int rises = 0;
  double max_rise = 0.0, worst_alpha = 0.0;
  std::string rise_epochs;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& [t, row] : global) {
    worst_alpha = std::max(worst_alpha, std::abs(row.alpha - ref_alpha(t, m.k, m.f_a, m.n_e)));
    if (row.alpha < 0.05) {
      ++early_epochs;
      early_bad += std::abs(row.mean_margin - m.m) <= 0.01 ? 0 : 1;
    }
    if (!(row.mean_margin < prev)) {
      ++rises;
      max_rise = std::max(max_rise, row.mean_margin - prev);
      rise_epochs += fmt(" %d", t);
    }
    prev = row.mean_margin;
  }
  const double first = global.empty() ? 0.0 : global.begin()->second.mean_margin;
  const double last = global.empty() ? 1.0 : global.rbegin()->second.mean_margin;
  const bool ok = static_cast<int>(global.size()) == m.n_e && early_bad == 0 && rises == 0 &&
                  last < 0.95 && worst_alpha <= 1e-15;
  std::string detail = fmt(
      "epochs with alpha<0.05: %d (%d off m); mean f_m %.4f -> %.4f; alpha column max err %.2g; "
      "non-decreasing steps: %d",
      early_epochs, early_bad, first, last, worst_alpha, rises);
  if (rises > 0) detail += fmt(" (epochs%s, largest rise %.5f)", rise_epochs.c_str(), max_rise);
  return {ok, detail};
}

Outcome criterion_determinism(const DefaultRun& first) {
  const auto dir = scratch_dir("accept_determinism");
  const TrainResult second = train(first.ds, first.cfg);
  auto dump = [&](const TrainResult& r, const std::string& name) {
    write_history_csv(r.history, dir / (name + ".csv"), false);
    save_checkpoint({r.net_v, r.net_t, first.cfg.seed, r.history.best_epoch}, dir / name);
  };
  dump(first.result, "a");
  dump(second, "b");
  const bool history_same = slurp(dir / "a.csv") == slurp(dir / "b.csv");
  const bool weights_same = slurp(dir / "a" / "weights.f32") == slurp(dir / "b" / "weights.f32");
  return {history_same && weights_same && !slurp(dir / "a.csv").empty(),
          fmt("history.csv %s, weights.f32 %s (%zu bytes)", history_same ? "identical" : "DIFFERS",
              weights_same ? "identical" : "DIFFERS", slurp(dir / "a" / "weights.f32").size())};
}

// ---- criterion 7 ----

Outcome criterion_ablations(const DefaultRun& base) {
  // alpha = 1, lambda = 1: every margin must be the semantic term alone.
  const TrainConfig semantic_cfg = ablation_mode(base.cfg, Ablation::kAlphaOneLambdaOne);
  const DistanceStats stats = training_distance_stats(base.ds, semantic_cfg);
  std::size_t semantic_triplets = 0, semantic_bad = 0;
  std::map<std::tuple<int, int, int>, std::pair<double, std::size_t>> expected;
  TrainObserver semantic_obs;
  semantic_obs.on_batch = [&](const BatchRecord& b) {
    std::map<std::int64_t, const MultimodalInstance*> by_id;
    for (const auto& inst : b.batch) by_id[inst.id] = &inst;
    for (std::size_t i = 0; i < b.triplets.size(); ++i) {
      const auto& a = *by_id.at(b.triplets[i].anchor_id);
      const auto& n = *by_id.at(b.triplets[i].negative_id);
      const double f_ms = ref_semantic(a, n, stats);
      semantic_bad += b.margins[i].f_m == b.margins[i].f_ms && b.triplets[i].margin == b.margins[i].f_m &&
                              std::abs(f_ms - b.margins[i].f_m) <= 1e-14
                          ? 0
                          : 1;
      auto& acc = expected[{b.epoch, a.category, n.category}];
      acc.first += f_ms;
      ++acc.second;
      ++semantic_triplets;
    }
  };
  const TrainResult semantic = train(base.ds, semantic_cfg, &semantic_obs);
  const auto dir = scratch_dir("accept_ablation");
  semantic.trace.write_csv(dir / "margins.csv");
  std::size_t csv_bad = 0, csv_rows = 0;
  for (const auto& row : read_margins_csv(dir / "margins.csv")) {
    if (!row.cat_a) continue;
    ++csv_rows;
    const auto it = expected.find({row.epoch, *row.cat_a, *row.cat_b});
    csv_bad += it != expected.end() && it->second.second == row.count &&
                       std::abs(it->second.first / static_cast<double>(it->second.second) - row.mean_margin) <= 1e-12
                   ? 0
                   : 1;
  }
  const bool semantic_ok = semantic.history.epochs.size() == static_cast<std::size_t>(semantic_cfg.epochs()) &&
                           semantic_bad == 0 && csv_bad == 0 && csv_rows > 0;

  // Static margin: compare every batch loss with a direct sum of hinge terms.
  TrainConfig static_cfg = ablation_mode(base.cfg, Ablation::kStaticOnly);
  static_cfg.margin.n_e = 5;
  std::size_t batches = 0, static_bad = 0;
  double worst = 0.0;
  TrainObserver static_obs;
  static_obs.on_batch = [&](const BatchRecord& b) {
    const ProjectionTable& p = *b.projections;
    double reference = 0.0;
    for (const auto& t : b.triplets) {
      const bool i2t = t.direction == Direction::kImageToText;
      const Vec& a = i2t ? p.visual(t.anchor_id) : p.textual(t.anchor_id);
      const Vec& pos = i2t ? p.textual(t.anchor_id) : p.visual(t.anchor_id);
      const Vec& neg = i2t ? p.textual(t.negative_id) : p.visual(t.negative_id);
      reference += std::max(0.0, static_cfg.margin.m - ref_dot(a, pos) + ref_dot(a, neg));
      static_bad += t.margin == static_cfg.margin.m ? 0 : 1;
    }
    const double err = std::abs(reference - b.loss->total);
    worst = std::max(worst, err);
    static_bad += err <= 1e-12 ? 0 : 1;
    ++batches;
  };
  train(base.ds, static_cfg, &static_obs);
  const bool static_ok = static_bad == 0 && batches > 0;

  return {semantic_ok && static_ok,
          fmt("alpha1-lambda1: %zu epochs, %zu triplets, %zu off f_ms, %zu/%zu csv rows off; "
              "static: %zu batches, max |loss - reference| %.3g, %zu mismatches",
              semantic.history.epochs.size(), semantic_triplets, semantic_bad, csv_bad, csv_rows,
              batches, worst, static_bad)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d %-26s %s  %s\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient-correctness", criterion_gradients);
  report(2, "scheduler-exactness", criterion_scheduler);
  report(3, "margin-bounds", criterion_margin_bounds);
  report(4, "map-oracle", criterion_map_oracle);

  DefaultRun run;
  bool trained = true;
  try {
    run = train_default();
  } catch (const std::exception& e) {
    trained = false;
    std::printf("default run failed: %s\n", e.what());
  }
  auto needs_run = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!trained) return {false, "default run unavailable"};
      return fn(run);
    };
  };
  report(5, "end-to-end-retrieval", needs_run(criterion_end_to_end));
  report(6, "margin-schedule-shape", needs_run(criterion_margin_schedule));
  report(7, "ablations", needs_run(criterion_ablations));
  report(8, "determinism", needs_run(criterion_determinism));

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
