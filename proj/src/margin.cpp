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

#include "sam/margin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace sam {

void MarginConfig::validate() const {
  if (!(m >= 0.0) || !std::isfinite(m)) throw InvalidConfig("margin m must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidConfig("lambda must be in [0, 1]");
  if (!(k > 0.0) || !std::isfinite(k)) throw InvalidConfig("k must be > 0");
  if (!(f_a >= 0.0 && f_a <= 1.0)) throw InvalidConfig("f_a must be in [0, 1]");
  if (n_e < 0) throw InvalidConfig("n_e must be non-negative");
  if (forced_alpha && !(*forced_alpha >= 0.0 && *forced_alpha <= 1.0)) {
    throw InvalidConfig("forced alpha must be in [0, 1]");
  }
}

double scheduler_alpha(double t, const MarginConfig& cfg) {
  return 1.0 / (1.0 + std::exp(-cfg.k * (t - cfg.f_a * static_cast<double>(cfg.n_e))));
}

double effective_alpha(double t, const MarginConfig& cfg) {
  return cfg.forced_alpha ? *cfg.forced_alpha : scheduler_alpha(t, cfg);
}

double semantic_margin(const MultimodalInstance& a, const MultimodalInstance& n,
                       const DistanceStats& stats) {
  const double dv = stats.visual.normalize(euclidean_dist(a.visual, n.visual));
  const double dt = stats.textual.normalize(euclidean_dist(a.textual, n.textual));
  return 0.5 * (dv + dt);
}

CentroidTable centroids_from_projections(std::span<const int> categories,
                                         std::span<const Vec> visual,
                                         std::span<const Vec> textual,
                                         std::size_t num_categories, int epoch) {
  if (categories.size() != visual.size() || categories.size() != textual.size()) {
    throw DimensionMismatch("centroids: projection and label counts differ");
  }
  if (categories.empty()) throw InsufficientData("centroids: no training projections");
  const std::size_t dim_v = visual.front().size();
  const std::size_t dim_t = textual.front().size();
  CentroidTable table;
  table.epoch = epoch;
  table.visual.assign(num_categories, Vec(dim_v, 0.0));
  table.textual.assign(num_categories, Vec(dim_t, 0.0));
  table.counts.assign(num_categories, 0);
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const int c = categories[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_categories) {
      throw UnknownCategory("centroids: category " + std::to_string(c) + " out of range");
    }
    axpy(1.0, visual[i], table.visual[c]);
    axpy(1.0, textual[i], table.textual[c]);
    ++table.counts[c];
  }
  for (std::size_t c = 0; c < num_categories; ++c) {
    if (table.counts[c] == 0) {
      throw EmptyCategory("category " + std::to_string(c) + " has no training instances");
    }
    const double inv = 1.0 / static_cast<double>(table.counts[c]);
    for (double& v : table.visual[c]) v *= inv;
    for (double& v : table.textual[c]) v *= inv;
  }
  return table;
}

CentroidTable compute_centroids(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                                const Dataset& ds, int epoch) {
  const auto train = ds.indices(Split::kTrain);
  if (train.empty()) throw InsufficientData("centroids: training split is empty");
  std::vector<int> labels;
  std::vector<const Vec*> xv, xt;
  for (std::size_t i : train) {
    const auto& inst = ds.instances[i];
    labels.push_back(inst.category);
    xv.push_back(&inst.visual);
    xt.push_back(&inst.textual);
  }
  const std::vector<Vec> pv = project_many(net_v, xv);
  const std::vector<Vec> pt = project_many(net_t, xt);
  return centroids_from_projections(labels, pv, pt, ds.num_categories(), epoch);
}

namespace {

double centroid_distance(const Vec& a, const Vec& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na >= kNormEpsilon) || !(nb >= kNormEpsilon)) {
    throw DegenerateVector("cluster margin: centroid norm below 1e-12");
  }
  const double s = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return 1.0 - (s + 1.0) / 2.0;
}

}  // namespace

double cluster_margin(int l_a, int l_n, const CentroidTable& table) {
  const auto n = static_cast<int>(table.num_categories());
  if (l_a < 0 || l_a >= n || l_n < 0 || l_n >= n) {
    throw UnknownCategory("cluster margin: category not in centroid table");
  }
  if (l_a == l_n) {
    // Same category: zero by definition, but a degenerate centroid still throws.
    centroid_distance(table.visual[l_a], table.visual[l_a]);
    centroid_distance(table.textual[l_a], table.textual[l_a]);
    return 0.0;
  }
  const double dv = centroid_distance(table.visual[l_a], table.visual[l_n]);
  const double dt = centroid_distance(table.textual[l_a], table.textual[l_n]);
  return 0.5 * (dv + dt);
}

double adaptive_margin(double f_ms, double f_mc, const MarginConfig& cfg) {
  return cfg.lambda * f_ms + (1.0 - cfg.lambda) * f_mc;
}

MarginBreakdown margin_components(const MultimodalInstance& a, const MultimodalInstance& n,
                                  double t, const CentroidTable& table,
                                  const DistanceStats& stats, const MarginConfig& cfg) {
  if (a.category == n.category) {
    throw SameCategory("triplet anchor " + std::to_string(a.id) + " and negative " +
                       std::to_string(n.id) + " share category " + std::to_string(a.category));
  }
  MarginBreakdown out;
  out.alpha = effective_alpha(t, cfg);
  out.f_ms = semantic_margin(a, n, stats);
  out.f_mc = cluster_margin(a.category, n.category, table);
  out.f_am = adaptive_margin(out.f_ms, out.f_mc, cfg);
  out.f_m = out.alpha * out.f_am + (1.0 - out.alpha) * cfg.m;
  return out;
}

double scheduled_margin(const MultimodalInstance& a, const MultimodalInstance& n, double t,
                        const CentroidTable& table, const DistanceStats& stats,
                        const MarginConfig& cfg) {
  return margin_components(a, n, t, table, stats, cfg).f_m;
}

void MarginTrace::set_alpha(int epoch, double alpha) { epochs_[epoch].alpha = alpha; }

void MarginTrace::record(int epoch, int l_a, int l_n, double value) {
  if (!std::isfinite(value)) throw InvalidConfig("margin trace: non-finite value");
  Epoch& e = epochs_[epoch];
  Accumulator& pair = e.pairs[{l_a, l_n}];
  pair.sum += value;
  ++pair.count;
  e.global.sum += value;
  ++e.global.count;
}

const MarginTrace::Epoch* MarginTrace::find(int epoch) const {
  const auto it = epochs_.find(epoch);
  return it == epochs_.end() ? nullptr : &it->second;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void MarginTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,alpha,cat_a,cat_b,mean_margin,count\n";
  for (const auto& [epoch, e] : epochs_) {
    const std::string alpha = fmt_double(e.alpha);
    if (e.global.count > 0) {
      out << epoch << ',' << alpha << ",*,*," << fmt_double(e.global.mean()) << ','
          << e.global.count << '\n';
    }
    for (const auto& [pair, acc] : e.pairs) {
      if (acc.count == 0) continue;
      out << epoch << ',' << alpha << ',' << pair.first << ',' << pair.second << ','
          << fmt_double(acc.mean()) << ',' << acc.count << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<MarginCsvRow> read_margins_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,alpha,cat_a,cat_b,mean_margin,count") {
    throw ManifestError(path.string() + ": unexpected header");
  }
  std::vector<MarginCsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (auto& field : f) std::getline(ss, field, ',');
    MarginCsvRow row;
    try {
      row.epoch = std::stoi(f[0]);
      row.alpha = std::stod(f[1]);
      if (f[2] != "*") row.cat_a = std::stoi(f[2]);
      if (f[3] != "*") row.cat_b = std::stoi(f[3]);
      row.mean_margin = std::stod(f[4]);
      row.count = std::stoull(f[5]);
    } catch (const std::exception&) {
      throw ManifestError(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sam
