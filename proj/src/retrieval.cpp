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

#include "sam/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>

namespace sam {

double average_precision(std::span<const std::uint8_t> relevance, std::optional<std::size_t> at_k) {
  if (relevance.empty()) throw InvalidConfig("average_precision: empty relevance list");
  const std::size_t limit = at_k ? std::min(*at_k, relevance.size()) : relevance.size();
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < limit; ++k) {
    if (relevance[k] == 0) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

RankedList rank_gallery(std::span<const double> query, std::span<const std::int64_t> gallery_ids,
                        std::span<const Vec> gallery) {
  if (gallery.empty()) throw InvalidConfig("rank_gallery: empty gallery");
  if (gallery_ids.size() != gallery.size()) {
    throw DimensionMismatch("rank_gallery: id and vector counts differ");
  }
  std::vector<double> sim(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) sim[i] = cosine_sim(query, gallery[i]);
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return gallery_ids[a] < gallery_ids[b];
  });
  RankedList out;
  out.ids.reserve(order.size());
  for (std::size_t i : order) out.ids.push_back(gallery_ids[i]);
  return out;
}

namespace {

// Mean AP over all queries of one direction; fills per-category means.
double direction_map(std::span<const std::int64_t> ids, std::span<const int> categories,
                     std::span<const Vec> queries, std::span<const Vec> gallery,
                     std::size_t num_categories, std::optional<std::size_t> at_k,
                     Direction direction, std::vector<CategoryAp>& per_category) {
  std::unordered_map<std::int64_t, int> category_of;
  for (std::size_t i = 0; i < ids.size(); ++i) category_of[ids[i]] = categories[i];

  std::vector<double> sums(num_categories, 0.0);
  per_category.assign(num_categories, {});
  double total = 0.0;
  std::vector<std::uint8_t> relevance(ids.size());
  for (std::size_t q = 0; q < ids.size(); ++q) {
    RankedList ranked = rank_gallery(queries[q], ids, gallery);
    ranked.query_id = ids[q];
    ranked.direction = direction;
    for (std::size_t r = 0; r < ranked.ids.size(); ++r) {
      relevance[r] = category_of.at(ranked.ids[r]) == categories[q] ? 1 : 0;
    }
    const double ap = average_precision(relevance, at_k);
    total += ap;
    sums[categories[q]] += ap;
    ++per_category[categories[q]].n_queries;
  }
  for (std::size_t c = 0; c < num_categories; ++c) {
    if (per_category[c].n_queries > 0) {
      per_category[c].ap_mean = sums[c] / static_cast<double>(per_category[c].n_queries);
    }
  }
  return total / static_cast<double>(ids.size());
}

}  // namespace

EvalReport evaluate_projections(std::span<const std::int64_t> ids, std::span<const int> categories,
                                std::span<const Vec> visual, std::span<const Vec> textual,
                                std::size_t num_categories, std::optional<std::size_t> at_k) {
  if (ids.empty()) throw InsufficientData("evaluate: split is empty");
  if (categories.size() != ids.size() || visual.size() != ids.size() ||
      textual.size() != ids.size()) {
    throw DimensionMismatch("evaluate: ids, labels and projections disagree in count");
  }
  for (int c : categories) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_categories) {
      throw LabelError("evaluate: category " + std::to_string(c) + " out of range");
    }
  }
  EvalReport report;
  report.at_k = at_k;
  report.query_count = ids.size();
  report.map_i2t = direction_map(ids, categories, visual, textual, num_categories, at_k,
                                 Direction::kImageToText, report.per_category_i2t);
  report.map_t2i = direction_map(ids, categories, textual, visual, num_categories, at_k,
                                 Direction::kTextToImage, report.per_category_t2i);
  report.map_avg = (report.map_i2t + report.map_t2i) / 2.0;
  return report;
}

EvalReport evaluate(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                    const Dataset& ds, Split split, std::optional<std::size_t> at_k) {
  if (net_v.input_dim() != ds.d_v || net_t.input_dim() != ds.d_t) {
    throw IncompatibleCheckpoint("network input dims do not match the dataset");
  }
  const auto members = ds.indices(split);
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  std::vector<const Vec*> xv, xt;
  for (std::size_t i : members) {
    const auto& inst = ds.instances[i];
    ids.push_back(inst.id);
    labels.push_back(inst.category);
    xv.push_back(&inst.visual);
    xt.push_back(&inst.textual);
  }
  const std::vector<Vec> pv = project_many(net_v, xv);
  const std::vector<Vec> pt = project_many(net_t, xt);
  return evaluate_projections(ids, labels, pv, pt, ds.num_categories(), at_k);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_eval_csv(const EvalReport& report, const std::vector<std::string>& categories,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "direction,category,ap_mean,n_queries\n";
  auto rows = [&](const char* dir, const std::vector<CategoryAp>& per) {
    for (std::size_t c = 0; c < per.size(); ++c) {
      if (per[c].n_queries == 0) continue;
      const std::string name = c < categories.size() ? categories[c] : std::to_string(c);
      out << dir << ',' << name << ',' << fmt(per[c].ap_mean) << ',' << per[c].n_queries << '\n';
    }
  };
  rows("i2t", report.per_category_i2t);
  rows("t2i", report.per_category_t2i);
  out << "i2t,*," << fmt(report.map_i2t) << ',' << report.query_count << '\n';
  out << "t2i,*," << fmt(report.map_t2i) << ',' << report.query_count << '\n';
  out << "avg,*," << fmt(report.map_avg) << ',' << 2 * report.query_count << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_report(const EvalReport& report) {
  char buf[256];
  const std::string metric = report.at_k ? "mAP@" + std::to_string(*report.at_k) : "mAP";
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s\n%-8s %8.4f %8.4f %8.4f\n", metric.c_str(),
                "I->T", "T->I", "Avg", "", report.map_i2t, report.map_t2i, report.map_avg);
  return buf;
}

}  // namespace sam
