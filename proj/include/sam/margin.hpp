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

#ifndef SAM_MARGIN_HPP_
#define SAM_MARGIN_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sam/dataset.hpp"
#include "sam/projection_net.hpp"

namespace sam {

// Knobs of the scheduled adaptive margin.
struct MarginConfig {
  double m = 1.0;       // static margin
  double lambda = 0.25; // weight of the semantic term against the cluster term
  double k = 0.1;       // sigmoid smoothing
  double f_a = 0.4;     // fraction of n_e where the schedule crosses 0.5
  int n_e = 100;        // total epochs
  // Pins the schedule (0 = static margin only, 1 = adaptive margin only).
  std::optional<double> forced_alpha;

  void validate() const;
};

// 1 / (1 + exp(-k (t - f_a n_e))). Ignores forced_alpha.
double scheduler_alpha(double t, const MarginConfig& cfg);

// scheduler_alpha unless the config pins alpha.
double effective_alpha(double t, const MarginConfig& cfg);

// Mean of the per-modality min-max normalized feature distances, in [0, 1].
double semantic_margin(const MultimodalInstance& a, const MultimodalInstance& n,
                       const DistanceStats& stats);

// Per-category means of the projected training instances, one table per epoch.
struct CentroidTable {
  int epoch = 0;
  std::vector<Vec> visual;
  std::vector<Vec> textual;
  std::vector<std::size_t> counts;

  std::size_t num_categories() const { return counts.size(); }
};

// Builds the table from precomputed projections. Every category in
// [0, num_categories) needs at least one member.
CentroidTable centroids_from_projections(std::span<const int> categories,
                                         std::span<const Vec> visual,
                                         std::span<const Vec> textual,
                                         std::size_t num_categories, int epoch);

// Eval-mode projection of the whole training split.
CentroidTable compute_centroids(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                                const Dataset& ds, int epoch);

// Average over both modalities of 1 - (cos + 1) / 2 between category centroids.
double cluster_margin(int l_a, int l_n, const CentroidTable& table);

double adaptive_margin(double f_ms, double f_mc, const MarginConfig& cfg);

struct MarginBreakdown {
  double alpha = 0.0;
  double f_ms = 0.0;
  double f_mc = 0.0;
  double f_am = 0.0;
  double f_m = 0.0;
};

// All intermediate terms of the scheduled margin for one anchor/negative pair.
MarginBreakdown margin_components(const MultimodalInstance& a, const MultimodalInstance& n,
                                  double t, const CentroidTable& table,
                                  const DistanceStats& stats, const MarginConfig& cfg);

// alpha(t) * f_am + (1 - alpha(t)) * m. Throws SameCategory.
double scheduled_margin(const MultimodalInstance& a, const MultimodalInstance& n, double t,
                        const CentroidTable& table, const DistanceStats& stats,
                        const MarginConfig& cfg);

// Per-epoch aggregates of the margins imposed on triplets.
class MarginTrace {
 public:
  struct Accumulator {
    double sum = 0.0;
    std::size_t count = 0;
    double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
  };
  struct Epoch {
    double alpha = 0.0;
    Accumulator global;
    std::map<std::pair<int, int>, Accumulator> pairs;
  };

  void set_alpha(int epoch, double alpha);
  void record(int epoch, int l_a, int l_n, double value);

  const std::map<int, Epoch>& epochs() const { return epochs_; }
  const Epoch* find(int epoch) const;
  bool empty() const { return epochs_.empty(); }

  // Header epoch,alpha,cat_a,cat_b,mean_margin,count. Global rows use '*'.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::map<int, Epoch> epochs_;
};

struct MarginCsvRow {
  int epoch = 0;
  double alpha = 0.0;
  std::optional<int> cat_a;  // empty for the epoch's global row
  std::optional<int> cat_b;
  double mean_margin = 0.0;
  std::size_t count = 0;
};

std::vector<MarginCsvRow> read_margins_csv(const std::filesystem::path& path);

}  // namespace sam

#endif  // SAM_MARGIN_HPP_
