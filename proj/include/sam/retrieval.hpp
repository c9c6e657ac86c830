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

#ifndef SAM_RETRIEVAL_HPP_
#define SAM_RETRIEVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sam/dataset.hpp"
#include "sam/loss.hpp"
#include "sam/projection_net.hpp"

namespace sam {

// Non-interpolated average precision over the ranked relevance flags. With
// at_k, only the top k ranks count and the normaliser is the number of
// relevant items retrieved within them.
double average_precision(std::span<const std::uint8_t> relevance,
                         std::optional<std::size_t> at_k = std::nullopt);

struct RankedList {
  std::int64_t query_id = 0;
  Direction direction = Direction::kImageToText;
  std::vector<std::int64_t> ids;  // descending similarity, ties by ascending id
};

RankedList rank_gallery(std::span<const double> query, std::span<const std::int64_t> gallery_ids,
                        std::span<const Vec> gallery);

struct CategoryAp {
  double ap_mean = 0.0;
  std::size_t n_queries = 0;
};

struct EvalReport {
  double map_i2t = 0.0;
  double map_t2i = 0.0;
  double map_avg = 0.0;
  std::vector<CategoryAp> per_category_i2t;
  std::vector<CategoryAp> per_category_t2i;
  std::size_t query_count = 0;  // per direction
  std::optional<std::size_t> at_k;
};

// Retrieval over already-projected instances. Every instance queries the full
// opposite-modality gallery, its own pair included.
EvalReport evaluate_projections(std::span<const std::int64_t> ids, std::span<const int> categories,
                                std::span<const Vec> visual, std::span<const Vec> textual,
                                std::size_t num_categories,
                                std::optional<std::size_t> at_k = std::nullopt);

// Eval-mode projection of `split`, then evaluate_projections.
EvalReport evaluate(const ProjectionNetwork& net_v, const ProjectionNetwork& net_t,
                    const Dataset& ds, Split split, std::optional<std::size_t> at_k = std::nullopt);

// direction,category,ap_mean,n_queries; per-category rows, then '*' summary rows.
void write_eval_csv(const EvalReport& report, const std::vector<std::string>& categories,
                    const std::filesystem::path& path);

// Three-column I->T / T->I / Avg table.
std::string format_report(const EvalReport& report);

}  // namespace sam

#endif  // SAM_RETRIEVAL_HPP_
