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

#ifndef SAM_DATASET_HPP_
#define SAM_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sam/numerics.hpp"

namespace sam {

enum class Split { kTrain, kValidation, kTest };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

// One paired image/text record with its category index.
struct MultimodalInstance {
  std::int64_t id = 0;
  Vec visual;
  Vec textual;
  int category = 0;
};

struct Dataset {
  std::string name;
  std::vector<std::string> categories;
  std::size_t d_v = 0;
  std::size_t d_t = 0;
  std::vector<MultimodalInstance> instances;
  std::vector<Split> splits;  // parallel to instances

  std::size_t num_categories() const { return categories.size(); }
  // Positions (not ids) of the instances assigned to `split`, in storage order.
  std::vector<std::size_t> indices(Split split) const;
  std::vector<MultimodalInstance> subset(Split split) const;

  // Throws LabelError / ShapeError / ManifestError / NonFiniteFeature.
  void validate() const;
};

// Directory layout: manifest.json, visual.f32, textual.f32, labels.csv.
// Features are little-endian float32 on disk.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct SyntheticSpec {
  int n_categories = 10;
  int per_category = 200;
  int d_v = 32;
  int d_t = 32;
  double intra_spread = 0.1;
  double inter_sep = 1.0;
  std::uint64_t seed = 7;
};

// Gaussian clusters around per-category means in each modality, split
// 70/10/20 train/validation/test within every category.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Min-max range of pairwise feature distances for one modality.
struct DistanceRange {
  double min_dist = 0.0;
  double max_dist = 1.0;

  // (d - min) / (max - min), clamped to [0, 1].
  double normalize(double d) const;
};

struct DistanceStats {
  DistanceRange visual;
  DistanceRange textual;
  std::size_t sample_pair_count = 0;
  bool degenerate = false;
};

inline constexpr std::size_t kDefaultStatsPairs = 100000;

// Distance ranges over a seeded sample of unordered training pairs. Enumerates
// every pair when max_pairs covers them all.
DistanceStats compute_distance_stats(const Dataset& ds, std::size_t max_pairs,
                                     std::uint64_t seed);

}  // namespace sam

#endif  // SAM_DATASET_HPP_
