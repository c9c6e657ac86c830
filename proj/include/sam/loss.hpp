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

#ifndef SAM_LOSS_HPP_
#define SAM_LOSS_HPP_

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "sam/dataset.hpp"
#include "sam/numerics.hpp"

namespace sam {

enum class Direction { kImageToText, kTextToImage };

// The positive is always the anchor instance's own opposite-modality vector.
struct Triplet {
  Direction direction = Direction::kImageToText;
  std::int64_t anchor_id = 0;
  std::int64_t negative_id = 0;
  double margin = 0.0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// For every batch member, draws up to n_neg different-category negatives from
// the batch without replacement and emits one triplet per direction for each.
// Both directions share the negatives. Margins are left at zero.
std::vector<Triplet> sample_triplets(std::span<const MultimodalInstance> batch, int n_neg,
                                     Rng& rng);

// max(0, margin - s_pos + s_neg)
double hinge_term(double margin, double s_pos, double s_neg);

// Unit-norm projections of both modalities keyed by instance id.
class ProjectionTable {
 public:
  void insert(std::int64_t id, Vec visual, Vec textual);
  bool contains(std::int64_t id) const { return index_.contains(id); }
  std::size_t size() const { return visual_.size(); }

  const Vec& visual(std::int64_t id) const { return visual_[slot(id)]; }
  const Vec& textual(std::int64_t id) const { return textual_[slot(id)]; }
  Vec& visual(std::int64_t id) { return visual_[slot(id)]; }
  Vec& textual(std::int64_t id) { return textual_[slot(id)]; }

  // Same ids and shapes, all entries zero.
  ProjectionTable zeros_like() const;

 private:
  std::size_t slot(std::int64_t id) const;

  std::unordered_map<std::int64_t, std::size_t> index_;
  std::vector<Vec> visual_;
  std::vector<Vec> textual_;
};

struct BatchLoss {
  double total = 0.0;
  std::size_t active_count = 0;
  ProjectionTable grads;  // d total / d projection
};

// Summed bidirectional hinge loss over the triplets, with the gradient for
// every projection. A term sitting exactly on the hinge contributes nothing.
BatchLoss batch_loss_and_grads(std::span<const Triplet> triplets, const ProjectionTable& projections);

}  // namespace sam

#endif  // SAM_LOSS_HPP_
