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

#include "sam/loss.hpp"

#include <algorithm>
#include <string>

namespace sam {

std::vector<Triplet> sample_triplets(std::span<const MultimodalInstance> batch, int n_neg,
                                     Rng& rng) {
  if (n_neg < 1) throw InvalidConfig("n_neg must be at least 1");
  std::vector<Triplet> triplets;
  std::vector<std::size_t> candidates;
  for (const auto& anchor : batch) {
    candidates.clear();
    for (std::size_t j = 0; j < batch.size(); ++j) {
      if (batch[j].category != anchor.category) candidates.push_back(j);
    }
    const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(n_neg));
    // Partial Fisher-Yates: the first `take` slots become the sample.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t pick = i + rng.below(candidates.size() - i);
      std::swap(candidates[i], candidates[pick]);
    }
    for (auto dir : {Direction::kImageToText, Direction::kTextToImage}) {
      for (std::size_t i = 0; i < take; ++i) {
        triplets.push_back({dir, anchor.id, batch[candidates[i]].id, 0.0});
      }
    }
  }
  return triplets;
}

double hinge_term(double margin, double s_pos, double s_neg) {
  return std::max(0.0, margin - s_pos + s_neg);
}

void ProjectionTable::insert(std::int64_t id, Vec visual, Vec textual) {
  const auto [it, fresh] = index_.emplace(id, visual_.size());
  if (!fresh) {
    visual_[it->second] = std::move(visual);
    textual_[it->second] = std::move(textual);
    return;
  }
  visual_.push_back(std::move(visual));
  textual_.push_back(std::move(textual));
}

std::size_t ProjectionTable::slot(std::int64_t id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw MissingProjection("no projection for instance " + std::to_string(id));
  return it->second;
}

ProjectionTable ProjectionTable::zeros_like() const {
  ProjectionTable out = *this;
  for (auto& v : out.visual_) std::fill(v.begin(), v.end(), 0.0);
  for (auto& v : out.textual_) std::fill(v.begin(), v.end(), 0.0);
  return out;
}

BatchLoss batch_loss_and_grads(std::span<const Triplet> triplets, const ProjectionTable& projections) {
  BatchLoss out;
  out.grads = projections.zeros_like();
  for (const auto& tr : triplets) {
    const bool i2t = tr.direction == Direction::kImageToText;
    const Vec& anchor = i2t ? projections.visual(tr.anchor_id) : projections.textual(tr.anchor_id);
    const Vec& positive = i2t ? projections.textual(tr.anchor_id) : projections.visual(tr.anchor_id);
    const Vec& negative =
        i2t ? projections.textual(tr.negative_id) : projections.visual(tr.negative_id);
    const double s_pos = cosine_sim(anchor, positive);
    const double s_neg = cosine_sim(anchor, negative);
    const double term = hinge_term(tr.margin, s_pos, s_neg);
    if (!(term > 0.0)) continue;
    out.total += term;
    ++out.active_count;

    Vec& g_anchor = i2t ? out.grads.visual(tr.anchor_id) : out.grads.textual(tr.anchor_id);
    Vec& g_positive = i2t ? out.grads.textual(tr.anchor_id) : out.grads.visual(tr.anchor_id);
    Vec& g_negative = i2t ? out.grads.textual(tr.negative_id) : out.grads.visual(tr.negative_id);
    for (std::size_t d = 0; d < anchor.size(); ++d) {
      g_anchor[d] += negative[d] - positive[d];
      g_positive[d] -= anchor[d];
      g_negative[d] += anchor[d];
    }
  }
  return out;
}

}  // namespace sam
