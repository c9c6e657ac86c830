#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "sam/loss.hpp"
#include "test_util.hpp"

using namespace sam;
using sam::testing::grad_close;
using sam::testing::random_unit;
using sam::testing::random_vec;

namespace {

std::vector<MultimodalInstance> make_batch(Rng& rng, std::size_t n, int categories) {
  std::vector<MultimodalInstance> batch;
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back({static_cast<std::int64_t>(10 + i), random_vec(rng, 3), random_vec(rng, 2),
                     static_cast<int>(rng.below(categories))});
  }
  return batch;
}

ProjectionTable random_projections(Rng& rng, std::span<const MultimodalInstance> batch, std::size_t dim) {
  ProjectionTable table;
  for (const auto& inst : batch) table.insert(inst.id, random_unit(rng, dim), random_unit(rng, dim));
  return table;
}

}  // namespace

TEST_CASE("sample_triplets") {
  Rng rng(1);
  SUBCASE("single-category batch has no negatives") {
    std::vector<MultimodalInstance> batch = make_batch(rng, 6, 1);
    CHECK(sample_triplets(batch, 3, rng).empty());
  }
  SUBCASE("two instances, two categories") {
    std::vector<MultimodalInstance> batch{{0, {1}, {1}, 0}, {1, {2}, {2}, 1}};
    const auto triplets = sample_triplets(batch, 1, rng);
    REQUIRE(triplets.size() == 4);
    std::set<std::tuple<int, std::int64_t, std::int64_t>> seen;
    for (const auto& t : triplets) {
      seen.insert({static_cast<int>(t.direction), t.anchor_id, t.negative_id});
    }
    CHECK(seen == std::set<std::tuple<int, std::int64_t, std::int64_t>>{
                      {0, 0, 1}, {0, 1, 0}, {1, 0, 1}, {1, 1, 0}});
  }
  SUBCASE("n_neg beyond the available negatives takes each once") {
    std::vector<MultimodalInstance> batch{{0, {1}, {1}, 0}, {1, {2}, {2}, 1}, {2, {3}, {3}, 1},
                                          {3, {4}, {4}, 2}};
    const auto triplets = sample_triplets(batch, 10, rng);
    std::multiset<std::int64_t> negatives_of_0;
    for (const auto& t : triplets) {
      if (t.anchor_id == 0 && t.direction == Direction::kImageToText) negatives_of_0.insert(t.negative_id);
    }
    CHECK(negatives_of_0 == std::multiset<std::int64_t>{1, 2, 3});
    CHECK(triplets.size() == 2 * (3 + 2 + 2 + 3));
  }
  SUBCASE("negatives always differ in category; output is seed-deterministic") {
    const auto batch = make_batch(rng, 40, 4);
    Rng r1(77), r2(77);
    const auto a = sample_triplets(batch, 2, r1);
    CHECK(a == sample_triplets(batch, 2, r2));
    std::map<std::int64_t, int> category;
    for (const auto& inst : batch) category[inst.id] = inst.category;
    for (const auto& t : a) CHECK(category[t.anchor_id] != category[t.negative_id]);
  }
  SUBCASE("swapping modalities maps I->T triplets onto T->I") {
    const auto batch = make_batch(rng, 30, 3);
    auto swapped = batch;
    for (auto& inst : swapped) std::swap(inst.visual, inst.textual);
    Rng r1(5), r2(5);
    const auto a = sample_triplets(batch, 2, r1);
    const auto b = sample_triplets(swapped, 2, r2);
    std::multiset<std::pair<std::int64_t, std::int64_t>> i2t, t2i;
    for (const auto& t : a) {
      if (t.direction == Direction::kImageToText) i2t.insert({t.anchor_id, t.negative_id});
    }
    for (const auto& t : b) {
      if (t.direction == Direction::kTextToImage) t2i.insert({t.anchor_id, t.negative_id});
    }
    CHECK(i2t == t2i);

    // And the loss is unchanged when the projection tables swap roles too.
    const auto proj = random_projections(rng, batch, 4);
    ProjectionTable swapped_proj;
    for (const auto& inst : batch) swapped_proj.insert(inst.id, proj.textual(inst.id), proj.visual(inst.id));
    auto with_margin = a;
    for (auto& t : with_margin) t.margin = 0.7;
    auto flipped = with_margin;
    for (auto& t : flipped) {
      t.direction = t.direction == Direction::kImageToText ? Direction::kTextToImage : Direction::kImageToText;
    }
    CHECK(batch_loss_and_grads(with_margin, proj).total ==
          doctest::Approx(batch_loss_and_grads(flipped, swapped_proj).total).epsilon(1e-14));
  }
  CHECK_THROWS_AS(sample_triplets({}, 0, rng), InvalidConfig);
}

TEST_CASE("hinge_term") {
  CHECK(hinge_term(1.0, 0.9, 0.2) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(hinge_term(2.0, 1.0, -1.0) == 0.0);
  CHECK(hinge_term(1.5, 1.0, -1.0) == 0.0);
  CHECK(hinge_term(0.0, 0.3, 0.3) == 0.0);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double sp = rng.uniform(-1, 1), sn = rng.uniform(-1, 1), m = rng.uniform(0, 2);
    CHECK(hinge_term(m, sp, sn) >= 0.0);
    CHECK(hinge_term(m + rng.uniform(), sp, sn) >= hinge_term(m, sp, sn));
  }
}

TEST_CASE("batch_loss_and_grads") {
  Rng rng(17);
  SUBCASE("inactive triplets contribute nothing") {
    ProjectionTable proj;
    proj.insert(0, {1.0, 0.0}, {1.0, 0.0});
    proj.insert(1, {-1.0, 0.0}, {-1.0, 0.0});
    const std::vector<Triplet> triplets{{Direction::kImageToText, 0, 1, 1.0},
                                        {Direction::kTextToImage, 1, 0, 2.0}};
    const BatchLoss loss = batch_loss_and_grads(triplets, proj);
    CHECK(loss.total == 0.0);
    CHECK(loss.active_count == 0);
    for (std::int64_t id : {0, 1}) {
      for (double g : loss.grads.visual(id)) CHECK(g == 0.0);
      for (double g : loss.grads.textual(id)) CHECK(g == 0.0);
    }
  }
  SUBCASE("single active image-to-text triplet") {
    ProjectionTable proj;
    proj.insert(0, {1.0, 0.0}, {0.6, 0.8});
    proj.insert(1, {0.0, 1.0}, {0.8, 0.6});
    const std::vector<Triplet> triplets{{Direction::kImageToText, 0, 1, 1.0}};
    const BatchLoss loss = batch_loss_and_grads(triplets, proj);
    CHECK(loss.active_count == 1);
    CHECK(loss.total == doctest::Approx(1.0 - 0.6 + 0.8).epsilon(1e-15));
    CHECK(loss.grads.visual(0) == Vec{0.8 - 0.6, 0.6 - 0.8});
    CHECK(loss.grads.textual(0) == Vec{-1.0, 0.0});
    CHECK(loss.grads.textual(1) == Vec{1.0, 0.0});
    CHECK(loss.grads.visual(1) == Vec{0.0, 0.0});
  }
  SUBCASE("missing projection") {
    ProjectionTable proj;
    proj.insert(0, {1.0}, {1.0});
    const std::vector<Triplet> triplets{{Direction::kImageToText, 0, 5, 1.0}};
    CHECK_THROWS_AS(batch_loss_and_grads(triplets, proj), MissingProjection);
  }
}

TEST_CASE("batch loss gradient matches finite differences") {
  Rng rng(123);
  constexpr double kStep = 1e-5;
  int checked_batches = 0;
  while (checked_batches < 50) {
    const auto batch = make_batch(rng, 8, 3);
    Rng sampler(rng.next_u64());
    auto triplets = sample_triplets(batch, 2, sampler);
    for (auto& t : triplets) t.margin = rng.uniform(0.0, 1.5);
    ProjectionTable proj = random_projections(rng, batch, 5);

    // Stay away from hinge kinks so the finite difference is well defined.
    bool near_kink = false;
    for (const auto& t : triplets) {
      const bool i2t = t.direction == Direction::kImageToText;
      const Vec& a = i2t ? proj.visual(t.anchor_id) : proj.textual(t.anchor_id);
      const Vec& p = i2t ? proj.textual(t.anchor_id) : proj.visual(t.anchor_id);
      const Vec& n = i2t ? proj.textual(t.negative_id) : proj.visual(t.negative_id);
      near_kink = near_kink || std::abs(t.margin - dot(a, p) + dot(a, n)) < 1e-3;
    }
    if (near_kink || triplets.empty()) continue;
    ++checked_batches;

    const BatchLoss base = batch_loss_and_grads(triplets, proj);
    CHECK(base.total >= 0.0);
    CHECK((base.total == 0.0) == (base.active_count == 0));
    for (const auto& inst : batch) {
      for (int modality = 0; modality < 2; ++modality) {
        Vec& v = modality == 0 ? proj.visual(inst.id) : proj.textual(inst.id);
        const Vec& g = modality == 0 ? base.grads.visual(inst.id) : base.grads.textual(inst.id);
        for (std::size_t d = 0; d < v.size(); ++d) {
          const double saved = v[d];
          v[d] = saved + kStep;
          const double up = batch_loss_and_grads(triplets, proj).total;
          v[d] = saved - kStep;
          const double down = batch_loss_and_grads(triplets, proj).total;
          v[d] = saved;
          CHECK(grad_close(g[d], (up - down) / (2 * kStep)));
        }
      }
    }
  }
}
