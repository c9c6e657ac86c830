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

#include "sam/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace sam {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw ManifestError("unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<MultimodalInstance> Dataset::subset(Split split) const {
  std::vector<MultimodalInstance> out;
  for (std::size_t i : indices(split)) out.push_back(instances[i]);
  return out;
}

void Dataset::validate() const {
  if (d_v == 0 || d_t == 0) throw ManifestError("feature dimensions must be positive");
  if (categories.empty()) throw ManifestError("category list is empty");
  if (splits.size() != instances.size()) {
    throw ShapeError("split assignment count differs from instance count");
  }
  std::unordered_set<std::int64_t> ids;
  for (const auto& inst : instances) {
    if (inst.visual.size() != d_v || inst.textual.size() != d_t) {
      throw ShapeError("instance " + std::to_string(inst.id) + " has wrong feature dimensions");
    }
    if (inst.category < 0 || static_cast<std::size_t>(inst.category) >= categories.size()) {
      throw LabelError("instance " + std::to_string(inst.id) + " has category index " +
                       std::to_string(inst.category) + " outside [0, " +
                       std::to_string(categories.size()) + ")");
    }
    if (inst.id < 0 || !ids.insert(inst.id).second) {
      throw ManifestError("instance id " + std::to_string(inst.id) + " is negative or repeated");
    }
    if (!all_finite(inst.visual) || !all_finite(inst.textual)) {
      throw NonFiniteFeature("instance " + std::to_string(inst.id) + " has non-finite features");
    }
  }
}

namespace {

void write_f32_le(std::ostream& out, std::span<const double> values) {
  std::string buf(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

double f32_at(const std::string& bytes, std::size_t index) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[index * 4 + b])) << (8 * b);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  return s;
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw ManifestError(std::string("manifest missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest key '") + key + "': " + e.what());
  }
}

std::int64_t parse_int(const std::string& s, const char* what) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ManifestError(std::string("labels.csv: bad ") + what + " '" + s + "'");
  }
  return v;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ManifestError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  ds.name = manifest.value("name", dir.filename().string());
  const auto d_v = required<std::int64_t>(manifest, "d_v");
  const auto d_t = required<std::int64_t>(manifest, "d_t");
  const auto count = required<std::int64_t>(manifest, "count");
  if (d_v <= 0 || d_t <= 0 || count < 0) throw ManifestError("manifest dims/count out of range");
  ds.d_v = static_cast<std::size_t>(d_v);
  ds.d_t = static_cast<std::size_t>(d_t);
  ds.categories = required<std::vector<std::string>>(manifest, "categories");

  fs::path visual_file = "visual.f32";
  fs::path textual_file = "textual.f32";
  fs::path labels_file = "labels.csv";
  if (manifest.contains("files")) {
    const json& files = manifest["files"];
    if (!files.is_object()) throw ManifestError("manifest 'files' must be an object");
    visual_file = files.value("visual", visual_file.string());
    textual_file = files.value("textual", textual_file.string());
    labels_file = files.value("labels", labels_file.string());
  }

  const auto n = static_cast<std::size_t>(count);
  const std::string visual = read_file(dir / visual_file);
  const std::string textual = read_file(dir / textual_file);
  if (visual.size() != n * ds.d_v * 4) {
    throw ShapeError("visual file has " + std::to_string(visual.size()) + " bytes, expected " +
                     std::to_string(n * ds.d_v * 4));
  }
  if (textual.size() != n * ds.d_t * 4) {
    throw ShapeError("textual file has " + std::to_string(textual.size()) + " bytes, expected " +
                     std::to_string(n * ds.d_t * 4));
  }

  std::istringstream labels(read_file(dir / labels_file));
  std::string line;
  if (!std::getline(labels, line) || trim(line) != "id,category,split") {
    throw ManifestError("labels.csv: expected header 'id,category,split'");
  }
  ds.instances.reserve(n);
  while (std::getline(labels, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) throw ManifestError("labels.csv: malformed row '" + line + "'");
    const std::size_t row = ds.instances.size();
    if (row >= n) throw ShapeError("labels.csv has more rows than manifest count");
    MultimodalInstance inst;
    inst.id = parse_int(trim(fields[0]), "id");
    const std::int64_t category = parse_int(trim(fields[1]), "category");
    if (category < 0 || category >= static_cast<std::int64_t>(ds.categories.size())) {
      throw LabelError("labels.csv: category index " + std::to_string(category) + " outside [0, " +
                       std::to_string(ds.categories.size()) + ")");
    }
    inst.category = static_cast<int>(category);
    inst.visual.resize(ds.d_v);
    inst.textual.resize(ds.d_t);
    for (std::size_t c = 0; c < ds.d_v; ++c) inst.visual[c] = f32_at(visual, row * ds.d_v + c);
    for (std::size_t c = 0; c < ds.d_t; ++c) inst.textual[c] = f32_at(textual, row * ds.d_t + c);
    ds.instances.push_back(std::move(inst));
    ds.splits.push_back(parse_split(trim(fields[2])));
  }
  if (ds.instances.size() != n) {
    throw ShapeError("labels.csv has " + std::to_string(ds.instances.size()) +
                     " rows, manifest count is " + std::to_string(n));
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json manifest = {
      {"name", ds.name},
      {"d_v", ds.d_v},
      {"d_t", ds.d_t},
      {"categories", ds.categories},
      {"count", ds.instances.size()},
      {"files", {{"visual", "visual.f32"}, {"textual", "textual.f32"}, {"labels", "labels.csv"}}},
  };
  std::ofstream mf(dir / "manifest.json", std::ios::binary);
  mf << manifest.dump(2) << "\n";

  std::ofstream vf(dir / "visual.f32", std::ios::binary);
  std::ofstream tf(dir / "textual.f32", std::ios::binary);
  std::ofstream lf(dir / "labels.csv", std::ios::binary);
  lf << "id,category,split\n";
  for (std::size_t i = 0; i < ds.instances.size(); ++i) {
    const auto& inst = ds.instances[i];
    write_f32_le(vf, inst.visual);
    write_f32_le(tf, inst.textual);
    lf << inst.id << ',' << inst.category << ',' << split_name(ds.splits[i]) << '\n';
  }
  if (!mf || !vf || !tf || !lf) throw IoError("failed writing dataset to " + dir.string());
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_categories <= 0 || spec.per_category <= 0 || spec.d_v <= 0 || spec.d_t <= 0) {
    throw InvalidConfig("synthetic dataset counts and dimensions must be positive");
  }
  if (!(spec.inter_sep > 0.0) || !(spec.intra_spread >= 0.0) || !std::isfinite(spec.inter_sep) ||
      !std::isfinite(spec.intra_spread)) {
    throw InvalidConfig("synthetic dataset needs inter_sep > 0 and intra_spread >= 0");
  }
  const Rng root(spec.seed);
  Rng mean_rng = root.split(1);
  Rng noise_rng = root.split(2);
  Rng split_rng = root.split(3);

  // Random unit directions scaled so two means sit about inter_sep apart.
  const double radius = spec.inter_sep / std::sqrt(2.0);
  auto draw_mean = [&](int dim) {
    Vec v(static_cast<std::size_t>(dim));
    for (double& x : v) x = mean_rng.normal();
    const double n = l2_norm(v);
    for (double& x : v) x *= radius / n;
    return v;
  };

  Dataset ds;
  ds.name = "synthetic";
  ds.d_v = static_cast<std::size_t>(spec.d_v);
  ds.d_t = static_cast<std::size_t>(spec.d_t);
  for (int c = 0; c < spec.n_categories; ++c) ds.categories.push_back("c" + std::to_string(c));

  const auto per = static_cast<std::size_t>(spec.per_category);
  const auto n_train = static_cast<std::size_t>(std::lround(0.7 * static_cast<double>(per)));
  const auto n_val = std::min(per - n_train,
                              static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(per))));

  for (int c = 0; c < spec.n_categories; ++c) {
    const Vec visual_mean = draw_mean(spec.d_v);
    const Vec textual_mean = draw_mean(spec.d_t);
    std::vector<std::size_t> order(per);
    for (std::size_t i = 0; i < per; ++i) order[i] = i;
    split_rng.shuffle(std::span<std::size_t>(order));
    std::vector<Split> category_splits(per);
    for (std::size_t rank = 0; rank < per; ++rank) {
      category_splits[order[rank]] = rank < n_train           ? Split::kTrain
                                     : rank < n_train + n_val ? Split::kValidation
                                                              : Split::kTest;
    }
    for (std::size_t i = 0; i < per; ++i) {
      MultimodalInstance inst;
      inst.id = static_cast<std::int64_t>(ds.instances.size());
      inst.category = c;
      // Values are rounded to float32 so the on-disk format round-trips exactly.
      inst.visual.resize(ds.d_v);
      for (std::size_t k = 0; k < ds.d_v; ++k) {
        inst.visual[k] = static_cast<float>(visual_mean[k] + spec.intra_spread * noise_rng.normal());
      }
      inst.textual.resize(ds.d_t);
      for (std::size_t k = 0; k < ds.d_t; ++k) {
        inst.textual[k] =
            static_cast<float>(textual_mean[k] + spec.intra_spread * noise_rng.normal());
      }
      ds.instances.push_back(std::move(inst));
      ds.splits.push_back(category_splits[i]);
    }
  }
  return ds;
}

double DistanceRange::normalize(double d) const {
  return std::clamp((d - min_dist) / (max_dist - min_dist), 0.0, 1.0);
}

DistanceStats compute_distance_stats(const Dataset& ds, std::size_t max_pairs, std::uint64_t seed) {
  const auto train = ds.indices(Split::kTrain);
  const std::size_t n = train.size();
  if (n < 2) throw InsufficientData("distance stats need at least 2 training instances");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  double v_min = kInf, v_max = -kInf, t_min = kInf, t_max = -kInf;
  auto visit = [&](std::size_t a, std::size_t b) {
    const auto& x = ds.instances[train[a]];
    const auto& y = ds.instances[train[b]];
    const double dv = euclidean_dist(x.visual, y.visual);
    const double dt = euclidean_dist(x.textual, y.textual);
    v_min = std::min(v_min, dv);
    v_max = std::max(v_max, dv);
    t_min = std::min(t_min, dt);
    t_max = std::max(t_max, dt);
  };

  DistanceStats stats;
  const std::size_t total = n * (n - 1) / 2;
  if (max_pairs >= total) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) visit(a, b);
    }
    stats.sample_pair_count = total;
  } else {
    if (max_pairs == 0) throw InvalidConfig("max_pairs must be positive");
    Rng rng(seed);
    for (std::size_t p = 0; p < max_pairs; ++p) {
      const std::size_t a = rng.below(n);
      std::size_t b = rng.below(n - 1);
      if (b >= a) ++b;
      visit(a, b);
    }
    stats.sample_pair_count = max_pairs;
  }

  auto finish = [&](double lo, double hi) {
    DistanceRange r{lo, hi};
    if (!(hi > lo)) {
      r.max_dist = lo + 1.0;
      stats.degenerate = true;
    }
    return r;
  };
  stats.visual = finish(v_min, v_max);
  stats.textual = finish(t_min, t_max);
  return stats;
}

}  // namespace sam
