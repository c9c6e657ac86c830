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

#include "sam/projection_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

namespace sam {

namespace fs = std::filesystem;
using nlohmann::json;

void ProjectionNetwork::validate() const {
  if (w1.rows() == 0 || w1.cols() == 0 || w2.rows() == 0) {
    throw ShapeMismatch("projection network has an empty layer");
  }
  if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows()) {
    throw ShapeMismatch("projection network layer shapes are inconsistent");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfig("dropout_p must be in [0, 1)");
  if (!all_finite(w1.values()) || !all_finite(b1) || !all_finite(w2.values()) || !all_finite(b2)) {
    throw NonFiniteGradient("projection network has non-finite parameters");
  }
}

ProjectionNetwork init_network(std::size_t input_dim, std::size_t hidden_dim, std::size_t out_dim,
                               std::uint64_t seed, double dropout_p) {
  if (input_dim == 0 || hidden_dim == 0 || out_dim == 0) {
    throw InvalidConfig("network dimensions must be positive");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfig("dropout_p must be in [0, 1)");
  Rng rng(seed);
  ProjectionNetwork net;
  net.dropout_p = dropout_p;
  net.w1 = Mat(hidden_dim, input_dim);
  net.b1.assign(hidden_dim, 0.0);
  net.w2 = Mat(out_dim, hidden_dim);
  net.b2.assign(out_dim, 0.0);
  auto glorot = [&](Mat& m) {
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (double& w : m.values()) w = rng.uniform(-a, a);
  };
  glorot(net.w1);
  glorot(net.w2);
  return net;
}

ForwardTrace forward(const ProjectionNetwork& net, std::span<const double> x, Mode mode, Rng* rng) {
  if (x.size() != net.input_dim()) {
    throw DimensionMismatch("forward: input has dim " + std::to_string(x.size()) + ", network expects " +
                            std::to_string(net.input_dim()));
  }
  ForwardTrace tr;
  tr.input.assign(x.begin(), x.end());
  tr.hidden.resize(net.hidden_dim());
  affine(net.w1, x, net.b1, tr.hidden);
  for (double& h : tr.hidden) h = std::tanh(h);

  if (mode == Mode::kTrain && net.dropout_p > 0.0) {
    if (rng == nullptr) throw InvalidConfig("forward: train mode with dropout needs an Rng");
    const double keep = 1.0 - net.dropout_p;
    const double scale = 1.0 / keep;
    tr.mask.resize(net.hidden_dim());
    tr.dropped.resize(net.hidden_dim());
    for (std::size_t i = 0; i < tr.hidden.size(); ++i) {
      tr.mask[i] = rng->uniform() < keep ? scale : 0.0;
      tr.dropped[i] = tr.hidden[i] * tr.mask[i];
    }
  } else {
    tr.dropped = tr.hidden;
  }

  tr.z.resize(net.out_dim());
  affine(net.w2, tr.dropped, net.b2, tr.z);
  for (double& z : tr.z) z = std::tanh(z);
  tr.z_norm = l2_norm(tr.z);
  tr.output = l2_normalize(tr.z);
  return tr;
}

Vec project(const ProjectionNetwork& net, std::span<const double> x) {
  return forward(net, x, Mode::kEval).output;
}

Gradients Gradients::zeros_like(const ProjectionNetwork& net) {
  Gradients g;
  g.dw1 = Mat(net.w1.rows(), net.w1.cols());
  g.db1.assign(net.b1.size(), 0.0);
  g.dw2 = Mat(net.w2.rows(), net.w2.cols());
  g.db2.assign(net.b2.size(), 0.0);
  return g;
}

void Gradients::add(const Gradients& other) {
  if (!dw1.same_shape(other.dw1) || !dw2.same_shape(other.dw2)) {
    throw ShapeMismatch("Gradients::add: shapes differ");
  }
  axpy(1.0, other.dw1.values(), dw1.values());
  axpy(1.0, other.db1, db1);
  axpy(1.0, other.dw2.values(), dw2.values());
  axpy(1.0, other.db2, db2);
}

void Gradients::scale(double factor) {
  for (double& v : dw1.values()) v *= factor;
  for (double& v : db1) v *= factor;
  for (double& v : dw2.values()) v *= factor;
  for (double& v : db2) v *= factor;
}

bool Gradients::finite() const {
  return all_finite(dw1.values()) && all_finite(db1) && all_finite(dw2.values()) && all_finite(db2);
}

void backward_accumulate(const ProjectionNetwork& net, const ForwardTrace& trace,
                         std::span<const double> grad_out, Gradients& acc) {
  const std::size_t out = net.out_dim();
  const std::size_t hidden = net.hidden_dim();
  if (grad_out.size() != out) {
    throw ShapeMismatch("backward: upstream gradient has dim " + std::to_string(grad_out.size()) +
                        ", network output is " + std::to_string(out));
  }
  if (trace.z.size() != out || trace.hidden.size() != hidden ||
      trace.input.size() != net.input_dim()) {
    throw ShapeMismatch("backward: trace was not produced by this network");
  }
  if (!acc.dw1.same_shape(net.w1) || !acc.dw2.same_shape(net.w2)) {
    throw ShapeMismatch("backward: accumulator shapes differ from the network");
  }

  // y = z * c with c = 1 / (|z| + eps):  dL/dz = c * (g - (g . y) * z / |z|).
  const double c = 1.0 / (trace.z_norm + kNormEpsilon);
  const double g_dot_y = dot(grad_out, trace.output);
  Vec d_pre2(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double dz = c * (grad_out[i] - g_dot_y * trace.z[i] / trace.z_norm);
    d_pre2[i] = dz * (1.0 - trace.z[i] * trace.z[i]);
  }
  axpy(1.0, d_pre2, acc.db2);
  add_outer(acc.dw2, d_pre2, trace.dropped);

  Vec d_pre1(hidden);
  transposed_mul(net.w2, d_pre2, d_pre1);
  for (std::size_t j = 0; j < hidden; ++j) {
    double g = d_pre1[j];
    if (!trace.mask.empty()) g *= trace.mask[j];
    d_pre1[j] = g * (1.0 - trace.hidden[j] * trace.hidden[j]);
  }
  axpy(1.0, d_pre1, acc.db1);
  add_outer(acc.dw1, d_pre1, trace.input);
}

Gradients backward(const ProjectionNetwork& net, const ForwardTrace& trace,
                   std::span<const double> grad_out) {
  Gradients g = Gradients::zeros_like(net);
  backward_accumulate(net, trace, grad_out, g);
  return g;
}

BatchTrace forward_batch(const ProjectionNetwork& net, Mat inputs, Mode mode,
                         std::span<Rng> rngs) {
  if (inputs.cols() != net.input_dim()) {
    throw DimensionMismatch("forward_batch: inputs have " + std::to_string(inputs.cols()) +
                            " columns, network expects " + std::to_string(net.input_dim()));
  }
  const std::size_t rows = inputs.rows();
  BatchTrace tr;
  tr.input = std::move(inputs);
  tr.hidden = matmul(tr.input, Trans::kNo, net.w1, Trans::kYes);
  add_row_bias(tr.hidden, net.b1);
  for (double& h : tr.hidden.values()) h = std::tanh(h);

  if (mode == Mode::kTrain && net.dropout_p > 0.0) {
    if (rngs.size() != rows) throw InvalidConfig("forward_batch: need one Rng per row in train mode");
    const double keep = 1.0 - net.dropout_p;
    const double scale = 1.0 / keep;
    tr.mask = Mat(rows, net.hidden_dim());
    tr.dropped = Mat(rows, net.hidden_dim());
    for (std::size_t r = 0; r < rows; ++r) {
      auto mask = tr.mask.row(r);
      auto hidden = tr.hidden.row(r);
      auto dropped = tr.dropped.row(r);
      for (std::size_t j = 0; j < mask.size(); ++j) {
        mask[j] = rngs[r].uniform() < keep ? scale : 0.0;
        dropped[j] = hidden[j] * mask[j];
      }
    }
  } else {
    tr.dropped = tr.hidden;
  }

  tr.z = matmul(tr.dropped, Trans::kNo, net.w2, Trans::kYes);
  add_row_bias(tr.z, net.b2);
  for (double& z : tr.z.values()) z = std::tanh(z);
  tr.z_norm.resize(rows);
  tr.output = Mat(rows, net.out_dim());
  for (std::size_t r = 0; r < rows; ++r) {
    tr.z_norm[r] = l2_norm(tr.z.row(r));
    const Vec unit = l2_normalize(tr.z.row(r));
    std::copy(unit.begin(), unit.end(), tr.output.row(r).begin());
  }
  return tr;
}

void backward_batch(const ProjectionNetwork& net, const BatchTrace& trace, const Mat& grad_out,
                    Gradients& acc) {
  const std::size_t rows = trace.input.rows();
  const std::size_t out = net.out_dim();
  if (grad_out.rows() != rows || grad_out.cols() != out) {
    throw ShapeMismatch("backward_batch: upstream gradient shape differs from the batch output");
  }
  if (trace.z.cols() != out || trace.hidden.cols() != net.hidden_dim() ||
      trace.input.cols() != net.input_dim()) {
    throw ShapeMismatch("backward_batch: trace was not produced by this network");
  }
  if (!acc.dw1.same_shape(net.w1) || !acc.dw2.same_shape(net.w2)) {
    throw ShapeMismatch("backward_batch: accumulator shapes differ from the network");
  }

  Mat d_pre2(rows, out);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto g = grad_out.row(r);
    const auto z = trace.z.row(r);
    const double n = trace.z_norm[r];
    const double c = 1.0 / (n + kNormEpsilon);
    const double g_dot_y = dot(g, trace.output.row(r));
    auto d = d_pre2.row(r);
    for (std::size_t i = 0; i < out; ++i) {
      d[i] = c * (g[i] - g_dot_y * z[i] / n) * (1.0 - z[i] * z[i]);
    }
  }
  add_column_sums(d_pre2, acc.db2);
  matmul_acc(acc.dw2, d_pre2, Trans::kYes, trace.dropped, Trans::kNo);

  Mat d_pre1 = matmul(d_pre2, Trans::kNo, net.w2, Trans::kNo);
  const bool masked = trace.mask.size() != 0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto d = d_pre1.row(r);
    const auto h = trace.hidden.row(r);
    for (std::size_t j = 0; j < d.size(); ++j) {
      double g = d[j];
      if (masked) g *= trace.mask(r, j);
      d[j] = g * (1.0 - h[j] * h[j]);
    }
  }
  add_column_sums(d_pre1, acc.db1);
  matmul_acc(acc.dw1, d_pre1, Trans::kYes, trace.input, Trans::kNo);
}

std::vector<Vec> project_many(const ProjectionNetwork& net, std::span<const Vec* const> inputs) {
  constexpr std::size_t kBlock = 256;
  std::vector<Vec> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += kBlock) {
    const std::size_t rows = std::min(kBlock, inputs.size() - start);
    Mat block(rows, net.input_dim());
    for (std::size_t r = 0; r < rows; ++r) {
      const Vec& x = *inputs[start + r];
      if (x.size() != net.input_dim()) {
        throw DimensionMismatch("project_many: input has dim " + std::to_string(x.size()) +
                                ", network expects " + std::to_string(net.input_dim()));
      }
      std::copy(x.begin(), x.end(), block.row(r).begin());
    }
    const BatchTrace tr = forward_batch(net, std::move(block), Mode::kEval);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = tr.output.row(r);
      out.emplace_back(row.begin(), row.end());
    }
  }
  return out;
}

namespace {

void put_f32(std::string& buf, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

void put_net(std::string& buf, const ProjectionNetwork& net) {
  for (double v : net.w1.values()) put_f32(buf, v);
  for (double v : net.b1) put_f32(buf, v);
  for (double v : net.w2.values()) put_f32(buf, v);
  for (double v : net.b2) put_f32(buf, v);
}

class F32Reader {
 public:
  explicit F32Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  void fill(std::vector<double>& out) {
    if (pos_ + out.size() * 4 > bytes_.size()) {
      throw IncompatibleCheckpoint("weights.f32 is shorter than model.json implies");
    }
    for (double& v : out) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * b);
      }
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  ckpt.visual.validate();
  ckpt.textual.validate();
  if (ckpt.visual.hidden_dim() != ckpt.textual.hidden_dim() ||
      ckpt.visual.out_dim() != ckpt.textual.out_dim()) {
    throw ShapeMismatch("checkpoint towers disagree on hidden/output dims");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const json model = {
      {"d_v", ckpt.visual.input_dim()},
      {"d_t", ckpt.textual.input_dim()},
      {"hidden_dim", ckpt.visual.hidden_dim()},
      {"out_dim", ckpt.visual.out_dim()},
      {"dropout_p", ckpt.visual.dropout_p},
      {"seed", ckpt.seed},
      {"epoch", ckpt.epoch},
      {"weights", "weights.f32"},
  };
  std::ofstream mf(dir / "model.json", std::ios::binary);
  mf << model.dump(2) << "\n";

  std::string buf;
  put_net(buf, ckpt.visual);
  put_net(buf, ckpt.textual);
  std::ofstream wf(dir / "weights.f32", std::ios::binary);
  wf.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!mf || !wf) throw IoError("failed writing checkpoint to " + dir.string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream mf(dir / "model.json", std::ios::binary);
  if (!mf) throw IncompatibleCheckpoint("cannot open " + (dir / "model.json").string());
  json model;
  try {
    model = json::parse(mf);
  } catch (const json::exception& e) {
    throw IncompatibleCheckpoint(std::string("model.json: ") + e.what());
  }
  Checkpoint ckpt;
  std::size_t d_v = 0, d_t = 0, hidden = 0, out = 0;
  double dropout_p = 0.0;
  try {
    d_v = model.at("d_v").get<std::size_t>();
    d_t = model.at("d_t").get<std::size_t>();
    hidden = model.at("hidden_dim").get<std::size_t>();
    out = model.at("out_dim").get<std::size_t>();
    dropout_p = model.at("dropout_p").get<double>();
    ckpt.seed = model.value("seed", std::uint64_t{0});
    ckpt.epoch = model.value("epoch", 0);
  } catch (const json::exception& e) {
    throw IncompatibleCheckpoint(std::string("model.json: ") + e.what());
  }
  if (d_v == 0 || d_t == 0 || hidden == 0 || out == 0) {
    throw IncompatibleCheckpoint("model.json has zero dimensions");
  }

  std::ifstream wf(dir / model.value("weights", std::string("weights.f32")), std::ios::binary);
  if (!wf) throw IncompatibleCheckpoint("cannot open weights file in " + dir.string());
  F32Reader reader(std::string(std::istreambuf_iterator<char>(wf), {}));
  auto read_net = [&](std::size_t in_dim) {
    ProjectionNetwork net;
    net.dropout_p = dropout_p;
    net.w1 = Mat(hidden, in_dim);
    net.b1.assign(hidden, 0.0);
    net.w2 = Mat(out, hidden);
    net.b2.assign(out, 0.0);
    reader.fill(net.w1.values());
    reader.fill(net.b1);
    reader.fill(net.w2.values());
    reader.fill(net.b2);
    return net;
  };
  ckpt.visual = read_net(d_v);
  ckpt.textual = read_net(d_t);
  if (!reader.exhausted()) throw IncompatibleCheckpoint("weights.f32 is longer than model.json implies");
  ckpt.visual.validate();
  ckpt.textual.validate();
  return ckpt;
}

}  // namespace sam
