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

#ifndef SAM_PROJECTION_NET_HPP_
#define SAM_PROJECTION_NET_HPP_

#include <cstdint>
#include <filesystem>

#include "sam/numerics.hpp"

namespace sam {

enum class Mode { kTrain, kEval };

// Two tanh layers followed by l2 normalization:
//   h = tanh(W1 x + b1), dropout on h in train mode,
//   z = tanh(W2 h + b2), output = z / |z|.
struct ProjectionNetwork {
  Mat w1;  // hidden x input
  Vec b1;
  Mat w2;  // out x hidden
  Vec b2;
  double dropout_p = 0.1;

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t out_dim() const { return w2.rows(); }

  void validate() const;
  friend bool operator==(const ProjectionNetwork&, const ProjectionNetwork&) = default;
};

// Glorot-uniform weights, zero biases.
ProjectionNetwork init_network(std::size_t input_dim, std::size_t hidden_dim, std::size_t out_dim,
                               std::uint64_t seed, double dropout_p = 0.1);

// Activations cached for backward().
struct ForwardTrace {
  Vec input;
  Vec hidden;    // tanh(W1 x + b1)
  Vec mask;      // empty in eval mode; entries 0 or 1/(1-p) otherwise
  Vec dropped;   // hidden * mask
  Vec z;         // tanh(W2 dropped + b2)
  double z_norm = 0.0;
  Vec output;    // l2_normalize(z)
};

// `rng` draws the dropout mask and is required in train mode when p > 0.
ForwardTrace forward(const ProjectionNetwork& net, std::span<const double> x, Mode mode,
                     Rng* rng = nullptr);

// Eval-mode projection.
Vec project(const ProjectionNetwork& net, std::span<const double> x);

struct Gradients {
  Mat dw1;
  Vec db1;
  Mat dw2;
  Vec db2;

  static Gradients zeros_like(const ProjectionNetwork& net);
  void add(const Gradients& other);
  void scale(double factor);
  bool finite() const;
};

Gradients backward(const ProjectionNetwork& net, const ForwardTrace& trace,
                   std::span<const double> grad_out);

// Adds the gradients for one trace into `acc` without allocating parameter-sized buffers.
void backward_accumulate(const ProjectionNetwork& net, const ForwardTrace& trace,
                         std::span<const double> grad_out, Gradients& acc);

// Row-batched counterparts of forward()/backward(); row i of every matrix
// belongs to input row i.
struct BatchTrace {
  Mat input;
  Mat hidden;
  Mat mask;  // 0 x 0 in eval mode
  Mat dropped;
  Mat z;
  Vec z_norm;
  Mat output;
};

// rngs[i] draws the dropout mask of row i, in the same order forward() would.
BatchTrace forward_batch(const ProjectionNetwork& net, Mat inputs, Mode mode,
                         std::span<Rng> rngs = {});

void backward_batch(const ProjectionNetwork& net, const BatchTrace& trace, const Mat& grad_out,
                    Gradients& acc);

// Eval-mode projections of many inputs, processed in row blocks.
std::vector<Vec> project_many(const ProjectionNetwork& net, std::span<const Vec* const> inputs);

struct Checkpoint {
  ProjectionNetwork visual;
  ProjectionNetwork textual;
  std::uint64_t seed = 0;
  int epoch = 0;
};

// model.json plus weights.f32 (W1, b1, W2, b2 of the visual net, then the
// textual net, little-endian float32).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace sam

#endif  // SAM_PROJECTION_NET_HPP_
