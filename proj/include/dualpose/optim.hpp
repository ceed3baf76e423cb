#pragma once

#include "dualpose/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dualpose::ad {

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Moments are allocated on first use; a parameter without a
/// gradient is treated as having a zero gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state);

using NamedTensor = std::pair<std::string, Tensor>;

/// Writes `<prefix>.bin` (named float64 arrays with shape headers) and
/// `<prefix>.json` (manifest: names, shapes, dtype, step).
void save_checkpoint(const std::string& prefix, const std::vector<NamedTensor>& tensors, std::int64_t step);

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::int64_t step = 0;
};

Checkpoint load_checkpoint(const std::string& prefix);

/// Copies checkpoint values into `params` by name; shapes must match.
void restore_parameters(const Checkpoint& ckpt, std::vector<NamedTensor>& params);

}  // namespace dualpose::ad
