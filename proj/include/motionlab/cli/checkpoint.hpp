#pragma once

#include "motionlab/cli/config.hpp"
#include "motionlab/grad/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace motionlab::cli {

/// File layout: "PMN1", u64 little-endian manifest byte count, the JSON
/// manifest {config, step, tensors: [{name, shape, offset}]}, then every tensor
/// as little-endian f64, offsets counted in values.
struct Checkpoint {
  Config config;
  std::size_t step = 0;
  std::vector<std::pair<std::string, grad::Tensor>> tensors;
};

Checkpoint snapshot(const Config& config, std::size_t step, const grad::ParameterStore& params);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
void save_checkpoint(const Config& config, std::size_t step, const grad::ParameterStore& params,
                     const std::string& path);

/// Throws Io, or SchemaVersionMismatch for a bad magic / malformed manifest.
Checkpoint load_checkpoint(const std::string& path);

/// Copies tensors into a store with the same names and shapes; anything else
/// is ConfigMismatch.
void restore(const Checkpoint& ckpt, grad::ParameterStore& params);

}  // namespace motionlab::cli
