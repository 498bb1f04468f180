#pragma once

#include "motionlab/grad/graph.hpp"
#include "motionlab/grad/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace motionlab::models {

using grad::Graph;
using grad::Parameter;
using grad::ParameterStore;
using grad::Tensor;
using grad::Var;

/// Fills a parameter with U(-bound, bound).
void init_uniform(Parameter& p, std::mt19937_64& rng, double bound);

/// y = x W + b with W [in, out].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  /// Weights start at U(+-1/sqrt(in)); `zero` starts everything at 0.
  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng, bool zero = false);

  std::size_t in() const { return weight->value.dim(0); }
  std::size_t out() const { return weight->value.dim(1); }
  Var operator()(Graph& g, Var x) const;
};

/// Gated recurrent unit (reset, update, candidate gates).
struct Gru {
  Linear input;      // x -> 3H
  Linear recurrent;  // h -> 3H

  static Gru create(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t hidden, std::mt19937_64& rng);

  std::size_t hidden() const { return recurrent.in(); }

  /// One transition. Input gates are rows [row, row + B) of `gates` [R, 3H].
  Var step(Graph& g, Var gates, std::size_t row, Var h) const;
  /// Runs over time-major rows: inputs [T*B, in], step t owning rows
  /// [t*B, (t+1)*B). Returns the state after every step, indexed by t.
  std::vector<Var> run(Graph& g, Var inputs, std::size_t batch, Var h0, bool reverse = false) const;
};

struct BiGru {
  Gru forward;
  Gru backward;

  static BiGru create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t hidden, std::mt19937_64& rng);

  struct Result {
    Var outputs;        // [T*B, 2H], forward then backward state per row
    Var last_forward;   // state after the final frame
    Var last_backward;  // state after the first frame
  };
  Result run(Graph& g, Var inputs, std::size_t batch) const;
};

/// Zero tensor of shape [batch, width] as a graph constant.
Var zeros(Graph& g, std::size_t batch, std::size_t width);

/// Rows [t*B, (t+1)*B) of a time-major tensor.
Var frame_rows(Graph& g, Var stacked, std::size_t t, std::size_t batch);

}  // namespace motionlab::models
