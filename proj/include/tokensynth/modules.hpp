#pragma once

#include "tokensynth/autodiff.hpp"
#include "tokensynth/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace tokensynth {

// Named parameter registry. Registration order is the serialization order, so
// models must register deterministically.
class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init);
  ad::Var get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
  long total_params() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
  std::map<std::string, size_t> index_;
};

Tensor init_normal(std::vector<long> shape, double stddev, Rng& rng);
Tensor init_uniform(std::vector<long> shape, double lo, double hi, Rng& rng);
// He initialization for ReLU-family stacks.
Tensor init_he(std::vector<long> shape, long fan_in, Rng& rng);

struct Dense {
  ad::Var w;  // (out, in)
  ad::Var b;  // (1, out)

  Dense() = default;
  Dense(ParamStore& ps, const std::string& prefix, long in, long out, Rng& rng);
  // x: (n, in) -> (n, out)
  ad::Var forward(const ad::Var& x) const;
};

struct Conv2d {
  ad::Var w;  // (co, ci, kh, kw)
  ad::Var b;  // (1, co, 1, 1)
  long sh = 1, sw = 1, ph = 0, pw = 0;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& prefix, long ci, long co, long kh, long kw,
         long sh, long sw, long ph, long pw, Rng& rng);
  ad::Var forward(const ad::Var& x) const;
};

// Gate layout r,z,n packed along the first axis of w_ih/w_hh, update rule
// h' = n + z * (h - n).
struct GruCell {
  ad::Var w_ih;  // (3h, in)
  ad::Var w_hh;  // (3h, h)
  ad::Var b_ih;  // (1, 3h)
  ad::Var b_hh;  // (1, 3h)
  long hidden = 0;

  GruCell() = default;
  GruCell(ParamStore& ps, const std::string& prefix, long in, long hidden, Rng& rng);
  // x: (n, in), h: (n, hidden) -> (n, hidden)
  ad::Var step(const ad::Var& x, const ad::Var& h) const;
};

// Stacked unidirectional GRU over a step-major sequence.
struct Gru {
  std::vector<GruCell> cells;

  Gru() = default;
  Gru(ParamStore& ps, const std::string& prefix, long in, long hidden, long layers, Rng& rng);
  // steps: length-L vector of (n, in). Returns top-layer states per step.
  std::vector<ad::Var> forward(const std::vector<ad::Var>& steps) const;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore& ps, AdamConfig cfg);

  void step(const ParamStore& ps);

  // Flat state blocks for checkpointing: m, v per param in registry order,
  // plus the step counter.
  std::vector<double> serialize_state() const;
  void load_state(const std::vector<double>& flat);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace tokensynth
