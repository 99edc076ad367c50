#pragma once

#include "tokensynth/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace tokensynth::ad {

// Reverse-mode tape. Backward functions are themselves composed of these ops,
// so calling grad() with create_graph=true yields gradients that can be
// differentiated again. The WGAN-GP penalty needs that: its parameter
// gradient differentiates through an input gradient.
//
// Closure rules the ops below follow:
//  - linear/bilinear ops (conv trio, matmul, add, mul, reductions, slicing)
//    express their backward through ops in this file, parents captured as Var;
//  - unary transcendentals recompute from the captured parent, so their
//    backward is exact to all orders;
//  - leaky_relu's backward multiplies by a frozen 0/1 mask, which is the
//    correct derivative almost everywhere.

class Var;

struct Node {
  Tensor value;
  Tensor grad;  // accumulated by backward(); leaves only
  bool requires_grad = false;
  std::vector<Var> parents;
  // Given the output gradient, returns one gradient per parent. A returned
  // Var may be undefined when that parent does not require grad.
  std::function<std::vector<Var>(const Var&)> backward_fn;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool defined() const { return static_cast<bool>(n_); }
  Node* node() const { return n_.get(); }
  const Tensor& value() const { return n_->value; }
  // Mutable access for optimizer updates and checkpoint restores on leaves.
  Tensor& value_ref() const { return n_->value; }
  const std::vector<long>& shape() const { return n_->value.shape(); }
  long dim(long i) const { return n_->value.dim(i); }
  long numel() const { return n_->value.numel(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  Tensor& grad_ref() const { return n_->grad; }

 private:
  std::shared_ptr<Node> n_;
};

bool grad_mode();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// Leaf constructors.
Var leaf(Tensor t, bool requires_grad);
Var constant(Tensor t);
Var constant(double v);

// Elementwise, broadcasting (equal rank, dims equal or 1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var adds(const Var& a, double s);
Var muls(const Var& a, double s);
Var neg(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);

Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false);

Var conv2d(const Var& x, const Var& w, long sh, long sw, long ph, long pw);
Var conv2d_input_grad(const Var& gy, const Var& w, long sh, long sw, long ph, long pw,
                      long xh, long xw);
Var conv2d_weight_grad(const Var& gy, const Var& x, long sh, long sw, long ph, long pw,
                       long kh, long kw);

Var reduce_to(const Var& a, std::vector<long> target);
Var expand(const Var& a, std::vector<long> target);
Var sum_keep(const Var& a, long axis);
Var sum_all(const Var& a);   // shape {1}
Var mean_all(const Var& a);  // shape {1}

Var narrow(const Var& a, long axis, long start, long len);
Var pad_freq(const Var& a, long before, long after);
Var crop_freq(const Var& a, long before, long after);
Var upsample2_freq(const Var& a);
Var avgpool2_freq(const Var& a);
Var gather_rows(const Var& a, std::vector<long> idx);
Var concat(const std::vector<Var>& parts, long axis);
Var reshape(const Var& a, std::vector<long> shape);
Var detach(const Var& a);

// Gradient of `root` (summed over its elements) w.r.t. each target. Targets
// not reached by the graph get zeros. With create_graph the returned Vars are
// differentiable. Does not touch .grad.
std::vector<Var> grad(const Var& root, const std::vector<Var>& targets, bool create_graph);

// Accumulates gradients into .grad of every reachable requires-grad leaf.
void backward(const Var& root);

}  // namespace tokensynth::ad
