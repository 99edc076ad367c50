#include "tokensynth/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace tokensynth::ad {

namespace {

bool g_grad_mode = true;

bool any_requires(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p.requires_grad()) return true;
  return false;
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<std::vector<Var>(const Var&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_mode && any_requires(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

}  // namespace

bool grad_mode() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : prev(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev; }

Var leaf(Tensor t, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var constant(Tensor t) { return leaf(std::move(t), false); }
Var constant(double v) { return leaf(Tensor::scalar(v), false); }

Var add(const Var& a, const Var& b) {
  return make_op(t_bin(a.value(), b.value(), 0), {a, b}, [a, b](const Var& gy) {
    return std::vector<Var>{reduce_to(gy, a.shape()), reduce_to(gy, b.shape())};
  });
}

Var sub(const Var& a, const Var& b) {
  return make_op(t_bin(a.value(), b.value(), 1), {a, b}, [a, b](const Var& gy) {
    return std::vector<Var>{reduce_to(gy, a.shape()), reduce_to(neg(gy), b.shape())};
  });
}

Var mul(const Var& a, const Var& b) {
  return make_op(t_bin(a.value(), b.value(), 2), {a, b}, [a, b](const Var& gy) {
    return std::vector<Var>{reduce_to(mul(gy, b), a.shape()),
                            reduce_to(mul(gy, a), b.shape())};
  });
}

Var div(const Var& a, const Var& b) {
  return make_op(t_bin(a.value(), b.value(), 3), {a, b}, [a, b](const Var& gy) {
    Var ga = reduce_to(div(gy, b), a.shape());
    Var gb = reduce_to(neg(div(mul(gy, a), mul(b, b))), b.shape());
    return std::vector<Var>{ga, gb};
  });
}

Var adds(const Var& a, double s) {
  return make_op(t_adds(a.value(), s), {a},
                 [](const Var& gy) { return std::vector<Var>{gy}; });
}

Var muls(const Var& a, double s) {
  return make_op(t_muls(a.value(), s), {a},
                 [s](const Var& gy) { return std::vector<Var>{muls(gy, s)}; });
}

Var neg(const Var& a) { return muls(a, -1.0); }

Var exp(const Var& a) {
  return make_op(t_map(a.value(), [](double x) { return std::exp(x); }), {a},
                 [a](const Var& gy) { return std::vector<Var>{mul(gy, exp(a))}; });
}

Var log(const Var& a) {
  return make_op(t_map(a.value(), [](double x) { return std::log(x); }), {a},
                 [a](const Var& gy) { return std::vector<Var>{div(gy, a)}; });
}

Var sqrt(const Var& a) {
  return make_op(t_map(a.value(), [](double x) { return std::sqrt(x); }), {a},
                 [a](const Var& gy) {
                   return std::vector<Var>{div(muls(gy, 0.5), sqrt(a))};
                 });
}

Var tanh(const Var& a) {
  return make_op(t_map(a.value(), [](double x) { return std::tanh(x); }), {a},
                 [a](const Var& gy) {
                   Var t = tanh(a);
                   return std::vector<Var>{mul(gy, sub(constant(Tensor::full(a.shape(), 1.0)),
                                                       mul(t, t)))};
                 });
}

Var sigmoid(const Var& a) {
  return make_op(t_map(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {a},
                 [a](const Var& gy) {
                   Var s = sigmoid(a);
                   return std::vector<Var>{
                       mul(gy, mul(s, sub(constant(Tensor::full(a.shape(), 1.0)), s)))};
                 });
}

namespace {

Var mask_backward(const Var& a, const Tensor& mask_t, Tensor value) {
  Var mask = constant(mask_t);
  return make_op(std::move(value), {a}, [mask](const Var& gy) {
    return std::vector<Var>{mul(gy, mask)};
  });
}

}  // namespace

Var relu(const Var& a) {
  Tensor mask(a.shape());
  Tensor out(a.shape());
  const double* p = a.value().data();
  double* pm = mask.data();
  double* po = out.data();
  for (long i = 0, n = a.numel(); i < n; ++i) {
    pm[i] = p[i] > 0.0 ? 1.0 : 0.0;
    po[i] = p[i] > 0.0 ? p[i] : 0.0;
  }
  return mask_backward(a, mask, std::move(out));
}

Var leaky_relu(const Var& a, double slope) {
  Tensor mask(a.shape());
  Tensor out(a.shape());
  const double* p = a.value().data();
  double* pm = mask.data();
  double* po = out.data();
  for (long i = 0, n = a.numel(); i < n; ++i) {
    pm[i] = p[i] > 0.0 ? 1.0 : slope;
    po[i] = p[i] > 0.0 ? p[i] : slope * p[i];
  }
  return mask_backward(a, mask, std::move(out));
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  return make_op(t_matmul(a.value(), b.value(), ta, tb), {a, b},
                 [a, b, ta, tb](const Var& gy) {
                   Var ga, gb;
                   if (!ta)
                     ga = tb ? matmul(gy, b, false, false) : matmul(gy, b, false, true);
                   else
                     ga = tb ? matmul(b, gy, true, true) : matmul(b, gy, false, true);
                   if (!tb)
                     gb = ta ? matmul(a, gy, false, false) : matmul(a, gy, true, false);
                   else
                     gb = ta ? matmul(gy, a, true, true) : matmul(gy, a, true, false);
                   return std::vector<Var>{ga, gb};
                 });
}

Var conv2d(const Var& x, const Var& w, long sh, long sw, long ph, long pw) {
  const long xh = x.dim(2), xw = x.dim(3);
  const long kh = w.dim(2), kw = w.dim(3);
  return make_op(t_conv2d(x.value(), w.value(), sh, sw, ph, pw), {x, w},
                 [x, w, sh, sw, ph, pw, xh, xw, kh, kw](const Var& gy) {
                   return std::vector<Var>{
                       conv2d_input_grad(gy, w, sh, sw, ph, pw, xh, xw),
                       conv2d_weight_grad(gy, x, sh, sw, ph, pw, kh, kw)};
                 });
}

Var conv2d_input_grad(const Var& gy, const Var& w, long sh, long sw, long ph, long pw,
                      long xh, long xw) {
  return make_op(t_conv2d_input_grad(gy.value(), w.value(), sh, sw, ph, pw, xh, xw),
                 {gy, w}, [gy, w, sh, sw, ph, pw](const Var& gz) {
                   const long kh = w.dim(2), kw = w.dim(3);
                   return std::vector<Var>{
                       conv2d(gz, w, sh, sw, ph, pw),
                       conv2d_weight_grad(gy, gz, sh, sw, ph, pw, kh, kw)};
                 });
}

Var conv2d_weight_grad(const Var& gy, const Var& x, long sh, long sw, long ph, long pw,
                       long kh, long kw) {
  return make_op(t_conv2d_weight_grad(gy.value(), x.value(), sh, sw, ph, pw, kh, kw),
                 {gy, x}, [gy, x, sh, sw, ph, pw](const Var& gz) {
                   const long xh = x.dim(2), xw = x.dim(3);
                   return std::vector<Var>{
                       conv2d(x, gz, sh, sw, ph, pw),
                       conv2d_input_grad(gy, gz, sh, sw, ph, pw, xh, xw)};
                 });
}

Var reduce_to(const Var& a, std::vector<long> target) {
  if (a.shape() == target) return a;
  std::vector<long> src = a.shape();
  return make_op(t_reduce_to(a.value(), target), {a}, [src](const Var& gy) {
    return std::vector<Var>{expand(gy, src)};
  });
}

Var expand(const Var& a, std::vector<long> target) {
  if (a.shape() == target) return a;
  std::vector<long> src = a.shape();
  return make_op(t_bin(Tensor::zeros(target), a.value(), 0), {a}, [src](const Var& gy) {
    return std::vector<Var>{reduce_to(gy, src)};
  });
}

Var sum_keep(const Var& a, long axis) {
  std::vector<long> target = a.shape();
  target[static_cast<size_t>(axis)] = 1;
  return reduce_to(a, std::move(target));
}

Var sum_all(const Var& a) {
  std::vector<long> src = a.shape();
  return make_op(Tensor::scalar(t_sum_all(a.value())), {a}, [src](const Var& gy) {
    Var g = reshape(gy, std::vector<long>(src.size(), 1));
    return std::vector<Var>{expand(g, src)};
  });
}

Var mean_all(const Var& a) { return muls(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Var narrow(const Var& a, long axis, long start, long len) {
  std::vector<long> full = a.shape();
  return make_op(t_narrow(a.value(), axis, start, len), {a},
                 [full, axis, start](const Var& gy) {
                   return std::vector<Var>{make_op(
                       t_narrow_back(gy.value(), full, axis, start), {gy},
                       [full, axis, start, len = gy.dim(axis)](const Var& gz) {
                         return std::vector<Var>{narrow(gz, axis, start, len)};
                       })};
                 });
}

Var pad_freq(const Var& a, long before, long after) {
  return make_op(t_pad_freq(a.value(), before, after), {a},
                 [before, after](const Var& gy) {
                   return std::vector<Var>{crop_freq(gy, before, after)};
                 });
}

Var crop_freq(const Var& a, long before, long after) {
  return make_op(t_crop_freq(a.value(), before, after), {a},
                 [before, after](const Var& gy) {
                   return std::vector<Var>{pad_freq(gy, before, after)};
                 });
}

Var upsample2_freq(const Var& a) {
  return make_op(t_upsample2_freq(a.value()), {a}, [](const Var& gy) {
    return std::vector<Var>{muls(avgpool2_freq(gy), 2.0)};
  });
}

Var avgpool2_freq(const Var& a) {
  return make_op(t_avgpool2_freq(a.value()), {a}, [](const Var& gy) {
    return std::vector<Var>{muls(upsample2_freq(gy), 0.5)};
  });
}

Var gather_rows(const Var& a, std::vector<long> idx) {
  const long n_rows = a.dim(0);
  return make_op(t_gather_rows(a.value(), idx), {a}, [idx, n_rows](const Var& gy) {
    return std::vector<Var>{make_op(t_scatter_rows_add(gy.value(), idx, n_rows), {gy},
                                    [idx](const Var& gz) {
                                      return std::vector<Var>{gather_rows(gz, idx)};
                                    })};
  });
}

Var concat(const std::vector<Var>& parts, long axis) {
  std::vector<Tensor> vals;
  vals.reserve(parts.size());
  for (const auto& p : parts) vals.push_back(p.value());
  std::vector<long> lens;
  for (const auto& p : parts) lens.push_back(p.dim(axis));
  return make_op(t_concat(vals, axis), parts, [lens, axis](const Var& gy) {
    std::vector<Var> gs;
    long off = 0;
    for (long len : lens) {
      gs.push_back(narrow(gy, axis, off, len));
      off += len;
    }
    return gs;
  });
}

Var reshape(const Var& a, std::vector<long> shape) {
  std::vector<long> src = a.shape();
  return make_op(a.value().reshape(shape), {a}, [src](const Var& gy) {
    return std::vector<Var>{reshape(gy, src)};
  });
}

Var detach(const Var& a) { return constant(a.value()); }

namespace {

// Post-order over the requires-grad subgraph, iterative to keep deep graphs
// off the call stack.
void topo_order(Node* root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i].node();
      ++i;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
}

std::unordered_map<Node*, Var> run_backward(const Var& root, bool create_graph) {
  std::vector<Node*> order;
  topo_order(root.node(), order);

  std::unordered_map<Node*, Var> grads;
  grads[root.node()] = constant(Tensor::full(root.shape(), 1.0));

  bool prev = g_grad_mode;
  g_grad_mode = create_graph;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto git = grads.find(n);
    if (git == grads.end() || !n->backward_fn) continue;
    Var gy = git->second;
    std::vector<Var> pg = n->backward_fn(gy);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].node();
      if (!p->requires_grad || !pg[i].defined()) continue;
      auto pit = grads.find(p);
      if (pit == grads.end()) grads[p] = pg[i];
      else pit->second = add(pit->second, pg[i]);
    }
  }
  g_grad_mode = prev;
  return grads;
}

}  // namespace

std::vector<Var> grad(const Var& root, const std::vector<Var>& targets, bool create_graph) {
  auto grads = run_backward(root, create_graph);
  std::vector<Var> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    auto it = grads.find(t.node());
    if (it != grads.end()) out.push_back(it->second);
    else out.push_back(constant(Tensor::zeros(t.shape())));
  }
  return out;
}

void backward(const Var& root) {
  auto grads = run_backward(root, false);
  for (auto& [n, g] : grads) {
    if (n->backward_fn || !n->requires_grad) continue;
    if (!n->grad.defined()) n->grad = Tensor::zeros(n->value.shape());
    double* pg = n->grad.data();
    const double* ps = g.value().data();
    for (long i = 0, m = n->grad.numel(); i < m; ++i) pg[i] += ps[i];
  }
}

}  // namespace tokensynth::ad
