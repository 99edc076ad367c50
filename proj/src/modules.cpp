#include "tokensynth/modules.hpp"

#include <cmath>
#include <stdexcept>

namespace tokensynth {

ad::Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::runtime_error("param registered twice: " + name);
  ad::Var v = ad::leaf(std::move(init), true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

ad::Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
  return entries_[it->second].second;
}

long ParamStore::total_params() const {
  long n = 0;
  for (const auto& [name, v] : entries_) n += v.numel();
  return n;
}

void ParamStore::zero_grad() {
  // Drops the tensors instead of zeroing them so the optimizer can tell
  // "backward never reached this parameter" from "gradient happened to be
  // zero"; otherwise moment decay would depend on allocation history.
  for (const auto& [name, v] : entries_) v.grad_ref() = Tensor();
}

Tensor init_normal(std::vector<long> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  double* p = t.data();
  for (long i = 0, n = t.numel(); i < n; ++i) p[i] = stddev * rng.normal();
  return t;
}

Tensor init_uniform(std::vector<long> shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  double* p = t.data();
  for (long i = 0, n = t.numel(); i < n; ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

Tensor init_he(std::vector<long> shape, long fan_in, Rng& rng) {
  return init_normal(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

Dense::Dense(ParamStore& ps, const std::string& prefix, long in, long out, Rng& rng) {
  w = ps.add(prefix + ".w", init_he({out, in}, in, rng));
  b = ps.add(prefix + ".b", Tensor::zeros({1, out}));
}

ad::Var Dense::forward(const ad::Var& x) const {
  return ad::add(ad::matmul(x, w, false, true), b);
}

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, long ci, long co, long kh,
               long kw, long sh_, long sw_, long ph_, long pw_, Rng& rng)
    : sh(sh_), sw(sw_), ph(ph_), pw(pw_) {
  w = ps.add(prefix + ".w", init_he({co, ci, kh, kw}, ci * kh * kw, rng));
  b = ps.add(prefix + ".b", Tensor::zeros({1, co, 1, 1}));
}

ad::Var Conv2d::forward(const ad::Var& x) const {
  return ad::add(ad::conv2d(x, w, sh, sw, ph, pw), b);
}

GruCell::GruCell(ParamStore& ps, const std::string& prefix, long in, long hidden_, Rng& rng)
    : hidden(hidden_) {
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = ps.add(prefix + ".w_ih", init_uniform({3 * hidden, in}, -k, k, rng));
  w_hh = ps.add(prefix + ".w_hh", init_uniform({3 * hidden, hidden}, -k, k, rng));
  b_ih = ps.add(prefix + ".b_ih", init_uniform({1, 3 * hidden}, -k, k, rng));
  b_hh = ps.add(prefix + ".b_hh", init_uniform({1, 3 * hidden}, -k, k, rng));
}

ad::Var GruCell::step(const ad::Var& x, const ad::Var& h) const {
  ad::Var gi = ad::add(ad::matmul(x, w_ih, false, true), b_ih);
  ad::Var gh = ad::add(ad::matmul(h, w_hh, false, true), b_hh);
  ad::Var ir = ad::narrow(gi, 1, 0, hidden);
  ad::Var iz = ad::narrow(gi, 1, hidden, hidden);
  ad::Var in = ad::narrow(gi, 1, 2 * hidden, hidden);
  ad::Var hr = ad::narrow(gh, 1, 0, hidden);
  ad::Var hz = ad::narrow(gh, 1, hidden, hidden);
  ad::Var hn = ad::narrow(gh, 1, 2 * hidden, hidden);
  ad::Var r = ad::sigmoid(ad::add(ir, hr));
  ad::Var z = ad::sigmoid(ad::add(iz, hz));
  ad::Var n = ad::tanh(ad::add(in, ad::mul(r, hn)));
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

Gru::Gru(ParamStore& ps, const std::string& prefix, long in, long hidden, long layers,
         Rng& rng) {
  for (long l = 0; l < layers; ++l)
    cells.emplace_back(ps, prefix + ".l" + std::to_string(l), l == 0 ? in : hidden, hidden,
                       rng);
}

std::vector<ad::Var> Gru::forward(const std::vector<ad::Var>& steps) const {
  std::vector<ad::Var> cur = steps;
  const long n = cur.empty() ? 0 : cur[0].dim(0);
  for (const auto& cell : cells) {
    ad::Var h = ad::constant(Tensor::zeros({n, cell.hidden}));
    for (auto& s : cur) {
      h = cell.step(s, h);
      s = h;
    }
  }
  return cur;
}

Adam::Adam(const ParamStore& ps, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& [name, v] : ps.entries()) {
    m_.push_back(Tensor::zeros(v.shape()));
    v_.push_back(Tensor::zeros(v.shape()));
  }
}

void Adam::step(const ParamStore& ps) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto& entries = ps.entries();
  if (entries.size() != m_.size()) throw std::runtime_error("adam: param count changed");
  for (size_t i = 0; i < entries.size(); ++i) {
    const ad::Var& p = entries[i].second;
    const Tensor& g = p.grad_ref();
    if (!g.defined()) continue;
    double* pm = m_[i].data();
    double* pv = v_[i].data();
    double* pw = p.value_ref().data();
    const double* pg = g.data();
    for (long j = 0, n = p.numel(); j < n; ++j) {
      pm[j] = cfg_.beta1 * pm[j] + (1.0 - cfg_.beta1) * pg[j];
      pv[j] = cfg_.beta2 * pv[j] + (1.0 - cfg_.beta2) * pg[j] * pg[j];
      const double mhat = pm[j] / bc1;
      const double vhat = pv[j] / bc2;
      pw[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

std::vector<double> Adam::serialize_state() const {
  std::vector<double> flat;
  flat.push_back(static_cast<double>(t_));
  for (const auto& t : m_) flat.insert(flat.end(), t.data(), t.data() + t.numel());
  for (const auto& t : v_) flat.insert(flat.end(), t.data(), t.data() + t.numel());
  return flat;
}

void Adam::load_state(const std::vector<double>& flat) {
  long need = 1;
  for (const auto& t : m_) need += 2 * t.numel();
  if (static_cast<long>(flat.size()) != need)
    throw std::runtime_error("adam: state size mismatch");
  size_t off = 0;
  t_ = static_cast<long>(flat[off++]);
  for (auto& t : m_) {
    std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off) + t.numel(), t.data());
    off += static_cast<size_t>(t.numel());
  }
  for (auto& t : v_) {
    std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off) + t.numel(), t.data());
    off += static_cast<size_t>(t.numel());
  }
}

}  // namespace tokensynth
