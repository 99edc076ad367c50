#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokensynth {

// Dense row-major double tensor, rank <= 4. Shape copies are cheap; the data
// buffer is shared, so reshape() aliases and clone() copies.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    data_ = std::make_shared<std::vector<double>>(numel_of(shape_), 0.0);
  }

  Tensor(std::vector<long> shape, std::shared_ptr<std::vector<double>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (!data_ || static_cast<long>(data_->size()) != numel_of(shape_))
      throw std::runtime_error("tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<long> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from(std::vector<long> shape, std::vector<double> vals) {
    if (numel_of(shape) != static_cast<long>(vals.size()))
      throw std::runtime_error("tensor: from() size mismatch");
    return Tensor(std::move(shape), std::make_shared<std::vector<double>>(std::move(vals)));
  }

  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<long>& shape() const { return shape_; }
  long rank() const { return static_cast<long>(shape_.size()); }
  long dim(long i) const { return shape_[static_cast<size_t>(i)]; }
  long numel() const { return numel_of(shape_); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& at(long i) { return (*data_)[static_cast<size_t>(i)]; }
  double at(long i) const { return (*data_)[static_cast<size_t>(i)]; }

  // Aliases the buffer under a new shape with the same element count.
  Tensor reshape(std::vector<long> shape) const {
    if (numel_of(shape) != numel()) throw std::runtime_error("tensor: reshape numel mismatch");
    return Tensor(std::move(shape), data_);
  }

  Tensor clone() const {
    return Tensor(shape_, std::make_shared<std::vector<double>>(*data_));
  }

  static long numel_of(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
      if (d <= 0) throw std::runtime_error("tensor: nonpositive dim");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<long> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

std::string shape_str(const std::vector<long>& s);

// Elementwise binary op with broadcasting. Ranks must match; each dim must be
// equal or 1 on one side. op: 0 add, 1 sub, 2 mul, 3 div.
Tensor t_bin(const Tensor& a, const Tensor& b, int op);
Tensor t_map(const Tensor& a, double (*f)(double));
Tensor t_adds(const Tensor& a, double s);
Tensor t_muls(const Tensor& a, double s);

// a: (m,k) or (k,m) if ta; b: (k,n) or (n,k) if tb. Result (m,n). Both rank 2.
Tensor t_matmul(const Tensor& a, const Tensor& b, bool ta, bool tb);

// conv2d over NCHW with H = frequency, W = time. Stride/pad per axis.
// weight: (co, ci, kh, kw). The trio {forward, input grad, weight grad} is
// closed under differentiation, which the GP double-backward relies on.
Tensor t_conv2d(const Tensor& x, const Tensor& w, long sh, long sw, long ph, long pw);
Tensor t_conv2d_input_grad(const Tensor& gy, const Tensor& w, long sh, long sw, long ph,
                           long pw, long xh, long xw);
Tensor t_conv2d_weight_grad(const Tensor& gy, const Tensor& x, long sh, long sw, long ph,
                            long pw, long kh, long kw);

// Reduce a to the broadcast-source shape `target` by summing the dims that
// were expanded. Shapes must be broadcast-compatible.
Tensor t_reduce_to(const Tensor& a, const std::vector<long>& target);

// Sum over one axis, keeping it as size 1.
Tensor t_sum_keep(const Tensor& a, long axis);

// Slice [start, start+len) along an axis; scatter-add back for the gradient.
Tensor t_narrow(const Tensor& a, long axis, long start, long len);
Tensor t_narrow_back(const Tensor& gy, const std::vector<long>& full_shape, long axis,
                     long start);

// Frequency padding/cropping for NCHW (axis 2).
Tensor t_pad_freq(const Tensor& a, long before, long after);
Tensor t_crop_freq(const Tensor& a, long before, long after);

// Nearest-neighbor x2 along frequency; mean-pool /2 is its adjoint up to scale.
Tensor t_upsample2_freq(const Tensor& a);
Tensor t_avgpool2_freq(const Tensor& a);

// rows: (n, d) gathered by index into (m, d). Scatter-add is the adjoint.
Tensor t_gather_rows(const Tensor& a, const std::vector<long>& idx);
Tensor t_scatter_rows_add(const Tensor& gy, const std::vector<long>& idx, long n_rows);

// Concatenate rank-matched tensors along an axis.
Tensor t_concat(const std::vector<Tensor>& parts, long axis);

double t_sum_all(const Tensor& a);
double t_max_all(const Tensor& a);

}  // namespace tokensynth
