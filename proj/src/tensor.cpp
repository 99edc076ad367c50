#include "tokensynth/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstring>
#include <sstream>

namespace tokensynth {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

std::string shape_str(const std::vector<long>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

static std::vector<long> strides_of(const std::vector<long>& shape) {
  std::vector<long> st(shape.size(), 1);
  for (long i = static_cast<long>(shape.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] =
        st[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
  return st;
}

Tensor t_bin(const Tensor& a, const Tensor& b, int op) {
  if (a.rank() != b.rank())
    throw std::runtime_error("t_bin: rank mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  const long r = a.rank();
  std::vector<long> out_shape(static_cast<size_t>(r));
  for (long i = 0; i < r; ++i) {
    long da = a.dim(i), db = b.dim(i);
    if (da != db && da != 1 && db != 1)
      throw std::runtime_error("t_bin: incompatible shapes " + shape_str(a.shape()) +
                               " vs " + shape_str(b.shape()));
    out_shape[static_cast<size_t>(i)] = std::max(da, db);
  }
  Tensor out(out_shape);

  // Fast path: identical shapes.
  if (a.shape() == b.shape()) {
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const long n = out.numel();
    switch (op) {
      case 0: for (long i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case 1: for (long i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case 2: for (long i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
      case 3: for (long i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
      default: throw std::runtime_error("t_bin: bad op");
    }
    return out;
  }

  const auto sa = strides_of(a.shape());
  const auto sb = strides_of(b.shape());
  const auto so = strides_of(out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const long n = out.numel();
  for (long lin = 0; lin < n; ++lin) {
    long rem = lin, ia = 0, ib = 0;
    for (long d = 0; d < r; ++d) {
      long c = rem / so[static_cast<size_t>(d)];
      rem -= c * so[static_cast<size_t>(d)];
      if (a.dim(d) != 1) ia += c * sa[static_cast<size_t>(d)];
      if (b.dim(d) != 1) ib += c * sb[static_cast<size_t>(d)];
    }
    switch (op) {
      case 0: po[lin] = pa[ia] + pb[ib]; break;
      case 1: po[lin] = pa[ia] - pb[ib]; break;
      case 2: po[lin] = pa[ia] * pb[ib]; break;
      case 3: po[lin] = pa[ia] / pb[ib]; break;
      default: throw std::runtime_error("t_bin: bad op");
    }
  }
  return out;
}

Tensor t_map(const Tensor& a, double (*f)(double)) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

Tensor t_adds(const Tensor& a, double s) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = pa[i] + s;
  return out;
}

Tensor t_muls(const Tensor& a, double s) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = pa[i] * s;
  return out;
}

Tensor t_matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.rank() != 2 || b.rank() != 2) throw std::runtime_error("t_matmul: rank != 2");
  const long m = ta ? a.dim(1) : a.dim(0);
  const long k = ta ? a.dim(0) : a.dim(1);
  const long kb = tb ? b.dim(1) : b.dim(0);
  const long n = tb ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw std::runtime_error("t_matmul: inner dims " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  Tensor out({m, n});
  CMapRM ma(a.data(), a.dim(0), a.dim(1));
  CMapRM mb(b.data(), b.dim(0), b.dim(1));
  MapRM mo(out.data(), m, n);
  if (!ta && !tb) mo.noalias() = ma * mb;
  else if (ta && !tb) mo.noalias() = ma.transpose() * mb;
  else if (!ta && tb) mo.noalias() = ma * mb.transpose();
  else mo.noalias() = ma.transpose() * mb.transpose();
  return out;
}

// im2col over a band of output rows. Column layout: (ci*kh*kw) x (band_oh*ow).
static void im2col_band(const double* x, long ci, long xh, long xw, long kh, long kw,
                        long sh, long sw, long ph, long pw, long ow, long oh0, long band_oh,
                        double* col) {
  const long cols = band_oh * ow;
  for (long c = 0; c < ci; ++c) {
    const double* xc = x + c * xh * xw;
    for (long i = 0; i < kh; ++i) {
      for (long j = 0; j < kw; ++j) {
        double* row = col + ((c * kh + i) * kw + j) * cols;
        for (long oy = 0; oy < band_oh; ++oy) {
          const long iy = (oh0 + oy) * sh - ph + i;
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= xh) {
            std::memset(dst, 0, static_cast<size_t>(ow) * sizeof(double));
            continue;
          }
          const double* src = xc + iy * xw;
          for (long ox = 0; ox < ow; ++ox) {
            const long ix = ox * sw - pw + j;
            dst[ox] = (ix >= 0 && ix < xw) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// col2im accumulate, adjoint of im2col_band.
static void col2im_band(const double* col, long ci, long xh, long xw, long kh, long kw,
                        long sh, long sw, long ph, long pw, long ow, long oh0, long band_oh,
                        double* x) {
  const long cols = band_oh * ow;
  for (long c = 0; c < ci; ++c) {
    double* xc = x + c * xh * xw;
    for (long i = 0; i < kh; ++i) {
      for (long j = 0; j < kw; ++j) {
        const double* row = col + ((c * kh + i) * kw + j) * cols;
        for (long oy = 0; oy < band_oh; ++oy) {
          const long iy = (oh0 + oy) * sh - ph + i;
          if (iy < 0 || iy >= xh) continue;
          const double* src = row + oy * ow;
          double* dst = xc + iy * xw;
          for (long ox = 0; ox < ow; ++ox) {
            const long ix = ox * sw - pw + j;
            if (ix >= 0 && ix < xw) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Output rows per GEMM tile, sized to keep the column buffer around 32 MB at
// the largest layer in the full-size model.
static long band_rows(long ci, long kh, long kw, long ow) {
  const long budget = 32L * 1024 * 1024 / 8;
  long rows = budget / std::max(1L, ci * kh * kw * ow);
  return std::max(1L, rows);
}

Tensor t_conv2d(const Tensor& x, const Tensor& w, long sh, long sw, long ph, long pw) {
  if (x.rank() != 4 || w.rank() != 4) throw std::runtime_error("t_conv2d: rank != 4");
  const long n = x.dim(0), ci = x.dim(1), xh = x.dim(2), xw = x.dim(3);
  const long co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci)
    throw std::runtime_error("t_conv2d: channel mismatch " + shape_str(x.shape()) + " w " +
                             shape_str(w.shape()));
  const long oh = (xh + 2 * ph - kh) / sh + 1;
  const long ow = (xw + 2 * pw - kw) / sw + 1;
  if (oh <= 0 || ow <= 0) throw std::runtime_error("t_conv2d: empty output");
  Tensor out({n, co, oh, ow});

  const long krows = ci * kh * kw;
  const long band = std::min(oh, band_rows(ci, kh, kw, ow));
  std::vector<double> col(static_cast<size_t>(krows * band * ow));
  CMapRM mw(w.data(), co, krows);
  for (long b = 0; b < n; ++b) {
    const double* xb = x.data() + b * ci * xh * xw;
    double* ob = out.data() + b * co * oh * ow;
    for (long oh0 = 0; oh0 < oh; oh0 += band) {
      const long bh = std::min(band, oh - oh0);
      im2col_band(xb, ci, xh, xw, kh, kw, sh, sw, ph, pw, ow, oh0, bh, col.data());
      CMapRM mc(col.data(), krows, bh * ow);
      for (long c = 0; c < co; ++c) {
        Eigen::Map<Eigen::RowVectorXd> orow(ob + c * oh * ow + oh0 * ow, bh * ow);
        orow.noalias() = mw.row(c) * mc;
      }
    }
  }
  return out;
}

Tensor t_conv2d_input_grad(const Tensor& gy, const Tensor& w, long sh, long sw, long ph,
                           long pw, long xh, long xw) {
  if (gy.rank() != 4 || w.rank() != 4)
    throw std::runtime_error("t_conv2d_input_grad: rank != 4");
  const long n = gy.dim(0), co = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
  const long ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != co) throw std::runtime_error("t_conv2d_input_grad: channel mismatch");
  Tensor out({n, ci, xh, xw});

  const long krows = ci * kh * kw;
  const long band = std::min(oh, band_rows(ci, kh, kw, ow));
  std::vector<double> col(static_cast<size_t>(krows * band * ow));
  CMapRM mw(w.data(), co, krows);
  for (long b = 0; b < n; ++b) {
    const double* gb = gy.data() + b * co * oh * ow;
    double* xb = out.data() + b * ci * xh * xw;
    for (long oh0 = 0; oh0 < oh; oh0 += band) {
      const long bh = std::min(band, oh - oh0);
      MapRM mc(col.data(), krows, bh * ow);
      // col = W^T * gy_band, then scatter back with col2im.
      Eigen::Map<const MatRM> mg0(gb, co, oh * ow);
      MatRM gband(co, bh * ow);
      for (long c = 0; c < co; ++c)
        gband.row(c) = mg0.row(c).segment(oh0 * ow, bh * ow);
      mc.noalias() = mw.transpose() * gband;
      col2im_band(col.data(), ci, xh, xw, kh, kw, sh, sw, ph, pw, ow, oh0, bh, xb);
    }
  }
  return out;
}

Tensor t_conv2d_weight_grad(const Tensor& gy, const Tensor& x, long sh, long sw, long ph,
                            long pw, long kh, long kw) {
  if (gy.rank() != 4 || x.rank() != 4)
    throw std::runtime_error("t_conv2d_weight_grad: rank != 4");
  const long n = gy.dim(0), co = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
  const long ci = x.dim(1), xh = x.dim(2), xw = x.dim(3);
  if (x.dim(0) != n) throw std::runtime_error("t_conv2d_weight_grad: batch mismatch");
  Tensor out({co, ci, kh, kw});

  const long krows = ci * kh * kw;
  const long band = std::min(oh, band_rows(ci, kh, kw, ow));
  std::vector<double> col(static_cast<size_t>(krows * band * ow));
  MapRM mo(out.data(), co, krows);
  mo.setZero();
  for (long b = 0; b < n; ++b) {
    const double* xb = x.data() + b * ci * xh * xw;
    const double* gb = gy.data() + b * co * oh * ow;
    for (long oh0 = 0; oh0 < oh; oh0 += band) {
      const long bh = std::min(band, oh - oh0);
      im2col_band(xb, ci, xh, xw, kh, kw, sh, sw, ph, pw, ow, oh0, bh, col.data());
      CMapRM mc(col.data(), krows, bh * ow);
      Eigen::Map<const MatRM> mg0(gb, co, oh * ow);
      MatRM gband(co, bh * ow);
      for (long c = 0; c < co; ++c)
        gband.row(c) = mg0.row(c).segment(oh0 * ow, bh * ow);
      mo.noalias() += gband * mc.transpose();
    }
  }
  return out;
}

Tensor t_reduce_to(const Tensor& a, const std::vector<long>& target) {
  if (a.shape() == target) return a.clone();
  if (a.rank() != static_cast<long>(target.size()))
    throw std::runtime_error("t_reduce_to: rank mismatch");
  Tensor out(target);
  const auto so = strides_of(target);
  const auto sa = strides_of(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const long n = a.numel();
  const long r = a.rank();
  for (long lin = 0; lin < n; ++lin) {
    long rem = lin, io = 0;
    for (long d = 0; d < r; ++d) {
      long c = rem / sa[static_cast<size_t>(d)];
      rem -= c * sa[static_cast<size_t>(d)];
      if (target[static_cast<size_t>(d)] != 1) {
        if (c >= target[static_cast<size_t>(d)])
          throw std::runtime_error("t_reduce_to: incompatible shapes");
        io += c * so[static_cast<size_t>(d)];
      }
    }
    po[io] += pa[lin];
  }
  return out;
}

Tensor t_sum_keep(const Tensor& a, long axis) {
  std::vector<long> target = a.shape();
  target[static_cast<size_t>(axis)] = 1;
  return t_reduce_to(a, target);
}

Tensor t_narrow(const Tensor& a, long axis, long start, long len) {
  if (axis < 0 || axis >= a.rank()) throw std::runtime_error("t_narrow: bad axis");
  if (start < 0 || start + len > a.dim(axis)) throw std::runtime_error("t_narrow: out of range");
  std::vector<long> out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(out_shape);
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= a.dim(d);
  for (long d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const double* pa = a.data();
  double* po = out.data();
  for (long o = 0; o < outer; ++o)
    std::memcpy(po + o * len * inner, pa + (o * a.dim(axis) + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
  return out;
}

Tensor t_narrow_back(const Tensor& gy, const std::vector<long>& full_shape, long axis,
                     long start) {
  Tensor out(full_shape);
  const long len = gy.dim(axis);
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= full_shape[static_cast<size_t>(d)];
  for (long d = axis + 1; d < static_cast<long>(full_shape.size()); ++d)
    inner *= full_shape[static_cast<size_t>(d)];
  const long full = full_shape[static_cast<size_t>(axis)];
  const double* pg = gy.data();
  double* po = out.data();
  for (long o = 0; o < outer; ++o)
    std::memcpy(po + (o * full + start) * inner, pg + o * len * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
  return out;
}

Tensor t_pad_freq(const Tensor& a, long before, long after) {
  if (a.rank() != 4) throw std::runtime_error("t_pad_freq: rank != 4");
  std::vector<long> out_shape = a.shape();
  out_shape[2] += before + after;
  Tensor out(out_shape);
  const long n = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  const double* pa = a.data();
  double* po = out.data();
  for (long c = 0; c < n; ++c)
    std::memcpy(po + (c * out_shape[2] + before) * w, pa + c * h * w,
                static_cast<size_t>(h * w) * sizeof(double));
  return out;
}

Tensor t_crop_freq(const Tensor& a, long before, long after) {
  return t_narrow(a, 2, before, a.dim(2) - before - after);
}

Tensor t_upsample2_freq(const Tensor& a) {
  if (a.rank() != 4) throw std::runtime_error("t_upsample2_freq: rank != 4");
  std::vector<long> out_shape = a.shape();
  out_shape[2] *= 2;
  Tensor out(out_shape);
  const long n = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  const double* pa = a.data();
  double* po = out.data();
  for (long c = 0; c < n; ++c) {
    for (long y = 0; y < h; ++y) {
      const double* src = pa + (c * h + y) * w;
      std::memcpy(po + (c * 2 * h + 2 * y) * w, src, static_cast<size_t>(w) * sizeof(double));
      std::memcpy(po + (c * 2 * h + 2 * y + 1) * w, src,
                  static_cast<size_t>(w) * sizeof(double));
    }
  }
  return out;
}

Tensor t_avgpool2_freq(const Tensor& a) {
  if (a.rank() != 4) throw std::runtime_error("t_avgpool2_freq: rank != 4");
  if (a.dim(2) % 2 != 0) throw std::runtime_error("t_avgpool2_freq: odd height");
  std::vector<long> out_shape = a.shape();
  out_shape[2] /= 2;
  Tensor out(out_shape);
  const long n = a.dim(0) * a.dim(1), oh = out_shape[2], w = a.dim(3);
  const double* pa = a.data();
  double* po = out.data();
  for (long c = 0; c < n; ++c) {
    for (long y = 0; y < oh; ++y) {
      const double* s0 = pa + (c * 2 * oh + 2 * y) * w;
      const double* s1 = s0 + w;
      double* dst = po + (c * oh + y) * w;
      for (long x = 0; x < w; ++x) dst[x] = 0.5 * (s0[x] + s1[x]);
    }
  }
  return out;
}

Tensor t_gather_rows(const Tensor& a, const std::vector<long>& idx) {
  if (a.rank() != 2) throw std::runtime_error("t_gather_rows: rank != 2");
  const long d = a.dim(1);
  Tensor out({static_cast<long>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.dim(0)) throw std::runtime_error("t_gather_rows: bad index");
    std::memcpy(out.data() + static_cast<long>(i) * d, a.data() + idx[i] * d,
                static_cast<size_t>(d) * sizeof(double));
  }
  return out;
}

Tensor t_scatter_rows_add(const Tensor& gy, const std::vector<long>& idx, long n_rows) {
  if (gy.rank() != 2) throw std::runtime_error("t_scatter_rows_add: rank != 2");
  const long d = gy.dim(1);
  Tensor out({n_rows, d});
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* src = gy.data() + static_cast<long>(i) * d;
    double* dst = out.data() + idx[i] * d;
    for (long j = 0; j < d; ++j) dst[j] += src[j];
  }
  return out;
}

Tensor t_concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) throw std::runtime_error("t_concat: empty");
  const long r = parts[0].rank();
  std::vector<long> out_shape = parts[0].shape();
  long total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw std::runtime_error("t_concat: rank mismatch");
    for (long d = 0; d < r; ++d)
      if (d != axis && p.dim(d) != out_shape[static_cast<size_t>(d)])
        throw std::runtime_error("t_concat: shape mismatch");
    total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  Tensor out(out_shape);
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (long d = axis + 1; d < r; ++d) inner *= out_shape[static_cast<size_t>(d)];
  double* po = out.data();
  long off = 0;
  for (const auto& p : parts) {
    const long len = p.dim(axis);
    const double* pp = p.data();
    for (long o = 0; o < outer; ++o)
      std::memcpy(po + (o * total + off) * inner, pp + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(double));
    off += len;
  }
  return out;
}

double t_sum_all(const Tensor& a) {
  const double* p = a.data();
  double s = 0.0;
  for (long i = 0, n = a.numel(); i < n; ++i) s += p[i];
  return s;
}

double t_max_all(const Tensor& a) {
  const double* p = a.data();
  double m = p[0];
  for (long i = 1, n = a.numel(); i < n; ++i) m = std::max(m, p[i]);
  return m;
}

}  // namespace tokensynth
