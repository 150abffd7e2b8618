#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace litefew {

// Validation failures (bad shapes, bad arguments, malformed inputs) map to
// CLI exit code 1; I/O failures to exit code 2.
class ValidationError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorData {
  std::vector<int64_t> shape;
  std::vector<double> data;  // row-major
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
};

inline int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

}  // namespace detail

// Dense 64-bit real tensor with an optional gradient buffer. Handle semantics:
// copies share storage, which is what the tape needs to accumulate grads into
// the tensors the caller holds.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
    check_shape(shape);
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->data.assign(static_cast<size_t>(detail::numel_of(t.d_->shape)), 0.0);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<double> data,
                     bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<int64_t>(data.size()) != detail::numel_of(shape))
      throw ValidationError("tensor data length does not match shape");
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->data = std::move(data);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  const std::vector<int64_t>& shape() const { return d_->shape; }
  int64_t dim(size_t i) const { return d_->shape.at(i); }
  size_t rank() const { return d_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(d_->data.size()); }
  bool is_scalar() const { return numel() == 1; }

  double* data() { return d_->data.data(); }
  const double* data() const { return d_->data.data(); }
  std::vector<double>& values() { return d_->data; }
  const std::vector<double>& values() const { return d_->data; }

  double item() const {
    if (!is_scalar()) throw ValidationError("item() on non-scalar tensor");
    return d_->data[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }

  bool has_grad() const { return d_->grad.has_value(); }
  std::vector<double>& grad() {
    if (!d_->grad) throw ValidationError("grad accessed before backward");
    return *d_->grad;
  }
  const std::vector<double>& grad() const {
    if (!d_->grad) throw ValidationError("grad accessed before backward");
    return *d_->grad;
  }

  void ensure_grad() {
    if (!d_->grad) d_->grad.emplace(d_->data.size(), 0.0);
  }
  void zero_grad() { d_->grad.reset(); }

  void accumulate_grad(const double* g, int64_t n) {
    ensure_grad();
    double* dst = d_->grad->data();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
  }

  // identity of the underlying storage, for aliasing checks in tests
  const void* id() const { return d_.get(); }

  Tensor detached_copy() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->data = d_->data;
    t.d_->requires_grad = false;
    return t;
  }

 private:
  static void check_shape(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw ValidationError("tensor shape must be non-empty");
    for (int64_t d : shape)
      if (d <= 0) throw ValidationError("tensor dimensions must be positive");
  }

  std::shared_ptr<detail::TensorData> d_;
};

// Ordered record of executed primitives. Replaying in reverse visits every
// recorded op exactly once; ops whose output never received a gradient are
// no-ops on replay. Op outputs are transient: their grads are cleared at the
// start of every backward pass, so only leaf tensors accumulate across calls.
class Tape {
 public:
  void record(Tensor output, std::function<void()> backward_fn) {
    records_.emplace_back(std::move(output), std::move(backward_fn));
  }
  size_t size() const { return records_.size(); }

  void backward(Tensor loss) {
    if (!loss.is_scalar()) throw ValidationError("backward requires a scalar loss");
    for (auto& [out, fn] : records_)
      if (out.has_grad()) std::fill(out.grad().begin(), out.grad().end(), 0.0);
    loss.ensure_grad();
    loss.grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->second();
  }

 private:
  std::vector<std::pair<Tensor, std::function<void()>>> records_;
};

inline void backward(Tensor loss, Tape& tape) { tape.backward(std::move(loss)); }

namespace ops {

namespace detail2 {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// im2col for 1-D conv: cols is (C_in*K) x T_out, row-major. pad_left is only
// nonzero for causal convs (stride 1); out-of-range taps read zero.
inline void im2col(const double* x, int64_t c_in, int64_t t_in, int64_t k,
                   int64_t stride, int64_t dilation, int64_t pad_left,
                   int64_t t_out, std::vector<double>& cols) {
  cols.assign(static_cast<size_t>(c_in * k * t_out), 0.0);
  for (int64_t ci = 0; ci < c_in; ++ci) {
    const double* xr = x + ci * t_in;
    for (int64_t kk = 0; kk < k; ++kk) {
      double* row = cols.data() + (ci * k + kk) * t_out;
      const int64_t off = kk * dilation - pad_left;
      for (int64_t t = 0; t < t_out; ++t) {
        const int64_t src = t * stride + off;
        if (src >= 0 && src < t_in) row[t] = xr[src];
      }
    }
  }
}

}  // namespace detail2

inline int64_t conv1d_out_len(int64_t t_in, int64_t k, int64_t stride,
                              int64_t dilation) {
  const int64_t span = dilation * (k - 1) + 1;
  if (t_in < span) return 0;
  return (t_in - span) / stride + 1;
}

// input: C_in x T, weight: C_out x C_in x K. With causal_pad the input is
// left-padded with dilation*(K-1) zeros (stride must be 1), so T' = T and
// output frame t depends only on input frames <= t.
inline Tensor conv1d(Tape& tape, const Tensor& input, const Tensor& weight,
                     int64_t stride, int64_t dilation, bool causal_pad) {
  if (input.rank() != 2) throw ValidationError("conv1d: input must be C x T");
  if (weight.rank() != 3)
    throw ValidationError("conv1d: weight must be C_out x C_in x K");
  if (stride < 1 || dilation < 1)
    throw ValidationError("conv1d: stride and dilation must be positive");
  const int64_t c_in = input.dim(0), t_in = input.dim(1);
  const int64_t c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in)
    throw ValidationError("conv1d: input channels (" + std::to_string(c_in) +
                          ") do not match weight C_in (" +
                          std::to_string(weight.dim(1)) + ")");
  const int64_t span = dilation * (k - 1) + 1;
  int64_t pad_left = 0, t_out = 0;
  if (causal_pad) {
    if (stride != 1) throw ValidationError("conv1d: causal_pad requires stride 1");
    pad_left = span - 1;
    t_out = t_in;
  } else {
    if (t_in < span)
      throw ValidationError("conv1d: input length " + std::to_string(t_in) +
                            " below kernel span " + std::to_string(span));
    t_out = conv1d_out_len(t_in, k, stride, dilation);
  }

  Tensor out = Tensor::zeros({c_out, t_out});
  {
    std::vector<double> cols;
    detail2::im2col(input.data(), c_in, t_in, k, stride, dilation, pad_left,
                    t_out, cols);
    detail2::ConstMatMap w(weight.data(), c_out, c_in * k);
    detail2::ConstMatMap c(cols.data(), c_in * k, t_out);
    detail2::MatMap o(out.data(), c_out, t_out);
    o.noalias() = w * c;
  }

  if (detail2::any_grad({&input, &weight})) {
    out.set_requires_grad(true);
    Tensor in = input, w = weight, o = out;
    tape.record(o, [in, w, o, stride, dilation, pad_left, t_out]() mutable {
      if (!o.has_grad()) return;
      const int64_t c_in = in.dim(0), t_in = in.dim(1);
      const int64_t c_out = w.dim(0), k = w.dim(2);
      detail2::ConstMatMap g(o.grad().data(), c_out, t_out);
      if (w.requires_grad()) {
        // dW = g . cols^T ; cols rebuilt instead of saved to keep graphs small
        std::vector<double> cols;
        detail2::im2col(in.data(), c_in, t_in, k, stride, dilation, pad_left,
                        t_out, cols);
        detail2::ConstMatMap c(cols.data(), c_in * k, t_out);
        w.ensure_grad();
        detail2::MatMap dw(w.grad().data(), c_out, c_in * k);
        dw.noalias() += g * c.transpose();
      }
      if (in.requires_grad()) {
        // dcols = W^T . g, then scatter back to input positions
        detail2::RowMat dcols(c_in * k, t_out);
        detail2::ConstMatMap wm(w.data(), c_out, c_in * k);
        dcols.noalias() = wm.transpose() * g;
        in.ensure_grad();
        double* dx = in.grad().data();
        for (int64_t ci = 0; ci < c_in; ++ci) {
          double* dxr = dx + ci * t_in;
          for (int64_t kk = 0; kk < k; ++kk) {
            const double* row = dcols.data() + (ci * k + kk) * t_out;
            const int64_t off = kk * dilation - pad_left;
            for (int64_t t = 0; t < t_out; ++t) {
              const int64_t src = t * stride + off;
              if (src >= 0 && src < t_in) dxr[src] += row[t];
            }
          }
        }
      }
    });
  }
  return out;
}

// per-frame linear map: out = weight (C_out x C_in) . input (C_in x T)
inline Tensor channel_linear(Tape& tape, const Tensor& input,
                             const Tensor& weight) {
  if (input.rank() != 2 || weight.rank() != 2)
    throw ValidationError("channel_linear: need 2-D input and weight");
  if (weight.dim(1) != input.dim(0))
    throw ValidationError("channel_linear: channel mismatch (input " +
                          std::to_string(input.dim(0)) + ", weight expects " +
                          std::to_string(weight.dim(1)) + ")");
  const int64_t c_out = weight.dim(0), c_in = input.dim(0), t = input.dim(1);
  Tensor out = Tensor::zeros({c_out, t});
  {
    detail2::ConstMatMap w(weight.data(), c_out, c_in);
    detail2::ConstMatMap x(input.data(), c_in, t);
    detail2::MatMap o(out.data(), c_out, t);
    o.noalias() = w * x;
  }
  if (detail2::any_grad({&input, &weight})) {
    out.set_requires_grad(true);
    Tensor in = input, w = weight, o = out;
    tape.record(o, [in, w, o]() mutable {
      if (!o.has_grad()) return;
      const int64_t c_out = w.dim(0), c_in = in.dim(0), t = in.dim(1);
      detail2::ConstMatMap g(o.grad().data(), c_out, t);
      if (w.requires_grad()) {
        w.ensure_grad();
        detail2::MatMap dw(w.grad().data(), c_out, c_in);
        detail2::ConstMatMap x(in.data(), c_in, t);
        dw.noalias() += g * x.transpose();
      }
      if (in.requires_grad()) {
        in.ensure_grad();
        detail2::MatMap dx(in.grad().data(), c_in, t);
        detail2::ConstMatMap wm(w.data(), c_out, c_in);
        dx.noalias() += wm.transpose() * g;
      }
    });
  }
  return out;
}

// out[c][t] = input[c][t] + bias[c]
inline Tensor bias_add(Tape& tape, const Tensor& input, const Tensor& bias) {
  if (input.rank() != 2 || bias.rank() != 1 || bias.dim(0) != input.dim(0))
    throw ValidationError("bias_add: bias must have one entry per channel");
  const int64_t c = input.dim(0), t = input.dim(1);
  Tensor out = Tensor::zeros({c, t});
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < t; ++j)
      out.data()[i * t + j] = input.data()[i * t + j] + bias.data()[i];
  if (detail2::any_grad({&input, &bias})) {
    out.set_requires_grad(true);
    Tensor in = input, b = bias, o = out;
    tape.record(o, [in, b, o]() mutable {
      if (!o.has_grad()) return;
      const int64_t c = in.dim(0), t = in.dim(1);
      const double* g = o.grad().data();
      if (in.requires_grad()) in.accumulate_grad(g, c * t);
      if (b.requires_grad()) {
        b.ensure_grad();
        for (int64_t i = 0; i < c; ++i) {
          double s = 0.0;
          for (int64_t j = 0; j < t; ++j) s += g[i * t + j];
          b.grad()[i] += s;
        }
      }
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ValidationError("add: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail2::any_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, o = out;
    tape.record(o, [ta, tb, o]() mutable {
      if (!o.has_grad()) return;
      const int64_t n = o.numel();
      if (ta.requires_grad()) ta.accumulate_grad(o.grad().data(), n);
      if (tb.requires_grad()) tb.accumulate_grad(o.grad().data(), n);
    });
  }
  return out;
}

inline Tensor mul_scalar(Tape& tape, const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor tx = x, o = out;
    tape.record(o, [tx, o, c]() mutable {
      if (!o.has_grad()) return;
      tx.ensure_grad();
      const int64_t n = o.numel();
      for (int64_t i = 0; i < n; ++i) tx.grad()[i] += c * o.grad()[i];
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor tx = x, o = out;
    tape.record(o, [tx, o]() mutable {
      if (!o.has_grad()) return;
      tx.ensure_grad();
      const double g = o.grad()[0];
      for (int64_t i = 0; i < tx.numel(); ++i) tx.grad()[i] += g;
    });
  }
  return out;
}

inline Tensor mean_scalars(Tape& tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValidationError("mean_scalars: empty list");
  double s = 0.0;
  bool track = false;
  for (const Tensor& x : xs) {
    s += x.item();
    track = track || x.requires_grad();
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(xs.size()));
  if (track) {
    out.set_requires_grad(true);
    std::vector<Tensor> terms = xs;
    Tensor o = out;
    tape.record(o, [terms, o]() mutable {
      if (!o.has_grad()) return;
      const double g = o.grad()[0] / static_cast<double>(terms.size());
      for (Tensor& t : terms)
        if (t.requires_grad()) t.accumulate_grad(&g, 1);
    });
  }
  return out;
}

// exact erf-form GELU: x * Phi(x)
inline Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244));
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor tx = x, o = out;
    tape.record(o, [tx, o]() mutable {
      if (!o.has_grad()) return;
      tx.ensure_grad();
      const int64_t n = tx.numel();
      for (int64_t i = 0; i < n; ++i) {
        const double v = tx.data()[i];
        const double phi = std::exp(-0.5 * v * v) * 0.3989422804014326779;
        const double Phi = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
        tx.grad()[i] += o.grad()[i] * (Phi + v * phi);
      }
    });
  }
  return out;
}

// per-channel normalization over time: each row to mean 0 / var 1, then
// affine scale/shift. Population variance; eps guards the division.
inline Tensor instance_norm(Tape& tape, const Tensor& input,
                            const Tensor& scale, const Tensor& shift,
                            double eps) {
  if (input.rank() != 2) throw ValidationError("instance_norm: input must be C x T");
  const int64_t c = input.dim(0), t = input.dim(1);
  if (t < 2) throw ValidationError("instance_norm: needs T >= 2");
  if (scale.rank() != 1 || scale.dim(0) != c || shift.rank() != 1 ||
      shift.dim(0) != c)
    throw ValidationError("instance_norm: scale/shift must have C entries");

  Tensor out = Tensor::zeros({c, t});
  std::vector<double> inv_std(c), norm(static_cast<size_t>(c * t));
  for (int64_t i = 0; i < c; ++i) {
    const double* row = input.data() + i * t;
    double mu = 0.0;
    for (int64_t j = 0; j < t; ++j) mu += row[j];
    mu /= static_cast<double>(t);
    double var = 0.0;
    for (int64_t j = 0; j < t; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(t);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int64_t j = 0; j < t; ++j) {
      const double y = (row[j] - mu) * is;
      norm[i * t + j] = y;
      out.data()[i * t + j] = scale.data()[i] * y + shift.data()[i];
    }
  }
  if (detail2::any_grad({&input, &scale, &shift})) {
    out.set_requires_grad(true);
    Tensor in = input, sc = scale, sh = shift, o = out;
    auto saved_norm = std::make_shared<std::vector<double>>(std::move(norm));
    auto saved_is = std::make_shared<std::vector<double>>(std::move(inv_std));
    tape.record(o, [in, sc, sh, o, saved_norm, saved_is]() mutable {
      if (!o.has_grad()) return;
      const int64_t c = in.dim(0), t = in.dim(1);
      const double* g = o.grad().data();
      const double* y = saved_norm->data();
      for (int64_t i = 0; i < c; ++i) {
        const double* gi = g + i * t;
        const double* yi = y + i * t;
        if (sh.requires_grad()) {
          sh.ensure_grad();
          double s = 0.0;
          for (int64_t j = 0; j < t; ++j) s += gi[j];
          sh.grad()[i] += s;
        }
        if (sc.requires_grad()) {
          sc.ensure_grad();
          double s = 0.0;
          for (int64_t j = 0; j < t; ++j) s += gi[j] * yi[j];
          sc.grad()[i] += s;
        }
        if (in.requires_grad()) {
          in.ensure_grad();
          const double gamma = sc.data()[i];
          double mean_dy = 0.0, mean_dyy = 0.0;
          for (int64_t j = 0; j < t; ++j) {
            const double dy = gi[j] * gamma;
            mean_dy += dy;
            mean_dyy += dy * yi[j];
          }
          mean_dy /= static_cast<double>(t);
          mean_dyy /= static_cast<double>(t);
          double* din = in.grad().data() + i * t;
          const double is = (*saved_is)[i];
          for (int64_t j = 0; j < t; ++j) {
            const double dy = gi[j] * gamma;
            din[j] += is * (dy - mean_dy - yi[j] * mean_dyy);
          }
        }
      }
    });
  }
  return out;
}

// mean over all elements of (a - b)^2
inline Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ValidationError("mse: shape mismatch");
  const int64_t n = a.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (detail2::any_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, o = out;
    tape.record(o, [ta, tb, o]() mutable {
      if (!o.has_grad()) return;
      const int64_t n = ta.numel();
      const double g = o.grad()[0] * 2.0 / static_cast<double>(n);
      if (ta.requires_grad()) ta.ensure_grad();
      if (tb.requires_grad()) tb.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double d = g * (ta.data()[i] - tb.data()[i]);
        if (ta.requires_grad()) ta.grad()[i] += d;
        if (tb.requires_grad()) tb.grad()[i] -= d;
      }
    });
  }
  return out;
}

// subgradient clamp; gradient passes only strictly inside (lo, hi)
inline Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
  Tensor out = Tensor::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = std::min(hi, std::max(lo, x.data()[i]));
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor tx = x, o = out;
    tape.record(o, [tx, o, lo, hi]() mutable {
      if (!o.has_grad()) return;
      tx.ensure_grad();
      const int64_t n = tx.numel();
      for (int64_t i = 0; i < n; ++i) {
        const double v = tx.data()[i];
        if (v > lo && v < hi) tx.grad()[i] += o.grad()[i];
      }
    });
  }
  return out;
}

// frames [t0, t1) of a C x T map; backward scatters into the source range
inline Tensor slice_frames(Tape& tape, const Tensor& x, int64_t t0, int64_t t1) {
  if (x.rank() != 2) throw ValidationError("slice_frames: input must be C x T");
  const int64_t c = x.dim(0), t = x.dim(1);
  if (t0 < 0 || t1 > t || t0 >= t1)
    throw ValidationError("slice_frames: bad frame range [" +
                          std::to_string(t0) + ", " + std::to_string(t1) + ")");
  const int64_t w = t1 - t0;
  Tensor out = Tensor::zeros({c, w});
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < w; ++j)
      out.data()[i * w + j] = x.data()[i * t + t0 + j];
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor tx = x, o = out;
    tape.record(o, [tx, o, t0]() mutable {
      if (!o.has_grad()) return;
      tx.ensure_grad();
      const int64_t c = tx.dim(0), t = tx.dim(1), w = o.dim(1);
      for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < w; ++j)
          tx.grad()[i * t + t0 + j] += o.grad()[i * w + j];
    });
  }
  return out;
}

}  // namespace ops
}  // namespace litefew
