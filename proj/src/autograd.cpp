#include "hern/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

namespace hern {

template <typename T>
Var Tape<T>::append(const Tensor<T>* view, bool requires_grad) {
  views_.push_back(view);
  requires_grad_.push_back(record_ && requires_grad);
  grads_.emplace_back();
  return Var{views_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  owned_.push_back(std::move(value));
  return append(&owned_.back(), false);
}

template <typename T>
Var Tape<T>::input(Tensor<T> value) {
  owned_.push_back(std::move(value));
  return append(&owned_.back(), true);
}

template <typename T>
Var Tape<T>::parameter(const ParamStore<T>& params, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{it->second};
  Var v = append(&params.at(name), true);
  param_ids_.emplace(name, v.id);
  return v;
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, Backward backward) {
  activation_elements_ += value.size();
  owned_.push_back(std::move(value));
  Var v = append(&owned_.back(), requires_grad);
  if (requires_grad_[v.id]) closures_.emplace_back(v.id, std::move(backward));
  return v;
}

template <typename T>
bool Tape<T>::requires_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs) {
    if (requires_grad_[v.id]) return true;
  }
  return false;
}

template <typename T>
Tensor<T>& Tape<T>::grad(Var v) {
  Tensor<T>& g = grads_[v.id];
  if (g.empty() && views_[v.id]->size() != 0) g = Tensor<T>(views_[v.id]->shape());
  return g;
}

template <typename T>
void Tape<T>::backward(Var out, T seed) {
  if (!record_) throw Error("backward() on a tape that does not record gradients");
  if (value(out).size() != 1) {
    throw ShapeError("backward() needs a single-element output, got " +
                     shape_string(value(out).shape()));
  }
  grad(out)[0] += seed;
  for (auto it = closures_.rbegin(); it != closures_.rend(); ++it) {
    if (it->first <= out.id && has_grad(Var{it->first})) it->second(*this, Var{it->first});
  }
}

template <typename T>
ParamGrads<T> Tape<T>::parameter_grads(const ParamStore<T>& params) const {
  ParamGrads<T> out = params.zeros_like();
  accumulate_parameter_grads(out);
  return out;
}

template <typename T>
void Tape<T>::accumulate_parameter_grads(ParamGrads<T>& into) const {
  for (const auto& [name, id] : param_ids_) {
    const Tensor<T>& g = grads_[id];
    if (g.empty()) continue;
    Tensor<T>& dst = into.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

namespace ops {
namespace {

template <typename T>
void require_rank3(const Tensor<T>& t, const char* op) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected HxWxC input, got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_kernel(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const char* op) {
  require_rank3(x, op);
  if (w.rank() != 4 || w.dim(0) != w.dim(1) || w.dim(2) != x.channels()) {
    throw ShapeError(std::string(op) + ": kernel " + shape_string(w.shape()) +
                     " does not fit input " + shape_string(x.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(3)) {
    throw ShapeError(std::string(op) + ": bias " + shape_string(b.shape()) +
                     " does not match kernel " + shape_string(w.shape()));
  }
}

// Visits every kernel tap of a strided, zero-padded convolution one output
// row at a time: f(oy, ky, kx, iy, ox_begin, ox_end) covers the output
// pixels [ox_begin, ox_end) of row oy whose input column
// ox * stride + kx - pad lies inside the image.
template <typename F>
void for_each_tap_row(std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
                      std::size_t k, std::size_t stride, std::size_t pad, F&& f) {
  for (std::size_t kx = 0; kx < k; ++kx) {
    // Columns satisfy pad - kx <= ox * stride <= w - 1 + pad - kx.
    const std::size_t lo = kx >= pad ? 0 : (pad - kx + stride - 1) / stride;
    if (w - 1 + pad < kx) continue;
    const std::size_t hi = std::min(ow, (w - 1 + pad - kx) / stride + 1);
    if (lo >= hi) continue;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                        static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        f(oy, ky, kx, static_cast<std::size_t>(iy), lo, hi);
      }
    }
  }
}

// Calls f with std::integral_constant<std::size_t, n> for common channel
// counts so the inner loops get a compile-time trip count; 0 means dynamic.
template <typename F>
void with_channels(std::size_t n, F&& f) {
  switch (n) {
    case 3: return f(std::integral_constant<std::size_t, 3>{});
    case 4: return f(std::integral_constant<std::size_t, 4>{});
    case 8: return f(std::integral_constant<std::size_t, 8>{});
    case 16: return f(std::integral_constant<std::size_t, 16>{});
    case 32: return f(std::integral_constant<std::size_t, 32>{});
    default: return f(std::integral_constant<std::size_t, 0>{});
  }
}

// y[0..n) += x[0..m) * w for row-major m x n `w`. The summation order is
// the same for every N, so results do not depend on the dispatch.
template <std::size_t N, typename T>
void accumulate_vec_mat(T* __restrict y, const T* __restrict x, const T* __restrict w,
                        std::size_t m, std::size_t n) {
  const std::size_t cols = N == 0 ? n : N;
  for (std::size_t i = 0; i < m; ++i) {
    const T xi = x[i];
    const T* __restrict row = w + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += xi * row[j];
  }
}

// accumulate_vec_mat over `count` pixels spaced y_step and x_step apart.
// Four pixels share each kernel row load; per-element order is unchanged.
template <std::size_t N, typename T>
void accumulate_row_vec_mat(T* __restrict y, std::size_t y_step, const T* __restrict x,
                            std::size_t x_step, std::size_t count, const T* __restrict w,
                            std::size_t m, std::size_t n) {
  std::size_t p = 0;
  if constexpr (N != 0 && N <= 16) {
    for (; p + 4 <= count; p += 4) {
      T acc[4][N];
      for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t j = 0; j < N; ++j) acc[q][j] = y[(p + q) * y_step + j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict row = w + i * N;
        const T x0 = x[p * x_step + i];
        const T x1 = x[(p + 1) * x_step + i];
        const T x2 = x[(p + 2) * x_step + i];
        const T x3 = x[(p + 3) * x_step + i];
        for (std::size_t j = 0; j < N; ++j) {
          acc[0][j] += x0 * row[j];
          acc[1][j] += x1 * row[j];
          acc[2][j] += x2 * row[j];
          acc[3][j] += x3 * row[j];
        }
      }
      for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t j = 0; j < N; ++j) y[(p + q) * y_step + j] = acc[q][j];
      }
    }
  }
  for (; p < count; ++p) accumulate_vec_mat<N>(y + p * y_step, x + p * x_step, w, m, n);
}

// y[i] += dot(w row i, g) for i < m.
template <std::size_t N, typename T>
void accumulate_mat_vec(T* __restrict y, const T* __restrict g, const T* __restrict w,
                        std::size_t m, std::size_t n) {
  const std::size_t cols = N == 0 ? n : N;
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict row = w + i * cols;
    T acc{};
    for (std::size_t j = 0; j < cols; ++j) acc += g[j] * row[j];
    y[i] += acc;
  }
}

// gw += outer(x, g) for an m x n `gw`.
template <std::size_t N, typename T>
void accumulate_outer(T* __restrict gw, const T* __restrict x, const T* __restrict g,
                      std::size_t m, std::size_t n) {
  const std::size_t cols = N == 0 ? n : N;
  for (std::size_t i = 0; i < m; ++i) {
    const T xi = x[i];
    T* __restrict row = gw + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += xi * g[j];
  }
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var xv, Var wv, Var bv, std::size_t stride, std::size_t pad) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  const Tensor<T>& b = tape.value(bv);
  require_kernel(x, w, b, "conv2d");
  const std::size_t k = w.dim(0), cin = w.dim(2), cout = w.dim(3);
  const std::size_t h = x.height(), wd = x.width();
  if (h + 2 * pad < k || wd + 2 * pad < k) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " smaller than kernel");
  }
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - k) / stride + 1;

  auto out = Tensor<T>::image(oh, ow, cout);
  for (std::size_t i = 0; i < oh * ow; ++i) std::copy_n(b.data(), cout, out.data() + i * cout);
  with_channels(cout, [&](auto n) {
    for_each_tap_row(h, wd, oh, ow, k, stride, pad,
                     [&](std::size_t oy, std::size_t ky, std::size_t kx, std::size_t iy,
                         std::size_t lo, std::size_t hi) {
                       accumulate_row_vec_mat<n()>(
                           &out.at(oy, lo, 0), cout, &x.at(iy, lo * stride + kx - pad, 0),
                           stride * cin, hi - lo, w.data() + (ky * k + kx) * cin * cout, cin, cout);
                     });
  });

  const bool rg = tape.requires_grad({xv, wv, bv});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& x_ = t.value(xv);
    const Tensor<T>& w_ = t.value(wv);
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(bv)) {
      Tensor<T>& gb = t.grad(bv);
      for (std::size_t i = 0; i < oh * ow; ++i) {
        const T* g = gy.data() + i * cout;
        for (std::size_t co = 0; co < cout; ++co) gb[co] += g[co];
      }
    }
    const bool need_x = t.requires_grad(xv);
    const bool need_w = t.requires_grad(wv);
    T* gx = need_x ? t.grad(xv).data() : nullptr;
    T* gw = need_w ? t.grad(wv).data() : nullptr;
    with_channels(cout, [&](auto n) {
      for_each_tap_row(x_.height(), x_.width(), oh, ow, k, stride, pad,
                       [&](std::size_t oy, std::size_t ky, std::size_t kx, std::size_t iy,
                           std::size_t lo, std::size_t hi) {
                         const std::size_t kern_off = (ky * k + kx) * cin * cout;
                         for (std::size_t ox = lo; ox < hi; ++ox) {
                           const T* g = &gy.at(oy, ox, 0);
                           const std::size_t src_off =
                               (iy * x_.width() + ox * stride + kx - pad) * cin;
                           if (need_x) {
                             accumulate_mat_vec<n()>(gx + src_off, g, w_.data() + kern_off, cin,
                                                     cout);
                           }
                           if (need_w) {
                             accumulate_outer<n()>(gw + kern_off, x_.data() + src_off, g, cin,
                                                   cout);
                           }
                         }
                       });
    });
  });
}

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var xv, Var wv, Var bv, std::size_t stride, std::size_t pad,
                     std::size_t output_padding) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  const Tensor<T>& b = tape.value(bv);
  require_kernel(x, w, b, "conv_transpose2d");
  const std::size_t k = w.dim(0), cin = w.dim(2), cout = w.dim(3);
  const std::size_t h = x.height(), wd = x.width();
  if (h == 0 || wd == 0 || (h - 1) * stride + k + output_padding < 2 * pad) {
    throw ShapeError("conv_transpose2d: degenerate input " + shape_string(x.shape()));
  }
  const std::size_t oh = (h - 1) * stride + k + output_padding - 2 * pad;
  const std::size_t ow = (wd - 1) * stride + k + output_padding - 2 * pad;

  // A transposed convolution is the adjoint of a strided convolution: the
  // (output pixel, tap, input pixel) relation is the same with the roles of
  // input and output exchanged.
  auto out = Tensor<T>::image(oh, ow, cout);
  for (std::size_t i = 0; i < oh * ow; ++i) std::copy_n(b.data(), cout, out.data() + i * cout);
  with_channels(cout, [&](auto n) {
    for_each_tap_row(oh, ow, h, wd, k, stride, pad,
                     [&](std::size_t iy, std::size_t ky, std::size_t kx, std::size_t oy,
                         std::size_t lo, std::size_t hi) {
                       accumulate_row_vec_mat<n()>(
                           &out.at(oy, lo * stride + kx - pad, 0), stride * cout, &x.at(iy, lo, 0),
                           cin, hi - lo, w.data() + (ky * k + kx) * cin * cout, cin, cout);
                     });
  });

  const bool rg = tape.requires_grad({xv, wv, bv});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& x_ = t.value(xv);
    const Tensor<T>& w_ = t.value(wv);
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(bv)) {
      Tensor<T>& gb = t.grad(bv);
      for (std::size_t i = 0; i < oh * ow; ++i) {
        const T* g = gy.data() + i * cout;
        for (std::size_t co = 0; co < cout; ++co) gb[co] += g[co];
      }
    }
    const bool need_x = t.requires_grad(xv);
    const bool need_w = t.requires_grad(wv);
    T* gx = need_x ? t.grad(xv).data() : nullptr;
    T* gw = need_w ? t.grad(wv).data() : nullptr;
    with_channels(cout, [&](auto n) {
      for_each_tap_row(oh, ow, x_.height(), x_.width(), k, stride, pad,
                       [&](std::size_t iy, std::size_t ky, std::size_t kx, std::size_t oy,
                           std::size_t lo, std::size_t hi) {
                         const std::size_t kern_off = (ky * k + kx) * cin * cout;
                         for (std::size_t ix = lo; ix < hi; ++ix) {
                           const T* g = &gy.at(oy, ix * stride + kx - pad, 0);
                           const std::size_t src_off = (iy * x_.width() + ix) * cin;
                           if (need_x) {
                             accumulate_mat_vec<n()>(gx + src_off, g, w_.data() + kern_off, cin,
                                                     cout);
                           }
                           if (need_w) {
                             accumulate_outer<n()>(gw + kern_off, x_.data() + src_off, g, cin,
                                                   cout);
                           }
                         }
                       });
    });
  });
}

template <typename T>
Var prelu(Tape<T>& tape, Var xv, Var av) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& a = tape.value(av);
  require_rank3(x, "prelu");
  const std::size_t c = x.channels();
  if (a.rank() != 1 || a.dim(0) != c) {
    throw ShapeError("prelu: slope " + shape_string(a.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = v > T{0} ? v : a[i % c] * v;
  }
  const bool rg = tape.requires_grad({xv, av});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& x_ = t.value(xv);
    const Tensor<T>& a_ = t.value(av);
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(xv)) {
      Tensor<T>& gx = t.grad(xv);
      for (std::size_t i = 0; i < x_.size(); ++i) gx[i] += x_[i] > T{0} ? gy[i] : a_[i % c] * gy[i];
    }
    if (t.requires_grad(av)) {
      Tensor<T>& ga = t.grad(av);
      for (std::size_t i = 0; i < x_.size(); ++i) {
        if (!(x_[i] > T{0})) ga[i % c] += x_[i] * gy[i];
      }
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  const bool rg = tape.requires_grad({av, bv});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    for (Var v : {av, bv}) {
      if (!t.requires_grad(v)) continue;
      Tensor<T>& g = t.grad(v);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
}

template <typename T>
Var concat(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  require_rank3(a, "concat");
  require_rank3(b, "concat");
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat: spatial sizes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
  const std::size_t ca = a.channels(), cb = b.channels(), n = a.height() * a.width();
  auto out = Tensor<T>::image(a.height(), a.width(), ca + cb);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(b.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  const bool rg = tape.requires_grad({av, bv});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(av)) {
      Tensor<T>& ga = t.grad(av);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ca; ++c) ga[i * ca + c] += gy[i * (ca + cb) + c];
      }
    }
    if (t.requires_grad(bv)) {
      Tensor<T>& gb = t.grad(bv);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cb; ++c) gb[i * cb + c] += gy[i * (ca + cb) + ca + c];
      }
    }
  });
}

template <typename T>
Var mean_pool(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  require_rank3(x, "mean_pool");
  const std::size_t c = x.channels(), n = x.height() * x.width();
  if (n == 0) throw ShapeError("mean_pool: empty input");
  auto out = Tensor<T>::image(1, 1, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += x[i * c + ch];
  }
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] /= static_cast<T>(n);
  const bool rg = tape.requires_grad({xv});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xv);
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) gx[i * c + ch] += gy[ch] * inv;
    }
  });
}

template <typename T>
Var broadcast_add(Tape<T>& tape, Var xv, Var vv) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& v = tape.value(vv);
  require_rank3(x, "broadcast_add");
  const std::size_t c = x.channels(), n = x.height() * x.width();
  if (v.size() != c) {
    throw ShapeError("broadcast_add: vector " + shape_string(v.shape()) +
                     " does not match channels of " + shape_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = x[i * c + ch] + v[ch];
  }
  const bool rg = tape.requires_grad({xv, vv});
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(xv)) {
      Tensor<T>& gx = t.grad(xv);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (t.requires_grad(vv)) {
      Tensor<T>& gv = t.grad(vv);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) gv[ch] += gy[i * c + ch];
      }
    }
  });
}

template <typename T>
Var l1_loss(Tape<T>& tape, Var pv, const Tensor<T>& target) {
  const Tensor<T>& p = tape.value(pv);
  if (p.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + shape_string(p.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  if (p.size() == 0) throw ShapeError("l1_loss: empty tensors");
  T sum{};
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - target[i]);
  Tensor<T> out({1}, sum / static_cast<T>(p.size()));
  const bool rg = tape.requires_grad({pv});
  return tape.push(std::move(out), rg, [=, diff_sign = [&] {
    std::vector<T> s(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T d = p[i] - target[i];
      s[i] = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
    }
    return s;
  }()](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0] / static_cast<T>(diff_sign.size());
    Tensor<T>& gp = t.grad(pv);
    for (std::size_t i = 0; i < diff_sign.size(); ++i) gp[i] += g * diff_sign[i];
  });
}

#define HERN_INSTANTIATE_OPS(T)                                                              \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t);                 \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t,        \
                                   std::size_t);                                             \
  template Var prelu<T>(Tape<T>&, Var, Var);                                                 \
  template Var add<T>(Tape<T>&, Var, Var);                                                   \
  template Var concat<T>(Tape<T>&, Var, Var);                                                \
  template Var mean_pool<T>(Tape<T>&, Var);                                                  \
  template Var broadcast_add<T>(Tape<T>&, Var, Var);                                         \
  template Var l1_loss<T>(Tape<T>&, Var, const Tensor<T>&);

HERN_INSTANTIATE_OPS(float)
HERN_INSTANTIATE_OPS(double)
#undef HERN_INSTANTIATE_OPS

}  // namespace ops

template class Tape<float>;
template class Tape<double>;

}  // namespace hern
