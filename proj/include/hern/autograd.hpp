#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hern/params.hpp"
#include "hern/tensor.hpp"

namespace hern {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Every op appends its output value and, when
/// gradients are recorded and some input requires them, a closure that
/// propagates the output gradient to its inputs. Parameters are referenced
/// in place, so the ParamStore must outlive the tape.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var out)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor<T> value);
  /// Input whose gradient is wanted after backward().
  Var input(Tensor<T> value);
  Var parameter(const ParamStore<T>& params, const std::string& name);

  /// Appends an op result. `backward` runs only if some input required a
  /// gradient; pass requires_grad as computed from the inputs.
  Var push(Tensor<T> value, bool requires_grad, Backward backward);

  const Tensor<T>& value(Var v) const { return *views_[v.id]; }
  bool requires_grad(Var v) const { return requires_grad_[v.id]; }
  bool requires_grad(std::initializer_list<Var> vs) const;

  /// Gradient accumulator for `v`; allocated as zeros on first use.
  Tensor<T>& grad(Var v);
  bool has_grad(Var v) const { return !grads_[v.id].empty(); }

  /// Seeds d(out)/d(out) = seed (out must be a single element) and runs
  /// the recorded closures in reverse order.
  void backward(Var out, T seed = T{1});

  /// Gradients of every parameter referenced on this tape. Entries of
  /// `params` never referenced are zero.
  ParamGrads<T> parameter_grads(const ParamStore<T>& params) const;
  /// Adds this tape's parameter gradients into `into`.
  void accumulate_parameter_grads(ParamGrads<T>& into) const;

  std::size_t size() const { return views_.size(); }
  /// Total elements of all op results (constants and parameters excluded).
  std::size_t activation_elements() const { return activation_elements_; }

 private:
  Var append(const Tensor<T>* view, bool requires_grad);

  bool record_;
  std::size_t activation_elements_ = 0;
  std::deque<Tensor<T>> owned_;
  std::vector<const Tensor<T>*> views_;
  std::vector<bool> requires_grad_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::pair<std::size_t, Backward>> closures_;
  std::unordered_map<std::string, std::size_t> param_ids_;
};

namespace ops {

/// Zero-padded 2-D convolution. `w` is k x k x cin x cout, `b` is cout.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, std::size_t pad);

/// Transposed convolution: output side = (in - 1) * stride - 2 * pad + k +
/// output_padding. `w` is k x k x cin x cout.
template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, std::size_t pad,
                     std::size_t output_padding);

/// Per-channel PReLU; `slope` has one entry per channel.
template <typename T>
Var prelu(Tape<T>& tape, Var x, Var slope);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// Channel concatenation [a || b].
template <typename T>
Var concat(Tape<T>& tape, Var a, Var b);

/// Spatial mean, HxWxC -> 1x1xC.
template <typename T>
Var mean_pool(Tape<T>& tape, Var x);

/// Adds a 1x1xC vector at every spatial position of x.
template <typename T>
Var broadcast_add(Tape<T>& tape, Var x, Var v);

/// Mean absolute difference over all elements; `target` is treated as a
/// constant.
template <typename T>
Var l1_loss(Tape<T>& tape, Var pred, const Tensor<T>& target);

}  // namespace ops
}  // namespace hern
