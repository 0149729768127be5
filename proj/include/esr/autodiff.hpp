#pragma once

#include <functional>
#include <vector>

#include "esr/array.hpp"

namespace esr::ad {

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, size_t id) : tape_(tape), id_(id) {}
  Tape* tape() const { return tape_; }
  size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Array& value() const;
  const Array& grad() const;

 private:
  Tape* tape_ = nullptr;
  size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() sweeps the registry in
// reverse. Single-threaded; independent tapes may run in parallel.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Array& upstream)>;

  Var leaf(Array value);
  Var constant(Array value) { return leaf(std::move(value)); }
  Var constant(double v) { return leaf(Array::scalar(v)); }

  Var emplace(Array value, std::vector<size_t> parents, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every node.
  // root must hold a single value.
  void backward(Var root);

  const Array& value(size_t id) const { return nodes_[id].value; }
  const Array& grad(size_t id) const { return nodes_[id].grad; }
  Array& grad_mut(size_t id) { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    std::vector<size_t> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Configurable guard for log/div; see GradDefaults.
struct GradDefaults {
  static constexpr double epsilon = 1e-12;
};

// --- elementwise (same shape, or one side a scalar) ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b, double eps = GradDefaults::epsilon);

Var neg(Var a);
Var scale(Var a, double s);
Var add_const(Var a, double c);

// --- unary ---
Var exp(Var a);
Var log(Var a, double eps = GradDefaults::epsilon);
Var tanh(Var a);
Var relu(Var a);
Var absval(Var a);

// --- linear algebra ---
Var matmul(Var a, Var b);
Var transpose(Var a);

// --- reductions ---
Var sum(Var a);
Var mean(Var a);
// rank-2 only: axis 0 sums rows away -> [cols], axis 1 -> [rows]
Var sum_axis(Var a, int axis);

// --- shape/indexing ---
Var reshape(Var a, Shape shape);
Var gather_rows(Var m, std::vector<size_t> idx);
Var pick(Var a, std::vector<size_t> flat_idx);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var stack_last(const std::vector<Var>& parts);
Var stack_scalars(const std::vector<Var>& parts);

// --- broadcast helpers (explicit ops, not general broadcasting) ---
Var add_rowvec(Var m, Var v);
Var sub_colvec(Var m, Var c);

// --- softmax family (over the last axis) ---
Var softmax(Var a);
Var log_softmax(Var a);
Var logsumexp(Var a);
// rank-2 with a 0/1 mask; masked entries get probability exactly 0
// (log-probability -1e300). Every row needs at least one allowed entry.
Var masked_softmax(Var a, const Array& mask);
Var masked_log_softmax(Var a, const Array& mask);

// Installs a node with an explicit backward rule. The rule receives the
// upstream gradient and must accumulate into the parents via
// tape.grad_mut(parent_id).
Var custom(Tape& tape, Array value, std::vector<Var> parents,
           Tape::BackwardFn backward);

// Central-difference check of a scalar-valued function of leaf arrays.
// Returns the max relative error (|a-n|)/max(1e-8,|a|+|n|) over coordinates.
double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Array>& point, double h = 1e-5);

}  // namespace esr::ad
