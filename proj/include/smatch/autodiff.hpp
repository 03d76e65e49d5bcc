// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over Tensor values.
//
// Every differentiable operation executed while recording is enabled and with
// at least one input that requires a gradient appends a node to the tape. A
// node owns its output value and a closure that maps the output gradient to
// input gradients. The tape is the DAG reachable from a root through parent
// links; backward() walks it once in reverse topological order.
//
// The tape counts the elements it retains (node outputs plus any buffers
// saved for the backward pass) per named phase. That count is the memory
// proxy used by the benchmarks.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smatch/tensor.hpp"

namespace smatch::ad {

// View onto one parent's gradient accumulator. data is null when the parent
// does not require a gradient.
struct GradSlot {
  double* data = nullptr;
  std::size_t size = 0;
  explicit operator bool() const noexcept { return data != nullptr; }
};

// Receives the gradient of the node's output, the output value itself, and one
// slot per parent to accumulate into.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      const Tensor& out, std::span<GradSlot> parents)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  std::vector<double> grad;  // empty until backward reaches the node
};

class Var {
 public:
  Var() = default;

  // A leaf the tape may differentiate with respect to.
  static Var leaf(Tensor value, bool requires_grad = true);
  // A leaf that never receives a gradient.
  static Var constant(Tensor value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  DType dtype() const { return value().dtype(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && node_->parents.empty(); }
  const std::string& op() const;

  // Gradient from the most recent backward(); nullopt if none reached this node.
  std::optional<Tensor> grad() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_result(std::string op, Tensor value, std::vector<Var> parents,
                         BackwardFn backward, std::uint64_t saved_elements);
  std::shared_ptr<Node> node_;
};

// Creates an op output. When recording is off or no parent requires a gradient
// the result is a constant and nothing is counted; otherwise the output and
// saved_elements are added to the current phase's counter.
Var make_result(std::string op, Tensor value, std::vector<Var> parents,
                BackwardFn backward, std::uint64_t saved_elements = 0);

struct TapeCounters {
  std::uint64_t elements = 0;
  std::uint64_t records = 0;
  std::map<std::string, std::uint64_t> by_phase;
};

// RAII switch for the thread's recording flag. Nested scopes restore the
// previous state on exit.
class TapeScope {
 public:
  explicit TapeScope(bool recording);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  static bool recording() noexcept;
  static const TapeCounters& counters() noexcept;
  static void reset_counters() noexcept;

 private:
  bool previous_;
};

// RAII label under which recorded elements are counted.
class PhaseScope {
 public:
  explicit PhaseScope(std::string phase);
  ~PhaseScope();
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

  static const std::string& current() noexcept;

 private:
  std::string previous_;
};

// Populates gradients of every node reachable from root. Throws ContractError
// if root is not a single element or was produced without recording.
void backward(const Var& root);

// Max over elements of |analytic - numeric| / max(1e-8, |numeric|), using
// central differences with step h. x must be float64.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                  double h = 1e-5);

}  // namespace smatch::ad
