// SPDX-License-Identifier: Apache-2.0
#include "smatch/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "smatch/errors.hpp"

namespace smatch::ad {
namespace {

struct TapeState {
  bool recording = true;
  std::string phase = "default";
  TapeCounters counters;
};

TapeState& state() {
  thread_local TapeState s;
  return s;
}

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return Var(std::move(node));
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

const Tensor& Var::value() const {
  if (!node_) throw ContractError("use of an undefined Var");
  return node_->value;
}

const std::string& Var::op() const {
  if (!node_) throw ContractError("use of an undefined Var");
  return node_->op;
}

std::optional<Tensor> Var::grad() const {
  if (!node_ || node_->grad.empty()) return std::nullopt;
  return Tensor(node_->value.shape(), node_->grad, DType::f64);
}

Var make_result(std::string op, Tensor value, std::vector<Var> parents,
                BackwardFn backward, std::uint64_t saved_elements) {
  TapeState& s = state();
  bool needs_grad = false;
  for (const Var& p : parents) needs_grad = needs_grad || p.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  if (s.recording && needs_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(parents.size());
    for (Var& p : parents) node->parents.push_back(p.node_);
    const std::uint64_t counted = node->value.numel() + saved_elements;
    s.counters.elements += counted;
    s.counters.records += 1;
    s.counters.by_phase[s.phase] += counted;
  }
  return Var(std::move(node));
}

TapeScope::TapeScope(bool recording) : previous_(state().recording) {
  state().recording = recording;
}

TapeScope::~TapeScope() { state().recording = previous_; }

bool TapeScope::recording() noexcept { return state().recording; }

const TapeCounters& TapeScope::counters() noexcept { return state().counters; }

void TapeScope::reset_counters() noexcept { state().counters = TapeCounters{}; }

PhaseScope::PhaseScope(std::string phase) : previous_(state().phase) {
  state().phase = std::move(phase);
}

PhaseScope::~PhaseScope() { state().phase = std::move(previous_); }

const std::string& PhaseScope::current() noexcept { return state().phase; }

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward on an undefined Var");
  if (root.numel() != 1) {
    throw ContractError("backward needs a scalar root, got shape " +
                        shape_string(root.shape()));
  }
  if (!root.requires_grad()) {
    throw ContractError(
        "backward root was not recorded on the tape (recording disabled or no "
        "input requires a gradient)");
  }

  // Iterative post-order DFS gives a topological order with parents first.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.clear();
  root.node()->grad.assign(1, 1.0);

  std::vector<GradSlot> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->parents.empty() || n->grad.empty()) continue;
    slots.assign(n->parents.size(), GradSlot{});
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      if (p->grad.empty()) p->grad.assign(p->value.numel(), 0.0);
      slots[i] = GradSlot{p->grad.data(), p->grad.size()};
    }
    n->backward(n->grad, n->value, slots);
  }
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
  if (x.dtype() != DType::f64) throw ContractError("grad_check requires a float64 input");
  if (!(h > 0.0)) throw ContractError("grad_check step must be positive");

  std::vector<double> analytic(x.numel(), 0.0);
  {
    TapeScope record(true);
    Var leaf = Var::leaf(x, true);
    Var out = f(leaf);
    if (out.numel() != 1) throw ContractError("grad_check function must return a scalar");
    if (out.requires_grad()) {
      backward(out);
      if (auto g = leaf.grad()) analytic.assign(g->values().begin(), g->values().end());
    }
  }

  TapeScope no_record(false);
  std::vector<double> probe(x.values().begin(), x.values().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(Var::constant(Tensor(x.shape(), probe, DType::f64))).value().item();
    probe[i] = saved - h;
    const double down =
        f(Var::constant(Tensor(x.shape(), probe, DType::f64))).value().item();
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    if (!(err <= worst)) worst = std::isnan(err) ? err : std::max(worst, err);
    if (std::isnan(worst)) return worst;
  }
  return worst;
}

}  // namespace smatch::ad
