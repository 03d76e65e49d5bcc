// SPDX-License-Identifier: Apache-2.0
#include "smatch/bench.hpp"

#include <algorithm>
#include <cmath>

#include "smatch/errors.hpp"
#include "smatch/metrics.hpp"
#include "smatch/ops.hpp"

namespace smatch {
namespace {

struct Step {
  MatchPrediction pred;
  ad::Var loss;
};

Step loss_step(const CorrespondenceNet& net, const ImagePair& pair, MatchMode mode,
               const BenchWorkload& w) {
  FeaturePyramid s, t;
  {
    ad::PhaseScope phase("decoder");
    s = net.forward(ad::Var::constant(pair.src.to(net.dtype())));
    t = net.forward(ad::Var::constant(pair.tgt.to(net.dtype())));
  }
  MatchOptions opt;
  opt.k = w.k;
  opt.temperature = w.temperature;
  opt.mode = mode;
  opt.dense_element_budget = w.dense_element_budget;
  Step st{match_at_stride(s.at(4), t.at(4), pair.annotation.src, 4, opt), {}};
  ad::PhaseScope phase("loss");
  st.loss = stride_loss(st.pred, pair.annotation.tgt);
  return st;
}

ImagePair workload_pair(const BenchWorkload& w) {
  ImagePair pair = generate_image_pair(w.data);
  KeypointSet& src = pair.annotation.src;
  src.visible.assign(src.size(), true);
  for (std::size_t i = w.max_visible; i < src.size(); ++i) src.visible[i] = false;
  pair.annotation.tgt.visible = src.visible;
  return pair;
}

}  // namespace

std::uint64_t MemoryReport::phase(const std::string& name) const {
  auto it = breakdown.find(name);
  return it == breakdown.end() ? 0 : it->second;
}

MemoryReport measure(MatchMode mode, const BenchWorkload& w) {
  const CorrespondenceNet net(w.encoder, w.decoder, w.dtype);
  const ImagePair pair = workload_pair(w);
  const std::size_t h = w.data.height / 4, wd = w.data.width / 4;
  if (mode == MatchMode::dense_baseline) {
    const std::uint64_t m = std::uint64_t(h) * wd;
    if (m * m > w.dense_element_budget)
      throw ResourceError("dense baseline exceeds the element budget of " +
                              std::to_string(w.dense_element_budget),
                          m * m);
  }

  MemoryReport r;
  r.label = w.label;
  r.mode = mode;
  r.n = pair.annotation.src.visible_count();
  r.map_h = h;
  r.map_w = wd;
  r.k = mode == MatchMode::sparse_plus_window ? w.k : 0;
  {
    ad::TapeScope on(true);
    ad::TapeScope::reset_counters();
    const std::uint64_t base = heap_bytes_in_use();
    reset_heap_peak();
    Step st = loss_step(net, pair, mode, w);
    if (!st.loss.is_leaf()) ad::backward(st.loss);
    r.peak_bytes = heap_peak_bytes() - std::min(base, heap_peak_bytes());
    const auto& c = ad::TapeScope::counters();
    r.tape_elements = c.elements;
    r.records = c.records;
    r.breakdown = c.by_phase;
    if (mode == MatchMode::sparse_plus_window)
      for (const Cell& o : st.pred.origins)
        for (std::size_t y = 0; y < w.k; ++y)
          for (std::size_t x = 0; x < w.k; ++x) {
            const std::ptrdiff_t fy = o.y + std::ptrdiff_t(y), fx = o.x + std::ptrdiff_t(x);
            r.window_cells_valid += fx >= 0 && fy >= 0 && fx < std::ptrdiff_t(wd) && fy < std::ptrdiff_t(h);
          }
  }
  return r;
}

double reduction_ratio(const MemoryReport& a, const MemoryReport& b) {
  if (a.peak_bytes == 0) throw ContractError("reduction_ratio with zero reference peak");
  return 1.0 - double(b.peak_bytes) / double(a.peak_bytes);
}

double element_reduction(const MemoryReport& a, const MemoryReport& b) {
  if (a.tape_elements == 0) throw ContractError("element_reduction with an empty reference tape");
  return 1.0 - double(b.tape_elements) / double(a.tape_elements);
}

double gradient_discrepancy(const BenchWorkload& w) {
  const CorrespondenceNet net(w.encoder, w.decoder, w.dtype);
  const ImagePair pair = workload_pair(w);
  std::map<std::string, Tensor> first;
  double worst = 0.0;
  ad::TapeScope on(true);
  for (MatchMode mode : {MatchMode::sparse_only, MatchMode::sparse_plus_window}) {
    Step st = loss_step(net, pair, mode, w);
    ad::backward(st.loss);
    for (const Parameter& p : net.parameters()) {
      const Tensor g = p.var.grad().value_or(Tensor(p.var.shape()));
      auto it = first.find(p.name);
      if (it == first.end()) {
        first.emplace(p.name, g);
        continue;
      }
      double scale = 0.0;
      for (double v : it->second.values()) scale = std::max(scale, std::abs(v));
      for (std::size_t i = 0; i < g.numel(); ++i)
        worst = std::max(worst, std::abs(g[i] - it->second[i]) / std::max(scale, 1e-12));
    }
  }
  return worst;
}

}  // namespace smatch
