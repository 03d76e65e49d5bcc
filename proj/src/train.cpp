// SPDX-License-Identifier: Apache-2.0
#include "smatch/train.hpp"

#include <cmath>

#include "smatch/errors.hpp"
#include "smatch/ops.hpp"

namespace smatch {

double StepDecay::at(std::size_t iteration) const {
  if (step_size == 0) throw ContractError("step_size must be positive");
  return base * std::pow(factor, double(iteration / step_size));
}

void Adam::step(CorrespondenceNet& net, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_)), c2 = 1.0 - std::pow(beta2_, double(t_));
  for (const Parameter& p : std::vector<Parameter>(net.parameters())) {
    const auto g = p.var.grad();
    if (!g) continue;
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    const Tensor& x = p.var.value();
    m.resize(x.numel(), 0.0);
    v.resize(x.numel(), 0.0);
    std::vector<double> nx(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < nx.size(); ++i) {
      const double gi = (*g)[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      nx[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    net.set_parameter(p.name, Tensor(x.shape(), std::move(nx), x.dtype()));
  }
}

std::map<int, MatchPrediction> predict_pair(const CorrespondenceNet& net, const ImagePair& pair,
                                            const MatchOptions& opt) {
  const FeaturePyramid s = net.forward(ad::Var::constant(pair.src.to(net.dtype())));
  const FeaturePyramid t = net.forward(ad::Var::constant(pair.tgt.to(net.dtype())));
  return match_pyramid(s, t, pair.annotation.src, opt);
}

std::map<int, KeypointSet> predicted_keypoints(const std::map<int, MatchPrediction>& preds,
                                               const PairAnnotation& ann) {
  std::map<int, KeypointSet> out;
  for (const auto& [stride, p] : preds) {
    KeypointSet k;
    k.height = ann.tgt.height;
    k.width = ann.tgt.width;
    k.points.assign(ann.src.size(), Point{});
    k.visible.assign(ann.src.size(), false);
    const auto px = p.pixel_points();
    for (std::size_t i = 0; i < p.size(); ++i) {
      k.points[p.keypoints[i]] = px[i];
      k.visible[p.keypoints[i]] = true;
    }
    out.emplace(stride, std::move(k));
  }
  return out;
}

std::map<int, std::vector<KeypointSet>> evaluate(const CorrespondenceNet& net,
                                                 const std::vector<ImagePair>& pairs,
                                                 const MatchOptions& opt) {
  ad::TapeScope off(false);
  std::map<int, std::vector<KeypointSet>> out;
  for (const ImagePair& p : pairs)
    for (auto& [s, k] : predicted_keypoints(predict_pair(net, p, opt), p.annotation))
      out[s].push_back(std::move(k));
  return out;
}

std::vector<EpochLog> train(CorrespondenceNet& net, const std::vector<ImagePair>& pairs,
                            const TrainConfig& cfg, const std::vector<ImagePair>* val,
                            const EpochCallback& on_epoch) {
  if (pairs.empty()) throw InputError("no training pairs");
  if (cfg.batch == 0) throw ContractError("batch size must be positive");
  for (const ImagePair& p : pairs) p.annotation.validate();
  MatchOptions mopt = cfg.match;
  mopt.strides = cfg.loss_strides;

  Adam adam;
  std::vector<EpochLog> logs;
  std::size_t iteration = 0;
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    double lr = cfg.schedule.at(iteration);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
      ad::TapeScope on(true);
      ad::Var total;
      for (std::size_t b = b0; b < b1; ++b) {
        const ImagePair& pair = pairs[order[b]];
        const PairAnnotation ann = jointly_visible(pair.annotation);
        ad::Var loss;
        {
          ad::PhaseScope phase("decoder");
          const FeaturePyramid s = net.forward(ad::Var::constant(pair.src.to(net.dtype())));
          const FeaturePyramid t = net.forward(ad::Var::constant(pair.tgt.to(net.dtype())));
          auto preds = match_pyramid(s, t, ann.src, mopt);
          ad::PhaseScope lphase("loss");
          loss = multiscale_loss(preds, ann.tgt, cfg.loss_strides);
        }
        loss_sum += loss.value().item();
        ++loss_count;
        total = total.node() ? ad::add(total, loss) : loss;
      }
      lr = cfg.schedule.at(iteration);
      if (total.node() && !total.is_leaf()) {
        ad::backward(ad::scale(total, 1.0 / double(b1 - b0)));
        adam.step(net, lr);
      }
      ++iteration;
    }
    EpochLog log{epoch, loss_count ? loss_sum / double(loss_count) : 0.0, lr, -1.0};
    if (val && !val->empty()) {
      MatchOptions eopt = cfg.match;
      eopt.strides = {4};
      const auto pred = evaluate(net, *val, eopt);
      std::vector<KeypointSet> gt;
      for (const ImagePair& p : *val) gt.push_back(jointly_visible(p.annotation).tgt);
      log.pck = pck(pred.at(4), gt, 0.1, PckReference::image).aggregate;
    }
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

}  // namespace smatch
