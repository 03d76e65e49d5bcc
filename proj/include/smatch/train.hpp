// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "smatch/datasets.hpp"
#include "smatch/matcher.hpp"
#include "smatch/metrics.hpp"
#include "smatch/net.hpp"

namespace smatch {

// Learning rate base * factor^floor(iteration / step_size).
struct StepDecay {
  double base = 1e-3;
  std::size_t step_size = 100;
  double factor = 0.95;
  double at(std::size_t iteration) const;
};

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  // Applies one update from the gradients currently held by net's parameters.
  // Parameters without a gradient are left untouched.
  void step(CorrespondenceNet& net, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch = 4;
  StepDecay schedule{2e-3, 100, 0.95};
  MatchOptions match;  // mode, k and temperature used for the loss
  std::vector<int> loss_strides{16, 8, 4};
  std::uint64_t seed = 0;  // order of pairs within each epoch
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double pck = -1.0;  // stride-4 PCK@0.1 on the validation pairs, -1 without them
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Forward pass of a pair through net and matching at the requested strides.
std::map<int, MatchPrediction> predict_pair(const CorrespondenceNet& net, const ImagePair& pair,
                                            const MatchOptions& opt);
// Pixel predictions of every stride as keypoint sets aligned with the source.
std::map<int, KeypointSet> predicted_keypoints(const std::map<int, MatchPrediction>& preds,
                                               const PairAnnotation& ann);

// Predicted keypoints for each pair at each stride, computed off the tape.
std::map<int, std::vector<KeypointSet>> evaluate(const CorrespondenceNet& net,
                                                 const std::vector<ImagePair>& pairs,
                                                 const MatchOptions& opt);

std::vector<EpochLog> train(CorrespondenceNet& net, const std::vector<ImagePair>& pairs,
                            const TrainConfig& cfg, const std::vector<ImagePair>* val = nullptr,
                            const EpochCallback& on_epoch = {});

}  // namespace smatch
