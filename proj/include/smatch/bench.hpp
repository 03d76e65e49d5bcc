// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "smatch/datasets.hpp"
#include "smatch/matcher.hpp"
#include "smatch/net.hpp"

namespace smatch {

struct MemoryReport {
  std::string label;  // workload label
  MatchMode mode = MatchMode::sparse_plus_window;
  std::uint64_t tape_elements = 0;
  std::uint64_t records = 0;
  std::uint64_t peak_bytes = 0;  // heap high-water mark during the step, best effort
  std::map<std::string, std::uint64_t> breakdown;  // per phase, sums to tape_elements
  std::size_t n = 0, map_h = 0, map_w = 0, k = 0;
  std::uint64_t window_cells_valid = 0;  // sum over keypoints of in-bounds window cells

  std::uint64_t phase(const std::string& name) const;
};

struct BenchWorkload {
  std::string label = "desk";
  SyntheticSpec data{.seed = 7, .height = 256, .width = 256, .n_keypoints = 20};
  EncoderConfig encoder{.in_channels = 3, .stage_channels = {8, 16, 32, 32}, .seed = 1};
  DecoderConfig decoder{.width = 16, .use_skip = false, .seed = 2};
  DType dtype = DType::f32;
  std::size_t k = kDefaultWindow;
  double temperature = kDefaultTemperature;
  std::uint64_t dense_element_budget = std::uint64_t{1} << 28;
  // Keypoints beyond this many are marked invisible (0 gives an empty workload).
  std::size_t max_visible = std::size_t(-1);
};

// One forward and backward pass of the stride-4 coordinate loss on a
// synthetic image pair under the given matching configuration.
MemoryReport measure(MatchMode mode, const BenchWorkload& w);

// 1 - b.peak_bytes / a.peak_bytes.
double reduction_ratio(const MemoryReport& a, const MemoryReport& b);
// 1 - b.tape_elements / a.tape_elements.
double element_reduction(const MemoryReport& a, const MemoryReport& b);

// Largest relative difference between parameter gradients of the
// sparse_only and sparse_plus_window losses. w.k should cover the full map.
double gradient_discrepancy(const BenchWorkload& w);

// Heap accounting behind peak_bytes: bytes currently allocated through
// operator new, and the high-water mark since the last reset.
std::uint64_t heap_bytes_in_use() noexcept;
std::uint64_t heap_peak_bytes() noexcept;
void reset_heap_peak() noexcept;

}  // namespace smatch
