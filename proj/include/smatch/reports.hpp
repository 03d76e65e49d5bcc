// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "smatch/bench.hpp"
#include "smatch/metrics.hpp"
#include "smatch/train.hpp"

namespace smatch {

// Shortest decimal that parses back to the same double.
std::string format_number(double v);

// Line-oriented text: one "key=value" per line, keys prefixed with `scope.`
// when scope is non-empty.
std::string report_text(const PckReport& r, const std::string& scope = "pck");
std::string report_text(const FusionReport& r, const std::string& scope = "fusion");
std::string report_text(const MemoryReport& r, const std::string& scope = "memory");
std::string report_text(const EpochLog& l, const std::string& scope = "epoch");

// Structured records, one JSON object per line. PCK emits one record per
// evaluated pair (pair_ids indexed like the inputs given to pck, may be
// empty) followed by an aggregate record; fusion emits one per resolution.
std::string report_records(const PckReport& r, const std::vector<std::string>& pair_ids = {});
std::string report_records(const FusionReport& r);
std::string report_records(const MemoryReport& r);
std::string report_records(const EpochLog& l);

// Fixed-width table of the three configurations, with the peak-byte and
// tape-element reductions of the last row against the first.
std::string memory_table(const std::vector<MemoryReport>& rows);

}  // namespace smatch
