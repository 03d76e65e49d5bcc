// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace smatch::cli {

// Exit codes: 0 success, 2 usage, 3 input, 4 format, 5 contract or shape,
// 6 resource, 1 anything else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace smatch::cli
