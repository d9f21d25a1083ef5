// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace leafnet::cli {

enum ExitCode : int { kOk = 0, kBadArgs = 2, kDataError = 3, kTrainingAborted = 4 };

/// Entry point shared by the executable and the tests; args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace leafnet::cli
