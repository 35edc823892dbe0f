#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cylk {

/// Runs `cylk <synth|track|train|eval|gradcheck> ...`. args excludes the
/// program name. Returns 0 on success, 1 on a usage error (help goes to err),
/// 2 on a runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cylk
