#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace penet {

/// Exit status: 0 ok, 1 diagnostics or model errors, 2 inference errors.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace penet
