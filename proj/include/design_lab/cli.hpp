#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace design_lab {

// Exit codes: 0 ok, 1 runtime/IO failure, 2 usage error, 3 replay found divergences.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace design_lab
