#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace camlmlab {

// Runs one command. Exit codes: 0 ok, 2 config/usage error, 3 I/O error,
// 4 safety refusal (e.g. overwriting a non-empty run directory).
int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
             std::ostream& err = std::cerr);

}  // namespace camlmlab
