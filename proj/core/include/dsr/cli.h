#pragma once

#include <string>
#include <vector>

namespace dsr::cli {

// Entry point shared by the binary and the test suite.
// 0 = success, 1 = runtime failure, 2 = usage error.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

}  // namespace dsr::cli
