#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace vap::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
    (void)args;
    (void)out;
    err << "not yet implemented\n";
    return 2;
}

} // namespace vap::cli
