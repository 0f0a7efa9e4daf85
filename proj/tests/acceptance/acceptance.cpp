#include "checks.hpp"

#include <iostream>

int main() {
    int failed = 0;
    for (const auto& r : mcr::checks::run_acceptance()) {
        std::cout << mcr::checks::format_line(r) << std::endl;
        failed += r.passed ? 0 : 1;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
              << std::endl;
    return failed == 0 ? 0 : 1;
}
