#pragma once

#include "etts/checks/checks.hpp"

#include "doctest.h"

#include <string>
#include <vector>

/// Runs a property group, one doctest assertion per property.
inline void run_suite(const std::vector<etts::checks::Check>& checks) {
    for (const auto& c : checks) {
        const auto r = etts::checks::run_check(c);
        INFO(r.name << ": " << r.detail);
        CHECK_MESSAGE(r.passed, r.name);
    }
}
