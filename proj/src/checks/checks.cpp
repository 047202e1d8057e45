#include "etts/checks/checks.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace etts::checks {

void expect(bool condition, const std::string& what) {
    if (!condition) throw CheckFailure(what);
}

void expect_near(double actual, double expected, double tol, const std::string& what) {
    if (!(std::abs(actual - expected) <= tol)) {
        throw CheckFailure(what + ": got " + fmt(actual) + ", expected " + fmt(expected) + " +- " + fmt(tol));
    }
}

std::string fmt(double value) {
    std::ostringstream s;
    s << std::setprecision(10) << value;
    return s.str();
}

CheckResult run_check(const Check& check) {
    CheckResult r;
    r.name = check.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        r.detail = check.run();
        r.passed = true;
    } catch (const std::exception& e) {
        r.detail = e.what();
        r.passed = false;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::vector<CheckResult> run_checks(const std::vector<Check>& checks, std::ostream& out) {
    std::vector<CheckResult> results;
    for (const auto& c : checks) {
        auto r = run_check(c);
        out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << std::fixed << std::setprecision(2) << r.seconds
            << "s)" << std::defaultfloat;
        if (!r.detail.empty()) out << " " << r.detail;
        out << std::endl;
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<Check> property_checks() {
    std::vector<Check> all;
    for (auto group : {signal_checks, acoustic_checks, adversarial_checks, vocoder_checks, schedule_checks,
                       inference_checks, cli_checks}) {
        auto g = group();
        all.insert(all.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
    }
    return all;
}

}  // namespace etts::checks
