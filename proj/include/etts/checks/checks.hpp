#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace etts::checks {

/// Raised by a check whose property does not hold.
class CheckFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void expect(bool condition, const std::string& what);
/// |actual - expected| <= tol.
void expect_near(double actual, double expected, double tol, const std::string& what);

/// A named property; `run` returns a short detail string or throws CheckFailure.
struct Check {
    std::string name;
    std::function<std::string()> run;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

CheckResult run_check(const Check& check);
/// Runs every check, printing one `PASS|FAIL name (seconds) detail` line each.
std::vector<CheckResult> run_checks(const std::vector<Check>& checks, std::ostream& out);

/// The full invariant suite run by `etts selfcheck`, grouped by module.
std::vector<Check> signal_checks();
std::vector<Check> acoustic_checks();
std::vector<Check> adversarial_checks();
std::vector<Check> vocoder_checks();
std::vector<Check> schedule_checks();
std::vector<Check> inference_checks();
std::vector<Check> cli_checks();
std::vector<Check> property_checks();

/// Formats a double with enough digits to be unambiguous in reports.
std::string fmt(double value);

}  // namespace etts::checks
