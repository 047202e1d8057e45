#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/error.hpp"
#include "etts/schedule/schedule.hpp"

using namespace etts;

TEST_CASE("schedule properties") { run_suite(checks::schedule_checks()); }

TEST_CASE("default plan boundaries") {
    auto plan = schedule::PhasePlan::default_plan();
    CHECK(schedule::ops_at_step(plan, 1999).ops == 5);
    CHECK(schedule::ops_at_step(plan, 2000).ops == 4);
    CHECK(schedule::ops_at_step(plan, 5999).gan_enabled == false);
    CHECK(schedule::ops_at_step(plan, 6000).gan_enabled == true);
    CHECK_THROWS(schedule::ops_at_step(plan, -1));
}
