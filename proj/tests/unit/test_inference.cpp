#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/error.hpp"
#include "etts/inference/inference.hpp"

using namespace etts;

TEST_CASE("inference properties") { run_suite(checks::inference_checks()); }

TEST_CASE("missing latent bank") {
    CHECK_THROWS_AS(inference::load_latent_bank("/nonexistent/bank.bin"), MissingPathError);
}
