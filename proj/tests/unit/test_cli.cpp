#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/checks/fixtures.hpp"
#include "etts/cli/config.hpp"
#include "etts/cli/pipeline.hpp"
#include "etts/error.hpp"

using namespace etts;

TEST_CASE("cli properties") { run_suite(checks::cli_checks()); }

TEST_CASE("overrides") {
    auto doc = cli::to_json(cli::RunConfig{});
    cli::apply_override(doc, "train_teacher.steps=17");
    cli::apply_override(doc, "synthesis.scheme=prior_sample");
    auto cfg = cli::from_json(doc);
    CHECK(cfg.train_teacher.steps == 17);
    CHECK(cfg.synthesis.scheme == "prior_sample");
    CHECK_THROWS_AS(cli::apply_override(doc, "no_such_key=1"), ConfigError);
    CHECK_THROWS_AS(cli::apply_override(doc, "missing equals"), ConfigError);
}

TEST_CASE("validation rejects bad values") {
    cli::RunConfig cfg;
    cfg.propagate();
    CHECK_NOTHROW(cfg.validate());
    cfg.train_teacher.polyak_decay = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("synthesis mel l1 pads the shorter input") {
    auto a = torch::zeros({3, 2});
    auto b = torch::zeros({5, 2});
    CHECK(cli::synthesis_mel_l1(a, b, 0.0) == doctest::Approx(0.0));
    CHECK(cli::synthesis_mel_l1(a, b, -1.0) == doctest::Approx(0.4));
}
