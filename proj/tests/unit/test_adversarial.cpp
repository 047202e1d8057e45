#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/adversarial/adversarial.hpp"
#include "etts/error.hpp"

using namespace etts;

TEST_CASE("adversarial properties") { run_suite(checks::adversarial_checks()); }

TEST_CASE("discriminator config validation") {
    adversarial::DiscriminatorConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.kernel = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    adversarial::DiscriminatorConfig none;
    none.channels.clear();
    CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("eval mode scores do not move the power iteration") {
    torch::manual_seed(1);
    adversarial::SNConv1d conv(3, 4, 3, 1, 1);
    conv->eval();
    auto x = torch::randn({1, 3, 10});
    auto a = conv->forward(x);
    auto b = conv->forward(x);
    CHECK(torch::equal(a, b));
}
