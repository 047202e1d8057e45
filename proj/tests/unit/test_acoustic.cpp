#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/acoustic/loss.hpp"
#include "etts/acoustic/model.hpp"
#include "etts/error.hpp"

using namespace etts;

TEST_CASE("acoustic properties") { run_suite(checks::acoustic_checks()); }

TEST_CASE("decoder step count") {
    CHECK(acoustic::decoder_steps(20, 5) == 4);
    CHECK(acoustic::decoder_steps(21, 5) == 5);
    CHECK(acoustic::decoder_steps(1, 2) == 1);
}

TEST_CASE("phoneme inventory") {
    acoustic::PhonemeInventory inv({"a", "b", "c"});
    CHECK(inv.size() == 3);
    CHECK(inv.encode({"c", "a"}) == std::vector<std::int64_t>{2, 0});
    CHECK_THROWS_AS(inv.encode({"z"}), DataError);
}

TEST_CASE("acoustic config validation") {
    acoustic::AcousticConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.max_ops = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
