#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/error.hpp"
#include "etts/vocoder/vocoder.hpp"

using namespace etts;

TEST_CASE("vocoder properties") { run_suite(checks::vocoder_checks()); }

TEST_CASE("quantization grid") {
    vocoder::Quantization q{8};
    auto grid = q.grid(torch::kFloat64);
    CHECK(grid.size(0) == 8);
    CHECK(grid[0].item<double>() == -1.0);
    CHECK(grid[7].item<double>() == 1.0);
    auto x = torch::tensor({-2.0, 0.01, 2.0}, torch::kFloat64);
    auto qx = q.quantize(x);
    CHECK(qx[0].item<double>() == -1.0);
    CHECK(qx[2].item<double>() == 1.0);
}

TEST_CASE("vocoder config validation") {
    vocoder::VocoderConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.mixtures = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
