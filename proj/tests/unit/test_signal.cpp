#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "suite.hpp"

#include "etts/checks/fixtures.hpp"
#include "etts/error.hpp"
#include "etts/signal/corpus.hpp"
#include "etts/signal/mel.hpp"
#include "etts/signal/wav.hpp"

using namespace etts;

TEST_CASE("signal properties") { run_suite(checks::signal_checks()); }

TEST_CASE("pcm16 conversion saturates") {
    CHECK(signal::to_pcm16(1.0f) == 32767);
    CHECK(signal::to_pcm16(-1.0f) == -32768);
    CHECK(signal::to_pcm16(0.0f) == 0);
    CHECK(signal::from_pcm16(-32768) == -1.0f);
}

TEST_CASE("wav round trip and errors") {
    checks::TempDir dir("unit_wav");
    signal::Waveform w{{0.0f, 0.5f, -0.25f, 0.125f}, 16000};
    signal::save_wav(dir.path() / "a.wav", w);
    auto back = signal::load_wav(dir.path() / "a.wav");
    CHECK(back.samples == w.samples);
    CHECK(back.sample_rate == 16000);
    CHECK_THROWS_AS(signal::load_wav(dir.path() / "absent.wav"), MissingPathError);
    signal::Waveform bad{{1.5f}, 16000};
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("mel config validation") {
    signal::MelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.num_frames(800) == 1);
    CHECK(cfg.num_frames(1000) == 2);
    cfg.hop = 2000;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    signal::MelConfig high;
    high.fmax = 9000.0;
    CHECK_THROWS_AS(high.validate(), ConfigError);
}

TEST_CASE("intonation tags parse") {
    CHECK(signal::parse_intonation(signal::to_string(signal::IntonationTag::yes_no_question)) ==
          signal::IntonationTag::yes_no_question);
    CHECK_THROWS(signal::parse_intonation("exclamation"));
}
