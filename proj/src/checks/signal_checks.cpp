#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/error.hpp"
#include "etts/signal/corpus.hpp"
#include "etts/signal/mel.hpp"
#include "etts/signal/wav.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace fs = std::filesystem;

namespace etts::checks {

namespace {

using signal::Waveform;

Waveform sine(double hz, double seconds, double amplitude, int sr = 16000) {
    Waveform w;
    w.sample_rate = sr;
    const auto n = static_cast<std::size_t>(seconds * sr);
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        w.samples[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * hz * i / sr));
    }
    return w;
}

signal::Manifest write_corpus(const fs::path& dir, const std::vector<Waveform>& waves) {
    signal::Manifest m;
    m.base_dir = dir;
    for (std::size_t i = 0; i < waves.size(); ++i) {
        const auto name = "u" + std::to_string(i) + ".wav";
        signal::save_wav(dir / name, waves[i]);
        m.utterances.push_back({"u" + std::to_string(i), {"a"}, name, signal::IntonationTag::statement});
    }
    return m;
}

}  // namespace

std::vector<Check> signal_checks() {
    std::vector<Check> c;

    c.push_back({"signal.wav_silence", [] {
        TempDir dir("wav");
        Waveform w;
        w.samples.assign(16, 0.0f);
        signal::save_wav(dir.path() / "s.wav", w);
        auto r = signal::load_wav(dir.path() / "s.wav");
        expect(r.samples.size() == 16, "16 samples expected");
        for (float s : r.samples) expect(s == 0.0f, "silence must load as zeros");
        return std::string("16 zeros");
    }});

    c.push_back({"signal.wav_scaling", [] {
        TempDir dir("wav");
        Waveform w;
        w.samples = {signal::from_pcm16(32767)};
        signal::save_wav(dir.path() / "s.wav", w);
        auto r = signal::load_wav(dir.path() / "s.wav");
        expect_near(r.samples.at(0), 32767.0 / 32768.0, 0.0, "max PCM16 sample");
        return fmt(r.samples[0]);
    }});

    c.push_back({"signal.wav_round_trip", [] {
        TempDir dir("wav");
        std::mt19937_64 rng(11);
        std::uniform_int_distribution<int> pcm(-32768, 32767);
        for (int trial = 0; trial < 5; ++trial) {
            Waveform w;
            w.sample_rate = 8000 + 4000 * trial;
            std::vector<std::int16_t> ref(257 + 1000 * trial);
            for (auto& v : ref) v = static_cast<std::int16_t>(pcm(rng));
            for (auto v : ref) w.samples.push_back(signal::from_pcm16(v));
            signal::save_wav(dir.path() / "r.wav", w);
            auto r = signal::load_wav(dir.path() / "r.wav");
            expect(r.sample_rate == w.sample_rate, "sample rate must round-trip");
            expect(r.samples.size() == ref.size(), "length must round-trip");
            for (std::size_t i = 0; i < ref.size(); ++i) {
                expect(signal::to_pcm16(r.samples[i]) == ref[i], "PCM16 value changed at " + std::to_string(i));
            }
        }
        return std::string("5 random buffers");
    }});

    c.push_back({"signal.mel_silence", [] {
        signal::MelConfig cfg;
        Waveform w;
        w.samples.assign(16000, 0.0f);
        auto mel = signal::wav_to_mel(w, cfg);
        expect(mel.num_frames() == 77, "M = 77 expected, got " + std::to_string(mel.num_frames()));
        const double floor = std::log(cfg.log_floor);
        expect_near(mel.frames.min().item<double>(), floor, 1e-6, "min entry");
        expect_near(mel.frames.max().item<double>(), floor, 1e-6, "max entry");
        return std::string("M = 77");
    }});

    c.push_back({"signal.mel_frame_count", [] {
        signal::MelConfig cfg;
        std::mt19937_64 rng(3);
        std::uniform_int_distribution<int> len(cfg.win, 6000);
        for (int i = 0; i < 20; ++i) {
            Waveform w;
            w.samples.assign(static_cast<std::size_t>(len(rng)), 0.01f);
            const auto expected = 1 + (static_cast<std::int64_t>(w.samples.size()) - cfg.win) / cfg.hop;
            expect(signal::wav_to_mel(w, cfg).num_frames() == expected, "frame count formula");
        }
        Waveform short_wave;
        short_wave.samples.assign(static_cast<std::size_t>(cfg.win - 1), 0.0f);
        bool threw = false;
        try {
            signal::wav_to_mel(short_wave, cfg);
        } catch (const DataError&) {
            threw = true;
        }
        expect(threw, "a waveform shorter than one window must be rejected");
        return std::string("20 random lengths");
    }});

    c.push_back({"signal.filterbank_shape", [] {
        signal::MelConfig cfg;
        auto fb = signal::mel_filterbank(cfg);
        expect(fb.min().item<double>() >= 0.0, "filterbank must be non-negative");
        expect((fb.sum(1) > 0).all().item<bool>(), "every band needs a nonzero weight");
        return std::string("80 bands");
    }});

    c.push_back({"signal.sine_band_argmax", [] {
        signal::MelConfig cfg;
        const auto centers = signal::mel_band_centers(cfg);
        for (int k : {5, 20, 40, 60, 75}) {
            auto mel = signal::wav_to_mel(sine(centers[k], 0.5, 0.5), cfg);
            const auto arg = mel.frames.mean(0).argmax().item<std::int64_t>();
            expect(arg == k, "band " + std::to_string(k) + " sine peaked at band " + std::to_string(arg));
        }
        return std::string("bands 5 20 40 60 75");
    }});

    c.push_back({"signal.amplitude_doubling", [] {
        signal::MelConfig cfg;
        Waveform w;
        std::mt19937_64 rng(5);
        std::normal_distribution<double> n(0.0, 0.1);
        for (int i = 0; i < 8000; ++i) w.samples.push_back(static_cast<float>(n(rng)));
        Waveform w2 = w;
        for (auto& s : w2.samples) s *= 2.0f;
        auto a = signal::wav_to_mel(w, cfg).frames.to(torch::kFloat64);
        auto b = signal::wav_to_mel(w2, cfg).frames.to(torch::kFloat64);
        auto unclamped = a > std::log(cfg.log_floor) + 1e-3;
        auto diff = (b - a).masked_select(unclamped) - std::log(2.0);
        expect(unclamped.sum().item<std::int64_t>() > 0, "no unclamped entries");
        expect_near(diff.abs().max().item<double>(), 0.0, 1e-4, "log-mel shift");
        return "max deviation " + fmt(diff.abs().max().item<double>());
    }});

    c.push_back({"signal.toy_corpus_determinism", [] {
        TempDir a("corpus"), b("corpus");
        signal::MelConfig cfg;
        signal::generate_toy_corpus(5, 7, cfg, a.path());
        signal::generate_toy_corpus(5, 7, cfg, b.path());
        auto diff = compare_trees(a.path(), b.path());
        expect(diff.empty(), diff);
        return std::string("byte-identical");
    }});

    c.push_back({"signal.toy_corpus_empty", [] {
        TempDir a("corpus");
        auto m = signal::generate_toy_corpus(0, 7, signal::MelConfig{}, a.path());
        expect(m.empty(), "manifest must be empty");
        for (const auto& e : fs::directory_iterator(a.path())) {
            expect(e.path().extension() != ".wav", "no audio expected");
        }
        return std::string("empty");
    }});

    c.push_back({"signal.token_formants", [] {
        auto w = signal::render_tokens({"a"}, false, 16000);
        const auto n = static_cast<std::int64_t>(w.samples.size());
        auto x = torch::from_blob(w.samples.data(), {n}, torch::kFloat32).to(torch::kFloat64);
        auto mag = torch::fft::rfft(x).abs();
        const double bin_hz = 16000.0 / static_cast<double>(n);
        auto peak = [&](double lo_hz, double hi_hz) {
            const auto lo = static_cast<std::int64_t>(lo_hz / bin_hz);
            const auto hi = static_cast<std::int64_t>(hi_hz / bin_hz);
            return (lo + mag.slice(0, lo, hi).argmax().item<std::int64_t>()) * bin_hz;
        };
        const double f1 = peak(100.0, 1000.0);
        const double f2 = peak(1000.0, 3000.0);
        expect(std::abs(f1 - 500.0) <= bin_hz, "first formant at " + fmt(f1));
        expect(std::abs(f2 - 1500.0) <= bin_hz, "second formant at " + fmt(f2));
        return "peaks " + fmt(f1) + " / " + fmt(f2) + " Hz";
    }});

    c.push_back({"signal.f0_sine_corpus", [] {
        TempDir dir("f0");
        auto m = write_corpus(dir.path(), {sine(220.0, 1.0, 0.5), sine(220.0, 0.5, 0.3)});
        auto stats = signal::corpus_stats(m, signal::MelConfig{});
        expect_near(stats.mean_f0, 220.0, 5.0, "mean f0");
        expect(stats.f0_variance < 1.0, "f0 variance " + fmt(stats.f0_variance));
        return "mean f0 " + fmt(stats.mean_f0);
    }});

    c.push_back({"signal.f0_silence_rejected", [] {
        TempDir dir("f0");
        Waveform w;
        w.samples.assign(8000, 0.0f);
        auto m = write_corpus(dir.path(), {w});
        try {
            signal::corpus_stats(m, signal::MelConfig{});
        } catch (const DataError& e) {
            expect(std::string(e.what()).find("no voiced frames") != std::string::npos, e.what());
            return std::string("rejected");
        }
        throw CheckFailure("silence corpus must raise");
    }});

    c.push_back({"signal.f0_ramp_variance", [] {
        TempDir flat_dir("f0"), ramp_dir("f0");
        const std::vector<std::string> tokens{"a", "o", "e", "a", "u"};
        auto flat = write_corpus(flat_dir.path(), {signal::render_tokens(tokens, false, 16000)});
        auto ramp = write_corpus(ramp_dir.path(), {signal::render_tokens(tokens, true, 16000)});
        auto a = signal::corpus_stats(flat, signal::MelConfig{});
        auto b = signal::corpus_stats(ramp, signal::MelConfig{});
        expect(b.f0_variance > a.f0_variance, "ramped " + fmt(b.f0_variance) + " vs flat " + fmt(a.f0_variance));
        return "flat " + fmt(a.f0_variance) + " ramped " + fmt(b.f0_variance);
    }});

    return c;
}

}  // namespace etts::checks
