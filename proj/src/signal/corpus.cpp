#include "etts/signal/corpus.hpp"

#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace etts::signal {

namespace fs = std::filesystem;

std::string to_string(IntonationTag tag) {
    return tag == IntonationTag::statement ? "statement" : "yes_no_question";
}

IntonationTag parse_intonation(const std::string& text) {
    if (text == "statement") return IntonationTag::statement;
    if (text == "yes_no_question") return IntonationTag::yes_no_question;
    throw DataError("unknown intonation tag '" + text + "'");
}

fs::path Manifest::resolve_audio(const UtteranceRecord& utt) const {
    fs::path p(utt.audio_path);
    return p.is_absolute() ? p : base_dir / p;
}

const UtteranceRecord* Manifest::find(const std::string& id) const {
    for (const auto& u : utterances) {
        if (u.id == id) return &u;
    }
    return nullptr;
}

void Manifest::validate() const {
    std::set<std::string> seen;
    for (const auto& u : utterances) {
        if (u.id.empty()) throw DataError("manifest entry with empty id");
        if (!seen.insert(u.id).second) throw DataError("duplicate utterance id '" + u.id + "'");
        if (u.phonemes.empty()) throw DataError("utterance '" + u.id + "' has no phonemes");
    }
}

Manifest read_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw MissingPathError(path.string());
    std::ifstream in(path);
    Manifest manifest;
    manifest.base_dir = path.parent_path();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 4) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated columns");
        }
        UtteranceRecord rec;
        rec.id = cols[0];
        std::stringstream ps(cols[1]);
        std::string tok;
        while (ps >> tok) rec.phonemes.push_back(tok);
        rec.audio_path = cols[2];
        rec.intonation = parse_intonation(cols[3]);
        manifest.utterances.push_back(std::move(rec));
    }
    manifest.validate();
    return manifest;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
    std::ostringstream out;
    for (const auto& u : manifest.utterances) {
        out << u.id << '\t';
        for (std::size_t i = 0; i < u.phonemes.size(); ++i) out << (i ? " " : "") << u.phonemes[i];
        out << '\t' << u.audio_path << '\t' << to_string(u.intonation) << '\n';
    }
    util::write_file_atomic(path, out.str());
}

const std::vector<TokenSpec>& toy_token_table() {
    // Voiced tokens keep formant2 an integer multiple of formant1 so that each
    // segment is periodic at formant1.
    static const std::vector<TokenSpec> table = {
        {"a", 500.0, 1500.0, 0.35, 0.15, 110.0},
        {"e", 400.0, 2000.0, 0.35, 0.12, 90.0},
        {"i", 300.0, 2400.0, 0.35, 0.10, 80.0},
        {"o", 450.0, 900.0, 0.35, 0.18, 100.0},
        {"u", 350.0, 700.0, 0.35, 0.18, 90.0},
        {"m", 250.0, 1000.0, 0.30, 0.08, 70.0},
        {"n", 280.0, 1400.0, 0.30, 0.08, 70.0},
        {"l", 380.0, 1140.0, 0.30, 0.12, 60.0},
        {"r", 420.0, 1260.0, 0.30, 0.12, 60.0},
        {"s", 4000.0, 6000.0, 0.02, 0.015, 90.0},
        {"k", 1800.0, 3600.0, 0.03, 0.02, 50.0},
        {"_", 0.0, 0.0, 0.0, 0.0, 80.0},
    };
    return table;
}

const TokenSpec& toy_token(const std::string& symbol) {
    for (const auto& t : toy_token_table()) {
        if (t.symbol == symbol) return t;
    }
    throw DataError("unknown toy token '" + symbol + "'");
}

Waveform render_tokens(const std::vector<std::string>& tokens, bool ramp, int sample_rate,
                       const ToyCorpusOptions& options) {
    std::vector<const TokenSpec*> specs;
    std::vector<std::size_t> lengths;
    std::size_t total = 0;
    for (const auto& sym : tokens) {
        specs.push_back(&toy_token(sym));
        const auto n = static_cast<std::size_t>(std::lround(specs.back()->duration_ms * 1e-3 * sample_rate));
        lengths.push_back(n);
        total += n;
    }
    Waveform wave;
    wave.sample_rate = sample_rate;
    wave.samples.assign(total, 0.0f);
    const double two_pi = 2.0 * std::numbers::pi;
    const double ramp_begin = options.ramp_start * static_cast<double>(total);
    const auto env_len = static_cast<std::size_t>(std::lround(options.envelope_ms * 1e-3 * sample_rate));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const TokenSpec& spec = *specs[k];
        double phase1 = 0.0, phase2 = 0.0;
        const std::size_t n = lengths[k];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t t = offset + i;
            double factor = 1.0;
            if (ramp && static_cast<double>(t) > ramp_begin && total > 0) {
                factor += options.pitch_ramp * (static_cast<double>(t) - ramp_begin) /
                          (static_cast<double>(total) - ramp_begin);
            }
            double env = 1.0;
            if (env_len > 0) {
                if (i < env_len) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / env_len);
                if (n - 1 - i < env_len) {
                    env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - 1 - i) / env_len));
                }
            }
            const double value = env * (spec.amplitude1 * std::sin(phase1) + spec.amplitude2 * std::sin(phase2));
            wave.samples[t] = static_cast<float>(value);
            phase1 = std::fmod(phase1 + two_pi * spec.formant1_hz * factor / sample_rate, two_pi);
            phase2 = std::fmod(phase2 + two_pi * spec.formant2_hz * factor / sample_rate, two_pi);
        }
        offset += n;
    }
    return wave;
}

Manifest generate_toy_corpus(int n_utts, std::uint64_t seed, const MelConfig& cfg,
                             const fs::path& out_dir, const ToyCorpusOptions& options) {
    cfg.validate();
    Manifest manifest;
    manifest.base_dir = out_dir;
    if (n_utts <= 0) {
        fs::create_directories(out_dir);
        write_manifest(out_dir / "manifest.tsv", manifest);
        return manifest;
    }
    const auto& table = toy_token_table();
    const std::size_t n_speech = table.size() - 1;  // everything except the pause
    std::mt19937_64 rng(seed);
    // Fixed-width integer draws: the standard distributions are not portable.
    auto uniform_int = [&rng](std::uint64_t lo, std::uint64_t hi) {
        return lo + rng() % (hi - lo + 1);
    };
    auto uniform01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    fs::create_directories(out_dir / "wavs");
    for (int u = 0; u < n_utts; ++u) {
        UtteranceRecord rec;
        std::ostringstream id;
        id << "utt_" << std::setw(4) << std::setfill('0') << u;
        rec.id = id.str();
        const auto len = uniform_int(static_cast<std::uint64_t>(options.min_tokens),
                                     static_cast<std::uint64_t>(options.max_tokens));
        for (std::uint64_t k = 0; k < len; ++k) {
            const bool interior = k > 0 && k + 1 < len;
            if (interior && uniform01() < options.pause_probability) {
                rec.phonemes.push_back(table.back().symbol);
            } else {
                rec.phonemes.push_back(table[uniform_int(0, n_speech - 1)].symbol);
            }
        }
        const bool question = uniform01() < options.question_fraction;
        rec.intonation = question ? IntonationTag::yes_no_question : IntonationTag::statement;
        auto wave = render_tokens(rec.phonemes, question, cfg.sample_rate, options);
        if (static_cast<int>(wave.size()) < cfg.win) {
            wave.samples.resize(static_cast<std::size_t>(cfg.win), 0.0f);
        }
        rec.audio_path = "wavs/" + rec.id + ".wav";
        save_wav(out_dir / rec.audio_path, wave);
        manifest.utterances.push_back(std::move(rec));
    }
    write_manifest(out_dir / "manifest.tsv", manifest);
    return manifest;
}

std::optional<double> estimate_frame_f0(std::span<const float> frame, int sample_rate,
                                        const F0Options& options) {
    const std::size_t n = frame.size();
    if (n == 0) return std::nullopt;
    double energy = 0.0;
    for (float v : frame) energy += static_cast<double>(v) * v;
    if (std::sqrt(energy / static_cast<double>(n)) < options.voicing_rms) return std::nullopt;

    const auto min_lag = static_cast<std::size_t>(std::floor(sample_rate / options.max_hz));
    const auto max_lag = std::min(n / 2, static_cast<std::size_t>(std::ceil(sample_rate / options.min_hz)));
    if (min_lag < 1 || min_lag + 2 > max_lag) return std::nullopt;

    std::vector<double> r(max_lag + 2, 0.0);
    for (std::size_t lag = min_lag - 1; lag <= max_lag + 1 && lag < n; ++lag) {
        double xy = 0.0, xx = 0.0, yy = 0.0;
        for (std::size_t t = 0; t + lag < n; ++t) {
            xy += static_cast<double>(frame[t]) * frame[t + lag];
            xx += static_cast<double>(frame[t]) * frame[t];
            yy += static_cast<double>(frame[t + lag]) * frame[t + lag];
        }
        r[lag] = (xx > 0.0 && yy > 0.0) ? xy / std::sqrt(xx * yy) : 0.0;
    }
    double best = -1.0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) best = std::max(best, r[lag]);
    if (best <= 0.0) return std::nullopt;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
        const bool peak = r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1];
        if (peak && r[lag] >= options.peak_fraction * best) {
            const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
            const double denom = a - 2.0 * b + c;
            const double shift = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
            return sample_rate / (static_cast<double>(lag) + std::clamp(shift, -0.5, 0.5));
        }
    }
    return std::nullopt;
}

CorpusStats corpus_stats(const Manifest& manifest, const MelConfig& cfg, const F0Options& options) {
    if (manifest.empty()) throw DataError("corpus_stats: empty manifest");
    cfg.validate();
    std::vector<double> f0s;
    std::vector<double> energies;
    CorpusStats stats;
    for (const auto& utt : manifest.utterances) {
        const auto wave = load_wav(manifest.resolve_audio(utt));
        const auto frames = cfg.num_frames(static_cast<std::int64_t>(wave.size()));
        for (int m = 0; m < frames; ++m) {
            std::span<const float> frame(wave.samples.data() + static_cast<std::size_t>(m) * cfg.hop,
                                         static_cast<std::size_t>(cfg.win));
            ++stats.total_frames;
            const auto f0 = estimate_frame_f0(frame, wave.sample_rate, options);
            if (!f0) continue;
            double ms = 0.0;
            for (float v : frame) ms += static_cast<double>(v) * v;
            ms /= static_cast<double>(frame.size());
            f0s.push_back(*f0);
            energies.push_back(10.0 * std::log10(ms));
        }
    }
    if (f0s.empty()) throw DataError("corpus_stats: no voiced frames");
    auto mean_var = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        return std::pair{mean, var / static_cast<double>(xs.size())};
    };
    const auto [f0_mean, f0_var] = mean_var(f0s);
    stats.mean_f0 = f0_mean;
    stats.f0_variance = f0_var;
    stats.energy_variance = mean_var(energies).second;
    stats.voiced_frames = static_cast<std::int64_t>(f0s.size());
    return stats;
}

}  // namespace etts::signal
