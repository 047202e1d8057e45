#pragma once

#include "etts/signal/mel.hpp"
#include "etts/signal/wav.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace etts::signal {

enum class IntonationTag { statement, yes_no_question };

std::string to_string(IntonationTag tag);
IntonationTag parse_intonation(const std::string& text);

struct UtteranceRecord {
    std::string id;
    std::vector<std::string> phonemes;
    std::string audio_path;  // relative to the manifest directory unless absolute
    IntonationTag intonation = IntonationTag::statement;
};

/// Ordered utterance list backed by a UTF-8 TSV file:
/// `id<TAB>space separated phonemes<TAB>wav_path<TAB>intonation_tag`.
struct Manifest {
    std::vector<UtteranceRecord> utterances;
    std::filesystem::path base_dir;

    bool empty() const noexcept { return utterances.empty(); }
    std::size_t size() const noexcept { return utterances.size(); }
    std::filesystem::path resolve_audio(const UtteranceRecord& utt) const;
    const UtteranceRecord* find(const std::string& id) const;

    /// Throws DataError on duplicate ids or empty phoneme sequences.
    void validate() const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// One symbol of the synthetic phoneme inventory. Voiced tokens are two
/// sinusoids at the formant frequencies under a raised-cosine envelope.
struct TokenSpec {
    std::string symbol;
    double formant1_hz = 0.0;
    double formant2_hz = 0.0;
    double amplitude1 = 0.0;
    double amplitude2 = 0.0;
    double duration_ms = 80.0;
};

/// The fixed 12-token inventory; the last entry "_" is the pause token.
const std::vector<TokenSpec>& toy_token_table();
const TokenSpec& toy_token(const std::string& symbol);

struct ToyCorpusOptions {
    int min_tokens = 3;
    int max_tokens = 7;
    double question_fraction = 0.3;
    double pause_probability = 0.1;
    double pitch_ramp = 0.35;      // final frequency factor of a question is 1 + pitch_ramp
    double ramp_start = 0.4;       // fraction of the utterance before the ramp begins
    double envelope_ms = 8.0;
};

/// Renders a token sequence. `ramp` scales every frequency by a factor that rises
/// linearly from 1 to 1 + options.pitch_ramp over the tail of the utterance.
Waveform render_tokens(const std::vector<std::string>& tokens, bool ramp, int sample_rate,
                       const ToyCorpusOptions& options = {});

/// Writes `n_utts` WAV files plus `manifest.tsv` into `out_dir` and returns the manifest.
/// The output is a pure function of (n_utts, seed, cfg, token table, options).
Manifest generate_toy_corpus(int n_utts, std::uint64_t seed, const MelConfig& cfg,
                             const std::filesystem::path& out_dir,
                             const ToyCorpusOptions& options = {});

struct F0Options {
    double min_hz = 60.0;
    double max_hz = 800.0;
    double voicing_rms = 0.05;      // frames below this RMS are unvoiced
    double peak_fraction = 0.9;     // first autocorrelation peak within this fraction of the best
};

/// f0 of one frame from normalized autocorrelation with parabolic peak
/// interpolation. Returns nullopt for frames below the voicing threshold.
std::optional<double> estimate_frame_f0(std::span<const float> frame, int sample_rate,
                                        const F0Options& options = {});

struct CorpusStats {
    double mean_f0 = 0.0;
    double f0_variance = 0.0;
    double energy_variance = 0.0;  // variance of voiced-frame RMS energy in dB
    std::int64_t voiced_frames = 0;
    std::int64_t total_frames = 0;
};

/// Frame-wise statistics over all voiced frames of a corpus. Throws DataError for
/// an empty manifest or a corpus without voiced frames.
CorpusStats corpus_stats(const Manifest& manifest, const MelConfig& cfg, const F0Options& options = {});

}  // namespace etts::signal
