#pragma once

#include "etts/acoustic/model.hpp"
#include "etts/signal/corpus.hpp"
#include "etts/signal/mel.hpp"
#include "etts/signal/wav.hpp"
#include "etts/vocoder/vocoder.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace etts::inference {

enum class LatentKind { prior_sample, prior_mean, train_centroid, reference_utterance };

std::string to_string(LatentKind kind);
LatentKind parse_latent_kind(const std::string& s);

struct LatentScheme {
    LatentKind kind = LatentKind::reference_utterance;
    std::optional<std::string> reference_id;

    void validate() const;
};

struct LatentBank {
    torch::Tensor statement_z;         // (latent_dim)
    torch::Tensor question_z;          // (latent_dim)
    torch::Tensor vocoder_centroid_z;  // (latent_dim)
    std::map<std::string, std::string> provenance;  // vector name -> utterance id or "centroid"

    std::int64_t latent_dim() const;
    void validate() const;
};

/// Binary vectors (magic "ETLB") at `path`, provenance JSON at `path` + ".json".
void save_latent_bank(const std::filesystem::path& path, const LatentBank& bank);
LatentBank load_latent_bank(const std::filesystem::path& path);

/// Posterior mean of one log-mel (M, n_mels), shape (latent_dim).
torch::Tensor posterior_mean(acoustic::AcousticModel& model, const torch::Tensor& mel);

/// Posterior mean mu of a reference recording.
torch::Tensor extract_reference_latent(acoustic::AcousticModel& model, const signal::Waveform& audio,
                                       const signal::MelConfig& mel_cfg);

/// Arithmetic mean of posterior means over a list of log-mels.
torch::Tensor compute_centroid(acoustic::AcousticModel& model, const std::vector<torch::Tensor>& mels);
torch::Tensor compute_centroid(acoustic::AcousticModel& model, const signal::Manifest& manifest,
                               const signal::MelConfig& mel_cfg);

/// Builds a bank from two named reference utterances and the corpus centroid.
LatentBank build_latent_bank(acoustic::AcousticModel& model, const signal::Manifest& manifest,
                             const signal::MelConfig& mel_cfg, const std::string& statement_id,
                             const std::string& question_id);

torch::Tensor select_acoustic_latent(const LatentScheme& scheme, signal::IntonationTag tag, const LatentBank* bank,
                                     std::int64_t latent_dim, torch::Generator& generator);

struct SynthesisRequest {
    std::vector<std::int64_t> tokens;
    signal::IntonationTag tag = signal::IntonationTag::statement;
    LatentScheme scheme;
    std::int64_t ops = 2;
    std::int64_t max_steps = 200;
    std::uint64_t seed = 0;
};

struct SynthesisResult {
    signal::Waveform waveform;
    torch::Tensor mel;         // (M, n_mels)
    torch::Tensor alignments;  // (steps, N)
    torch::Tensor acoustic_z;  // (latent_dim)
    std::int64_t stop_step = -1;
    std::int64_t frames = 0;
    bool hit_max_steps = false;
};

/// Vocoder stage only: conditioning from (mel, z) and one student sample clamped to [-1, 1].
torch::Tensor vocode(vocoder::Teacher& teacher, vocoder::Student& student, const torch::Tensor& mel,
                     const torch::Tensor& z, torch::Generator& generator);

/// Phonemes -> spectrogram (selected acoustic latent) -> waveform (centroid vocoder latent).
SynthesisResult synthesize(const SynthesisRequest& request, acoustic::AcousticModel& acoustic,
                           vocoder::Teacher& teacher, vocoder::Student& student, const LatentBank& bank,
                           int sample_rate);

}  // namespace etts::inference
