#pragma once

#include "etts/acoustic/model.hpp"
#include "etts/adversarial/adversarial.hpp"
#include "etts/schedule/schedule.hpp"
#include "etts/signal/corpus.hpp"
#include "etts/signal/mel.hpp"
#include "etts/vocoder/vocoder.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace etts::cli {

struct CorpusConfig {
    std::string manifest;  // existing manifest.tsv; empty generates the toy corpus
    int num_utterances = 50;
    std::uint64_t seed = 7;
    signal::ToyCorpusOptions toy;
};

struct AcousticTrainConfig {
    std::int64_t batch_size = 32;
    double grad_clip = 1.0;
    std::int64_t checkpoint_every = 500;
    std::int64_t gan_window = 32;
    double gan_alpha = 0.02;
};

struct TeacherTrainConfig {
    std::int64_t batch_size = 16;
    std::int64_t steps = 3000;
    std::int64_t window_frames = 8;
    std::int64_t epoch_steps = 200;  // steps per learning-rate decay epoch
    std::int64_t snapshots = 3;
    double polyak_decay = 0.999;
    bool polyak_warmup = true;
    double grad_clip = 1.0;
};

struct StudentTrainConfig {
    std::int64_t batch_size = 16;
    std::int64_t steps = 1500;
    std::int64_t window_frames = 8;
    vocoder::DistillOptions distill;
    double polyak_decay = 0.999;
    bool polyak_warmup = true;
    double grad_clip = 1.0;
};

struct LatentBankConfig {
    std::string statement_id;  // empty: first statement in the manifest
    std::string question_id;   // empty: first yes/no question in the manifest
};

struct SynthesisConfig {
    std::int64_t ops = 2;
    std::int64_t max_steps = 200;
    std::string scheme = "reference_utterance";
};

struct RunConfig {
    std::uint64_t seed = 1234;
    int threads = 1;
    std::int64_t latent_dim = 64;
    signal::MelConfig mel;
    CorpusConfig corpus;
    acoustic::AcousticConfig acoustic;
    adversarial::DiscriminatorConfig discriminator;
    vocoder::VocoderConfig vocoder;
    schedule::PhasePlan phases = schedule::PhasePlan::default_plan();
    std::int64_t acoustic_steps = 8000;
    schedule::AnnealSpec anneal;
    schedule::OptimizerDefaults optimizer;
    AcousticTrainConfig train_acoustic;
    TeacherTrainConfig train_teacher;
    StudentTrainConfig distill;
    LatentBankConfig latent_bank;
    SynthesisConfig synthesis;

    /// Copies the shared values (n_mels, hop, latent_dim, pad value) into the
    /// per-model sections.
    void propagate();
    /// Throws ConfigError on any inconsistent value.
    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Reads a complete document (every key present).
RunConfig from_json(const nlohmann::json& j);

/// Recursively overlays `user` onto `base`. Keys absent from `base` raise
/// ConfigError naming the dotted path; arrays are replaced whole.
void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& path = "");

/// Applies `key.path=value`; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file (if non-empty), then overrides, then validation.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

/// Canonical serialization used for config echo and hashing.
std::string canonical_dump(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

}  // namespace etts::cli
