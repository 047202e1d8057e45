#pragma once

#include "etts/acoustic/model.hpp"
#include "etts/checkpoint/checkpoint.hpp"
#include "etts/cli/config.hpp"
#include "etts/inference/inference.hpp"
#include "etts/schedule/schedule.hpp"
#include "etts/signal/corpus.hpp"
#include "etts/vocoder/vocoder.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace etts::cli {

/// Deterministic 64-bit seed for (base seed, step, stream).
std::uint64_t step_seed(std::uint64_t seed, std::int64_t step, std::uint64_t stream);

/// Appends one JSON object per line.
class JsonlLogger {
public:
    JsonlLogger() = default;
    explicit JsonlLogger(const std::filesystem::path& path);
    void write(const nlohmann::json& record);

private:
    std::ofstream out_;
};

struct Utterance {
    std::string id;
    torch::Tensor tokens;  // (N) int64
    torch::Tensor mel;     // (M, n_mels) float32
    torch::Tensor audio;   // (M * hop) float32
    signal::IntonationTag tag = signal::IntonationTag::statement;
};

struct Dataset {
    signal::Manifest manifest;
    std::vector<Utterance> items;
    std::int64_t min_frames() const;
};

acoustic::PhonemeInventory toy_inventory();

/// Generates the toy corpus (unless corpus.manifest is set) and caches features
/// in `<run_dir>/features`. Re-running with the same config is a no-op.
Dataset prepare_data(const RunConfig& cfg, const std::filesystem::path& run_dir, JsonlLogger* log = nullptr);

struct AcousticBatch {
    torch::Tensor tokens, token_lengths, mel, mel_lengths;
};
AcousticBatch collate(const Dataset& data, const std::vector<std::size_t>& idx, double pad_value);

/// `min(batch, n)` distinct indices from a seeded shuffle.
std::vector<std::size_t> sample_batch(std::size_t n, std::int64_t batch, std::mt19937_64& rng);

struct StageOptions {
    std::optional<std::int64_t> until_step;  // stop after this many total steps
    bool resume = true;
};

struct StageResult {
    std::int64_t steps_done = 0;
    std::filesystem::path checkpoint;
};

/// kind, step, config echo and config hash for a checkpoint manifest.
nlohmann::json checkpoint_meta(const RunConfig& cfg, const std::string& kind, std::int64_t step);

StageResult train_acoustic(const RunConfig& cfg, const std::filesystem::path& run_dir, const StageOptions& opts = {});
StageResult train_teacher(const RunConfig& cfg, const std::filesystem::path& run_dir, const StageOptions& opts = {});
StageResult distill_student(const RunConfig& cfg, const std::filesystem::path& run_dir, const StageOptions& opts = {});
std::filesystem::path build_latent_bank(const RunConfig& cfg, const std::filesystem::path& run_dir);

/// Latest checkpoint directory of a stage ("acoustic", "teacher", "student").
std::filesystem::path latest_checkpoint(const std::filesystem::path& run_dir, const std::string& stage);

acoustic::AcousticModel load_acoustic(const RunConfig& cfg, const std::filesystem::path& ckpt_dir);
vocoder::Teacher load_teacher(const RunConfig& cfg, const std::filesystem::path& ckpt_dir);
vocoder::Student load_student(const RunConfig& cfg, const std::filesystem::path& ckpt_dir);

struct SnapshotRecord {
    std::string id;
    std::int64_t step = 0;
    std::filesystem::path dir;
};
std::vector<SnapshotRecord> read_snapshots(const std::filesystem::path& run_dir);

/// Fraction of decoder steps whose argmax token advances by 0 or 1 over the
/// previous step (alignments (steps, N)).
double attention_diagonality(const torch::Tensor& alignments);
/// Fraction of tokens that are the argmax of at least one step.
double attention_coverage(const torch::Tensor& alignments);

struct EvalRow {
    std::string id;
    double mel_l1 = 0.0;
    double attention_diagonality = 0.0;
    double attention_coverage = 0.0;
    double stop_accuracy = 0.0;
    std::optional<double> teacher_nll;
    std::optional<double> student_spectral;
    std::optional<double> synth_mel_l1;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    nlohmann::json aggregates;
};

nlohmann::json to_json(const EvalRow& row);
/// Means of every numeric column over the rows that have it.
nlohmann::json aggregate(const std::vector<EvalRow>& rows);

/// Teacher-forced acoustic metrics at `ops` with posterior-mean latents.
std::vector<EvalRow> evaluate_acoustic(acoustic::AcousticModel& model, const Dataset& data, std::int64_t ops,
                                       const std::vector<std::size_t>& subset = {});

/// Mean |a - b| after padding the shorter spectrogram with `pad_value` frames.
double synthesis_mel_l1(const torch::Tensor& synth_mel, const torch::Tensor& reference_mel, double pad_value);

struct EvaluateOptions {
    bool untrained = false;  // evaluate freshly initialized models with the config seed
    bool vocoder = true;
    bool synthesis = true;
    std::int64_t max_utterances = 0;  // 0 means all
};

EvalReport evaluate(const RunConfig& cfg, const std::filesystem::path& run_dir, const EvaluateOptions& opts);
void write_eval_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace etts::cli
