#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace etts::schedule {

struct Phase {
    std::string name;
    std::int64_t start_step = 0;
    int ops = 5;
    bool gan_enabled = false;
};

/// Ordered training phases. Phase i is active on [start_i, start_{i+1}).
struct PhasePlan {
    std::vector<Phase> phases;

    /// ops5 -> ops4 -> ops3 -> ops2 -> gan at the toy-scale default lengths.
    static PhasePlan default_plan();

    /// Throws ConfigError unless the first phase starts at 0, start steps are
    /// strictly increasing, ops are non-increasing and in [1, max_ops].
    void validate(int max_ops = 5) const;
};

struct PhaseAttributes {
    int ops = 5;
    bool gan_enabled = false;
    std::string name;
};

PhaseAttributes ops_at_step(const PhasePlan& plan, std::int64_t step);

struct AnnealSpec {
    std::int64_t ramp_start = 500;
    std::int64_t ramp_end = 3000;
    std::int64_t period = 100;

    void validate() const;
};

/// KLD weight: 0 before the ramp, linear to 1 at ramp_end, then 1 on every
/// `period`-th step after ramp_end and 0 otherwise.
double beta_kld(const AnnealSpec& spec, std::int64_t step);

/// Exponential moving average of a parameter set.
class PolyakState {
public:
    PolyakState() = default;
    PolyakState(const std::vector<torch::Tensor>& live, double decay);

    /// shadow <- decay * shadow + (1 - decay) * live, elementwise.
    void update(const std::vector<torch::Tensor>& live);
    void update(const std::vector<torch::Tensor>& live, double decay);

    double decay() const noexcept { return decay_; }
    const std::vector<torch::Tensor>& shadow() const noexcept { return shadow_; }
    std::vector<torch::Tensor>& shadow() noexcept { return shadow_; }

private:
    std::vector<torch::Tensor> shadow_;
    double decay_ = 0.999;
};

/// Single update step on explicit tensors; throws ShapeError on mismatch.
void polyak_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& live, double decay);

struct OptimizerDefaults {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double gan_beta1 = 0.5;
    double teacher_lr_decay = 0.95;
};

struct OptimizerParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double lr_decay = 1.0;  // multiplicative factor per epoch

    double lr_at_epoch(std::int64_t epoch) const;
};

/// Acoustic phases ("ops*") keep the Adam defaults, "gan" lowers beta1, "teacher"
/// decays the learning rate per epoch and "student" uses a constant rate.
OptimizerParams optimizer_phase_params(const std::string& phase, const OptimizerDefaults& defaults = {});

struct Snapshot {
    std::string id;
    std::int64_t step = 0;
};

/// Splits `total_steps` student steps into len(snapshots) contiguous equal
/// segments; segment i uses snapshot i. Throws DataError for an empty list.
std::size_t snapshot_index(std::size_t num_snapshots, std::int64_t student_step, std::int64_t total_steps);
const Snapshot& snapshot_rotation(const std::vector<Snapshot>& snapshots, std::int64_t student_step,
                                  std::int64_t total_steps);

}  // namespace etts::schedule
