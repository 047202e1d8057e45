#include "etts/schedule/schedule.hpp"

#include "etts/error.hpp"

#include <algorithm>
#include <cmath>

namespace etts::schedule {

PhasePlan PhasePlan::default_plan() {
    return PhasePlan{{
        {"ops5", 0, 5, false},
        {"ops4", 2000, 4, false},
        {"ops3", 3000, 3, false},
        {"ops2", 4000, 2, false},
        {"gan", 6000, 2, true},
    }};
}

void PhasePlan::validate(int max_ops) const {
    if (phases.empty()) throw ConfigError("phase plan is empty");
    if (phases.front().start_step != 0) throw ConfigError("first phase must start at step 0");
    for (std::size_t i = 0; i < phases.size(); ++i) {
        const auto& p = phases[i];
        if (p.ops < 1 || p.ops > max_ops) {
            throw ConfigError("phase '" + p.name + "' has ops " + std::to_string(p.ops) + " outside [1, " +
                              std::to_string(max_ops) + "]");
        }
        if (i > 0) {
            if (p.start_step <= phases[i - 1].start_step) {
                throw ConfigError("phase start steps must be strictly increasing at '" + p.name + "'");
            }
            if (p.ops > phases[i - 1].ops) throw ConfigError("ops must be non-increasing at '" + p.name + "'");
        }
    }
}

PhaseAttributes ops_at_step(const PhasePlan& plan, std::int64_t step) {
    if (plan.phases.empty()) throw ConfigError("phase plan is empty");
    if (step < 0) throw ConfigError("step must be >= 0");
    const Phase* active = &plan.phases.front();
    for (const auto& p : plan.phases) {
        if (p.start_step <= step) active = &p;
    }
    return {active->ops, active->gan_enabled, active->name};
}

void AnnealSpec::validate() const {
    if (ramp_start < 0 || ramp_start >= ramp_end) throw ConfigError("anneal: need 0 <= ramp_start < ramp_end");
    if (period < 1) throw ConfigError("anneal: period must be >= 1");
}

double beta_kld(const AnnealSpec& spec, std::int64_t step) {
    if (step <= spec.ramp_start) return 0.0;
    if (step < spec.ramp_end) {
        return static_cast<double>(step - spec.ramp_start) / static_cast<double>(spec.ramp_end - spec.ramp_start);
    }
    return (step - spec.ramp_end) % spec.period == 0 ? 1.0 : 0.0;
}

void polyak_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& live, double decay) {
    if (shadow.size() != live.size()) {
        throw ShapeError("polyak: " + std::to_string(shadow.size()) + " shadow tensors vs " +
                         std::to_string(live.size()) + " live tensors");
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < shadow.size(); ++i) {
        if (!shadow[i].sizes().equals(live[i].sizes())) throw ShapeError("polyak: shape mismatch at tensor " + std::to_string(i));
        shadow[i].mul_(decay).add_(live[i].detach().to(shadow[i].dtype()), 1.0 - decay);
    }
}

PolyakState::PolyakState(const std::vector<torch::Tensor>& live, double decay) : decay_(decay) {
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("polyak decay must be in (0, 1)");
    shadow_.reserve(live.size());
    for (const auto& t : live) shadow_.push_back(t.detach().clone());
}

void PolyakState::update(const std::vector<torch::Tensor>& live) { polyak_update(shadow_, live, decay_); }

void PolyakState::update(const std::vector<torch::Tensor>& live, double decay) {
    polyak_update(shadow_, live, decay);
}

double OptimizerParams::lr_at_epoch(std::int64_t epoch) const {
    return lr * std::pow(lr_decay, static_cast<double>(epoch));
}

OptimizerParams optimizer_phase_params(const std::string& phase, const OptimizerDefaults& d) {
    if (phase.rfind("ops", 0) == 0) return {d.lr, d.beta1, d.beta2, 1.0};
    if (phase == "gan") return {d.lr, d.gan_beta1, d.beta2, 1.0};
    if (phase == "teacher") return {d.lr, d.beta1, d.beta2, d.teacher_lr_decay};
    if (phase == "student") return {d.lr, d.beta1, d.beta2, 1.0};
    throw ConfigError("unknown training phase '" + phase + "'");
}

std::size_t snapshot_index(std::size_t num_snapshots, std::int64_t student_step, std::int64_t total_steps) {
    if (num_snapshots == 0) throw DataError("snapshot rotation needs at least one teacher snapshot");
    if (total_steps <= 0) return num_snapshots - 1;
    const auto step = std::clamp<std::int64_t>(student_step, 0, total_steps - 1);
    // Segment i covers [floor(i*T/n), floor((i+1)*T/n)).
    const auto n = static_cast<std::int64_t>(num_snapshots);
    std::int64_t idx = (step * n) / total_steps;
    while (idx + 1 < n && step >= ((idx + 1) * total_steps) / n) ++idx;
    while (idx > 0 && step < (idx * total_steps) / n) --idx;
    return static_cast<std::size_t>(idx);
}

const Snapshot& snapshot_rotation(const std::vector<Snapshot>& snapshots, std::int64_t student_step,
                                  std::int64_t total_steps) {
    return snapshots[snapshot_index(snapshots.size(), student_step, total_steps)];
}

}  // namespace etts::schedule
