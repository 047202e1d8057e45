#pragma once

#include "etts/acoustic/vae.hpp"

#include <torch/torch.h>

namespace etts::acoustic {

struct AcousticLossTerms {
    torch::Tensor l1;     // masked mean |y' - y|
    torch::Tensor kld;    // batch mean of the closed-form KLD
    torch::Tensor stop;   // stop-token binary cross-entropy
    torch::Tensor total;  // l1 + beta * kld + stop
};

/// Mean absolute error over valid frames only. `pred` may be longer than `target`
/// (steps * ops >= M); extra frames are masked out.
torch::Tensor masked_l1(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mel_lengths);

/// Stop targets (B, steps): 1 at step ceil(M_b / ops) - 1, 0 before. `mask` is
/// true for steps <= that final step.
std::pair<torch::Tensor, torch::Tensor> stop_targets(const torch::Tensor& mel_lengths, std::int64_t ops,
                                                     std::int64_t steps, const torch::TensorOptions& options);

torch::Tensor stop_loss(const torch::Tensor& stop_logits, const torch::Tensor& mel_lengths, std::int64_t ops);

/// Reconstruction + beta * KLD + stop BCE. The KLD enters with a positive sign.
AcousticLossTerms acoustic_loss(const torch::Tensor& pred, const torch::Tensor& target,
                                const torch::Tensor& mel_lengths, const torch::Tensor& stop_logits,
                                std::int64_t ops, const GaussianPosterior& q, double beta);

}  // namespace etts::acoustic
