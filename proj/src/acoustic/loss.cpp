#include "etts/acoustic/loss.hpp"

#include "etts/acoustic/model.hpp"
#include "etts/error.hpp"

namespace etts::acoustic {

torch::Tensor masked_l1(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mel_lengths) {
    if (pred.dim() != 3 || target.dim() != 3 || pred.size(0) != target.size(0) || pred.size(2) != target.size(2)) {
        throw ShapeError("l1: prediction and target must both be (B, M, n_mels) with matching B and n_mels");
    }
    const auto frames = mel_lengths.max().item<std::int64_t>();
    if (pred.size(1) < frames || target.size(1) < frames) {
        throw ShapeError("l1: prediction or target shorter than the longest valid length");
    }
    auto p = pred.slice(1, 0, frames);
    auto t = target.slice(1, 0, frames);
    auto mask = sequence_mask(mel_lengths, frames).unsqueeze(-1).to(p.dtype());
    const auto count = mask.sum() * p.size(2);
    return ((p - t).abs() * mask).sum() / count;
}

std::pair<torch::Tensor, torch::Tensor> stop_targets(const torch::Tensor& mel_lengths, std::int64_t ops,
                                                     std::int64_t steps, const torch::TensorOptions& options) {
    auto final_step = torch::div(mel_lengths.to(torch::kInt64) + ops - 1, ops, "floor") - 1;  // (B)
    auto range = torch::arange(steps, torch::kInt64).unsqueeze(0);
    auto targets = (range == final_step.unsqueeze(1)).to(options.dtype());
    auto mask = range <= final_step.unsqueeze(1);
    return {targets, mask};
}

torch::Tensor stop_loss(const torch::Tensor& stop_logits, const torch::Tensor& mel_lengths, std::int64_t ops) {
    auto [targets, mask] = stop_targets(mel_lengths, ops, stop_logits.size(1), stop_logits.options());
    auto bce = torch::binary_cross_entropy_with_logits(stop_logits, targets, {}, {}, at::Reduction::None);
    auto m = mask.to(stop_logits.dtype());
    return (bce * m).sum() / m.sum();
}

AcousticLossTerms acoustic_loss(const torch::Tensor& pred, const torch::Tensor& target,
                                const torch::Tensor& mel_lengths, const torch::Tensor& stop_logits,
                                std::int64_t ops, const GaussianPosterior& q, double beta) {
    AcousticLossTerms terms;
    terms.l1 = masked_l1(pred, target, mel_lengths);
    terms.kld = kld_closed_form(q).mean();
    terms.stop = stop_loss(stop_logits, mel_lengths, ops);
    terms.total = terms.l1 + beta * terms.kld + terms.stop;
    return terms;
}

}  // namespace etts::acoustic
