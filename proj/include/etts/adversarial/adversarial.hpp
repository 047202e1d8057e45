#pragma once

#include "etts/acoustic/vae.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

namespace etts::adversarial {

/// Persistent power-iteration vectors for one weight.
struct PowerIterationState {
    torch::Tensor u;  // (out)
    torch::Tensor v;  // (in * kernel)
};

/// Random unit start followed by `warmup` power iterations (15, as torch does at
/// registration time).
PowerIterationState init_power_iteration(const torch::Tensor& weight, torch::Generator generator = {},
                                         int warmup = 15);

/// Largest singular value estimate u^T W v, differentiable in W (u, v are constants).
torch::Tensor spectral_sigma(const torch::Tensor& weight, const PowerIterationState& state);

/// Runs `iters` power iterations (updating `state` in place) and returns W / sigma.
/// A zero matrix is returned unchanged. `weight` is reshaped to (out, -1).
torch::Tensor spectral_normalize(const torch::Tensor& weight, int iters, PowerIterationState& state);

/// Conv1d whose weight passes through spectral normalization on every forward
/// pass. Power iteration runs only in training mode; eval mode reuses the stored
/// vectors so repeated evaluations are identical. Weights start orthogonal.
class SNConv1dImpl : public torch::nn::Module {
public:
    SNConv1dImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t padding = 0, int iters = 1);
    torch::Tensor forward(const torch::Tensor& x);
    /// Normalized weight after `iters` extra power iterations (updates the vectors).
    torch::Tensor normalized_weight(int iters);
    torch::Tensor normalized_weight();

    torch::Tensor weight;
    torch::Tensor bias;

private:
    std::int64_t padding_;
    int iters_;
    torch::Tensor u_, v_;
};
TORCH_MODULE(SNConv1d);

/// SAGAN-style self-attention over time with a learned residual gate gamma.
class SelfAttention1dImpl : public torch::nn::Module {
public:
    SelfAttention1dImpl(std::int64_t channels, int iters);
    torch::Tensor forward(const torch::Tensor& x);  // (B, C, T) -> (B, C, T)

    torch::Tensor gamma;

private:
    SNConv1d query_{nullptr}, key_{nullptr}, value_{nullptr};
};
TORCH_MODULE(SelfAttention1d);

struct DiscriminatorConfig {
    std::int64_t n_mels = 80;
    std::vector<std::int64_t> channels{64, 64, 128, 128};
    std::int64_t kernel = 3;
    std::int64_t attention_after = 1;  // self-attention follows this conv block
    int sn_iters = 1;
    double leaky_slope = 0.1;
    double pad_value = -11.512925464970229;

    void validate() const;
};

class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const DiscriminatorConfig& cfg);
    /// crops (B, width, n_mels) log-mel -> unbounded scores (B).
    torch::Tensor forward(const torch::Tensor& crops);
    /// Every spectrally normalized layer, in registration order.
    std::vector<SNConv1d> sn_layers();
    SelfAttention1d& attention() { return attention_; }

private:
    DiscriminatorConfig cfg_;
    std::vector<SNConv1d> blocks_;
    SelfAttention1d attention_{nullptr};
    SNConv1d head_{nullptr};
};
TORCH_MODULE(Discriminator);

struct WindowCrop {
    std::int64_t start = 0;
    std::int64_t width = 0;
    torch::Tensor frames;  // (width, n_mels)
};

/// Uniform start in [0, M - width]; the whole input when M <= width.
WindowCrop random_window(const torch::Tensor& mel, std::int64_t width, std::mt19937_64& rng);

struct CropPair {
    WindowCrop real;
    WindowCrop fake;
};

/// Crops ground truth and prediction of every batch element at the same start,
/// restricted to the element's valid length.
std::vector<CropPair> paired_windows(const torch::Tensor& real, const torch::Tensor& fake,
                                     const torch::Tensor& mel_lengths, std::int64_t width, std::mt19937_64& rng);

/// Scores crops in input order, batching crops of equal width.
torch::Tensor score_crops(Discriminator& disc, const std::vector<WindowCrop>& crops);

/// -E[min(0, -1 - D(G(x)))] - E[min(0, -1 + D(y))], expectations as batch means.
torch::Tensor d_hinge_loss(const torch::Tensor& score_fake, const torch::Tensor& score_real);

struct GanLossReport {
    torch::Tensor g_l1;
    torch::Tensor g_adv;
    torch::Tensor g_kld;
    torch::Tensor total;
    torch::Tensor d_loss;  // filled by the caller after the discriminator step
    double alpha = 0.0;
    double beta = 0.0;
};

/// total = L1 + alpha * mean(D(y) - D(G(x))) + beta * KLD. D(y) is detached.
GanLossReport g_composite_loss(const torch::Tensor& pred, const torch::Tensor& target,
                               const torch::Tensor& mel_lengths, const torch::Tensor& score_fake,
                               const torch::Tensor& score_real, const acoustic::GaussianPosterior& q,
                               double alpha, double beta);

}  // namespace etts::adversarial
