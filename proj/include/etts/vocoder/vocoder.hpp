#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace etts::vocoder {

struct VocoderConfig {
    std::int64_t n_mels = 80;
    std::int64_t latent_dim = 64;
    std::int64_t hop = 200;
    std::int64_t cond_lstm_hidden = 128;  // per direction
    std::int64_t cond_lstm_layers = 2;
    std::int64_t cond_channels = 64;      // output width of the 1x1 affine map
    std::int64_t mixtures = 10;
    std::int64_t teacher_residual = 256;
    std::int64_t teacher_gate = 256;
    std::int64_t teacher_skip = 256;
    std::int64_t teacher_blocks = 2;
    std::int64_t teacher_layers_per_block = 10;
    std::int64_t kernel = 2;
    std::vector<std::int64_t> flow_layers{10, 10, 10, 30};
    std::int64_t flow_channels = 64;
    std::int64_t flow_dilation_cycle = 10;
    std::int64_t quantization_levels = 32768;
    double log_scale_min = -11.512925464970229;  // log(1e-5)

    void validate() const;
};

// ---------------------------------------------------------------------------
// Mixture of logistics

struct MoLParams {
    torch::Tensor logits;      // (..., K)
    torch::Tensor means;       // (..., K)
    torch::Tensor log_scales;  // (..., K), already clamped
};

/// Splits (..., 3K) network output into mixture parameters and clamps log-scales.
MoLParams mol_from_raw(const torch::Tensor& raw, std::int64_t mixtures, double log_scale_min);

/// Uniform grid of `levels` points on [-1, 1]. Bins are centred on grid points,
/// half-width delta = 1 / (levels - 1).
struct Quantization {
    std::int64_t levels = 32768;

    double half_bin() const { return 1.0 / static_cast<double>(levels - 1); }
    torch::Tensor quantize(const torch::Tensor& x) const;
    torch::Tensor grid(const torch::TensorOptions& options = torch::kFloat64) const;
};

/// log of the discretized logistic mass of bin [x - delta, x + delta].
/// Bins whose centre lies at -1 or +1 absorb the respective CDF tail.
torch::Tensor logistic_log_mass(const torch::Tensor& x, const torch::Tensor& mean, const torch::Tensor& log_scale,
                                double delta);

/// Discretized mixture log-mass, x has the shape of p without the last axis.
torch::Tensor mol_log_prob(const torch::Tensor& x, const MoLParams& p, double delta);

/// Continuous mixture log-density.
torch::Tensor mol_log_density(const torch::Tensor& x, const MoLParams& p);

/// Log-density of a logistic with location `mean` and log-scale `log_scale`.
torch::Tensor logistic_log_density(const torch::Tensor& x, const torch::Tensor& mean, const torch::Tensor& log_scale);

/// Draws standard logistic noise log(u) - log(1 - u).
torch::Tensor logistic_noise(at::IntArrayRef shape, const torch::TensorOptions& options,
                             std::optional<torch::Generator> generator = std::nullopt);

// ---------------------------------------------------------------------------
// Networks

/// BiLSTM over frames, concat broadcast z, 1x1 conv, repeat-upsample by hop.
class ConditioningEncoderImpl : public torch::nn::Module {
public:
    explicit ConditioningEncoderImpl(const VocoderConfig& cfg);
    /// mel (B, M, n_mels), z (B, latent_dim) -> (B, M * hop, cond_channels).
    torch::Tensor forward(const torch::Tensor& mel, const torch::Tensor& z);
    /// Per-frame features before upsampling, (B, M, cond_channels).
    torch::Tensor frames(const torch::Tensor& mel, const torch::Tensor& z);

private:
    VocoderConfig cfg_;
    torch::nn::LSTM lstm_{nullptr};
    torch::nn::Conv1d affine_{nullptr};
};
TORCH_MODULE(ConditioningEncoder);

/// Gated residual layer: tanh(filter) * sigmoid(gate) over a causal dilated conv
/// plus a 1x1 projection of the conditioning.
class GatedResidualLayerImpl : public torch::nn::Module {
public:
    GatedResidualLayerImpl(std::int64_t residual, std::int64_t gate, std::int64_t skip, std::int64_t cond,
                           std::int64_t kernel, std::int64_t dilation);
    /// x (B, residual, T), c (B, cond, T) -> (residual out, skip out).
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& c);

private:
    std::int64_t left_pad_;
    torch::nn::Conv1d dilated_{nullptr}, cond_{nullptr}, residual_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(GatedResidualLayer);

/// Input shifted one sample right, then a stack of gated residual layers. Output
/// at t depends on x_<t and c_<=t only.
class CausalStackImpl : public torch::nn::Module {
public:
    CausalStackImpl(std::int64_t residual, std::int64_t gate, std::int64_t skip, std::int64_t cond,
                    std::int64_t kernel, const std::vector<std::int64_t>& dilations, std::int64_t out,
                    bool zero_output = false);
    /// x (B, T), c (B, T, cond) -> (B, T, out).
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& c);

private:
    torch::nn::Conv1d input_{nullptr};
    std::vector<GatedResidualLayer> layers_;
    torch::nn::Conv1d post1_{nullptr}, post2_{nullptr};
};
TORCH_MODULE(CausalStack);

std::vector<std::int64_t> teacher_dilations(const VocoderConfig& cfg);
std::vector<std::int64_t> flow_dilations(std::int64_t layers, std::int64_t cycle);

class TeacherImpl : public torch::nn::Module {
public:
    explicit TeacherImpl(const VocoderConfig& cfg);
    const VocoderConfig& config() const noexcept { return cfg_; }

    /// w (B, T), cond (B, T, cond_channels) -> per-sample mixture parameters (B, T, K).
    MoLParams forward(const torch::Tensor& w, const torch::Tensor& cond);
    ConditioningEncoder& conditioning() { return conditioning_; }

private:
    VocoderConfig cfg_;
    ConditioningEncoder conditioning_{nullptr};
    CausalStack stack_{nullptr};
};
TORCH_MODULE(Teacher);

/// Mean negative discretized log-likelihood of the quantized waveform.
torch::Tensor teacher_nll_loss(Teacher& teacher, const torch::Tensor& w, const torch::Tensor& cond);

struct IafResult {
    torch::Tensor output;   // same shape as the input
    torch::Tensor log_det;  // sum over the last axis
};

/// s_out = mu + sigma * s_in with sigma = exp(log_sigma).
IafResult iaf_apply(const torch::Tensor& s_in, const torch::Tensor& mu, const torch::Tensor& log_sigma);

struct StudentOutput {
    torch::Tensor waveform;       // (B, T)
    torch::Tensor mu_tot;         // (B, T)
    torch::Tensor log_sigma_tot;  // (B, T)
    std::vector<torch::Tensor> flow_mu, flow_log_sigma;
};

/// Composes per-flow affine maps: mu_tot <- mu_f + sigma_f * mu_tot, sigma_tot <- sigma_f * sigma_tot.
std::pair<torch::Tensor, torch::Tensor> compose_affine(const std::vector<torch::Tensor>& mu,
                                                       const std::vector<torch::Tensor>& log_sigma);

class StudentImpl : public torch::nn::Module {
public:
    explicit StudentImpl(const VocoderConfig& cfg);
    /// cond (B, T, cond_channels), noise (B, T) standard logistic.
    StudentOutput forward(const torch::Tensor& cond, const torch::Tensor& noise);
    std::int64_t num_flows() const { return static_cast<std::int64_t>(flows_.size()); }

private:
    VocoderConfig cfg_;
    std::vector<CausalStack> flows_;
};
TORCH_MODULE(Student);

// ---------------------------------------------------------------------------
// Distillation

struct DistillOptions {
    std::int64_t n_mc = 4;
    double spectral_weight = 1.0;
    std::int64_t stft_fft = 512;
    std::int64_t stft_hop = 128;
};

struct DistillTerms {
    torch::Tensor kl_term;
    torch::Tensor spectral_term;
    torch::Tensor total;
};

/// mean_t [ CE_t - (log sigma_t + 2) ]. CE_t = -1/n_mc sum_j log p_T(mu_t + sigma_t * eps_j)
/// where p_T is the teacher's continuous mixture density at t.
torch::Tensor distill_kl_term(const MoLParams& teacher_at_student, const torch::Tensor& mu_tot,
                              const torch::Tensor& log_sigma_tot, std::int64_t n_mc,
                              std::optional<torch::Generator> generator = std::nullopt);

/// Mean squared difference of log STFT magnitudes.
torch::Tensor spectral_loss(const torch::Tensor& a, const torch::Tensor& b, std::int64_t fft, std::int64_t hop);

DistillTerms distill_loss(const StudentOutput& student, Teacher& teacher, const torch::Tensor& cond,
                          const torch::Tensor& target, const DistillOptions& options,
                          std::optional<torch::Generator> generator = std::nullopt);

/// Version stamps and content hashes of a module's parameters and buffers.
class FrozenGuard {
public:
    FrozenGuard() = default;
    /// Disables gradients on every parameter and records their state.
    explicit FrozenGuard(torch::nn::Module& module);
    /// Throws Error naming the first tensor that changed since construction.
    void verify(torch::nn::Module& module) const;

private:
    struct Stamp {
        std::int64_t version = 0;
        std::string hash;
    };
    std::map<std::string, Stamp> stamps_;
};

std::string tensor_hash(const torch::Tensor& t);

}  // namespace etts::vocoder
