#pragma once

#include "etts/acoustic/vae.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace etts::acoustic {

struct AcousticConfig {
    std::int64_t vocab_size = 12;
    std::int64_t n_mels = 80;
    std::int64_t embedding_dim = 128;
    std::int64_t encoder_conv_layers = 3;
    std::int64_t encoder_conv_channels = 128;
    std::int64_t encoder_kernel = 5;
    std::int64_t encoder_lstm_hidden = 128;  // per direction
    std::int64_t attention_dim = 64;
    std::int64_t location_filters = 32;
    std::int64_t location_kernel = 31;
    std::int64_t prenet_dim = 128;
    std::int64_t decoder_lstm_dim = 256;
    std::int64_t max_ops = 5;
    std::int64_t latent_dim = 64;
    std::int64_t vae_conv_layers = 4;
    std::int64_t vae_conv_channels = 128;
    std::int64_t vae_lstm_hidden = 64;  // per direction
    double prenet_dropout = 0.5;
    double pad_value = -11.512925464970229;  // log(1e-5), value of padded target frames

    std::int64_t memory_dim() const { return 2 * encoder_lstm_hidden + latent_dim; }
    void validate() const;
};

/// Symbol <-> id mapping for phoneme tokens.
class PhonemeInventory {
public:
    PhonemeInventory() = default;
    explicit PhonemeInventory(std::vector<std::string> symbols);

    std::int64_t size() const noexcept { return static_cast<std::int64_t>(symbols_.size()); }
    const std::vector<std::string>& symbols() const noexcept { return symbols_; }
    /// Throws DataError naming the first unknown symbol.
    std::vector<std::int64_t> encode(const std::vector<std::string>& tokens) const;

private:
    std::vector<std::string> symbols_;
};

/// (B, L) boolean mask, true at positions < lengths[b].
torch::Tensor sequence_mask(const torch::Tensor& lengths, std::int64_t max_len);

class PhonemeEncoderImpl : public torch::nn::Module {
public:
    explicit PhonemeEncoderImpl(const AcousticConfig& cfg);
    /// tokens (B, N) int64, lengths (B) -> (B, N, 2 * encoder_lstm_hidden).
    torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& lengths);

private:
    std::int64_t vocab_size_;
    torch::nn::Embedding embedding_{nullptr};
    torch::nn::ModuleList convs_;
    torch::nn::LSTM lstm_{nullptr};
};
TORCH_MODULE(PhonemeEncoder);

struct AttentionState {
    torch::Tensor weights;     // (B, N) on the simplex
    torch::Tensor cumulative;  // (B, N) running sum of weights
};

/// One-hot weights on the first token and zero cumulative weights.
AttentionState initial_attention_state(std::int64_t batch, std::int64_t length, const torch::TensorOptions& options);

/// Softmax over scores (B, N) with masked positions excluded.
torch::Tensor attention_weights(const torch::Tensor& scores, const torch::Tensor& mask = {});
/// Convex combination weights (B, N) x memory (B, N, D) -> (B, D).
torch::Tensor attention_context(const torch::Tensor& weights, const torch::Tensor& memory);

class LocationSensitiveAttentionImpl : public torch::nn::Module {
public:
    LocationSensitiveAttentionImpl(std::int64_t query_dim, std::int64_t memory_dim, const AcousticConfig& cfg);

    torch::Tensor process_memory(const torch::Tensor& memory);
    /// Energies v^T tanh(W q + V m + U conv([w_prev, w_cum])), shape (B, N).
    torch::Tensor scores(const torch::Tensor& query, const torch::Tensor& processed_memory,
                         const AttentionState& prev);
    /// Returns (context (B, D), new state).
    std::pair<torch::Tensor, AttentionState> step(const torch::Tensor& query, const torch::Tensor& memory,
                                                  const torch::Tensor& processed_memory,
                                                  const AttentionState& prev, const torch::Tensor& mask);

private:
    torch::nn::Linear query_layer_{nullptr};
    torch::nn::Linear memory_layer_{nullptr};
    torch::nn::Conv1d location_conv_{nullptr};
    torch::nn::Linear location_dense_{nullptr};
    torch::nn::Linear v_{nullptr};
};
TORCH_MODULE(LocationSensitiveAttention);

struct DecoderState {
    torch::Tensor att_h, att_c, dec_h, dec_c;
    torch::Tensor context;
    AttentionState attention;
};

/// Raw decoder output for one step: always max_ops frames.
struct DecoderStepOutput {
    torch::Tensor raw_frames;  // (B, max_ops, n_mels)
    torch::Tensor stop_logit;  // (B)
};

/// First `ops` rows of each step's raw frames: (B, max_ops, n_mels) -> (B, ops, n_mels).
torch::Tensor slice_ops(const DecoderStepOutput& out, std::int64_t ops);

class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const AcousticConfig& cfg);

    DecoderState initial_state(const torch::Tensor& memory);
    /// Feeds one n_mels feedback frame per batch element through the pre-net,
    /// attention RNN, attention and decoder RNN. Updates `state` in place.
    DecoderStepOutput step(const torch::Tensor& feedback, DecoderState& state, const torch::Tensor& memory,
                           const torch::Tensor& processed_memory, const torch::Tensor& mask);

    LocationSensitiveAttention& attention() { return attention_; }

private:
    AcousticConfig cfg_;
    torch::nn::Linear prenet1_{nullptr}, prenet2_{nullptr};
    torch::nn::LSTMCell att_rnn_{nullptr}, dec_rnn_{nullptr};
    LocationSensitiveAttention attention_{nullptr};
    torch::nn::Linear frame_proj_{nullptr}, stop_proj_{nullptr};
};
TORCH_MODULE(Decoder);

/// Convolutional + BiLSTM reference encoder predicting q(z | y).
class ReferenceEncoderImpl : public torch::nn::Module {
public:
    explicit ReferenceEncoderImpl(const AcousticConfig& cfg);
    /// mel (B, M, n_mels), lengths (B) -> posterior with (B, latent_dim) tensors.
    GaussianPosterior forward(const torch::Tensor& mel, const torch::Tensor& lengths);

private:
    torch::nn::ModuleList convs_;
    torch::nn::LSTM lstm_{nullptr};
    torch::nn::Linear mu_proj_{nullptr}, logvar_proj_{nullptr};
    double pad_value_ = 0.0;
};
TORCH_MODULE(ReferenceEncoder);

struct TeacherForcedOutput {
    torch::Tensor frames;       // (B, steps * ops, n_mels)
    torch::Tensor raw;          // (B, steps, max_ops, n_mels)
    torch::Tensor stop_logits;  // (B, steps)
    torch::Tensor alignments;   // (B, steps, N)
    std::int64_t ops = 0;
    std::int64_t steps = 0;
};

struct InferenceResult {
    torch::Tensor frames;      // (M, n_mels)
    torch::Tensor alignments;  // (steps, N)
    std::int64_t steps = 0;
    std::int64_t stop_step = -1;  // step whose stop probability exceeded 0.5, or -1
    bool hit_max_steps = false;
};

class AcousticModelImpl : public torch::nn::Module {
public:
    explicit AcousticModelImpl(const AcousticConfig& cfg);

    const AcousticConfig& config() const noexcept { return cfg_; }

    /// Encoder memory without the latent, (B, N, 2 * encoder_lstm_hidden).
    torch::Tensor encode(const torch::Tensor& tokens, const torch::Tensor& lengths);
    /// Broadcast-concatenates z (B, latent) onto every memory row.
    torch::Tensor condition_memory(const torch::Tensor& encoded, const torch::Tensor& z);
    GaussianPosterior posterior(const torch::Tensor& mel, const torch::Tensor& lengths);

    /// Teacher-forced decoding: ceil(M / ops) steps, the feedback at step t is the
    /// last ground-truth frame of slice t - 1 (a silence frame at t = 0).
    TeacherForcedOutput teacher_forced(const torch::Tensor& tokens, const torch::Tensor& token_lengths,
                                       const torch::Tensor& mel, const torch::Tensor& mel_lengths,
                                       const torch::Tensor& z, std::int64_t ops);

    /// Decodes with an explicit feedback frame per step, feedback (B, steps, n_mels).
    TeacherForcedOutput decode_with_feedback(const torch::Tensor& memory, const torch::Tensor& token_mask,
                                             const torch::Tensor& feedback, std::int64_t ops);

    /// Autoregressive generation for one utterance, tokens (N), z (latent_dim).
    InferenceResult infer(const torch::Tensor& tokens, const torch::Tensor& z, std::int64_t ops,
                          std::int64_t max_steps);

    PhonemeEncoder& encoder() { return encoder_; }
    Decoder& decoder() { return decoder_; }
    ReferenceEncoder& reference_encoder() { return reference_; }

private:
    torch::Dtype memory_dtype() const { return parameters().front().scalar_type(); }

    AcousticConfig cfg_;
    PhonemeEncoder encoder_{nullptr};
    Decoder decoder_{nullptr};
    ReferenceEncoder reference_{nullptr};
};
TORCH_MODULE(AcousticModel);

/// Number of decoder steps needed for `frames` frames at `ops` frames per step.
std::int64_t decoder_steps(std::int64_t frames, std::int64_t ops);

}  // namespace etts::acoustic
