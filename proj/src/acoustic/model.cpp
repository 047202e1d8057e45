#include "etts/acoustic/model.hpp"

#include "etts/error.hpp"

#include <cmath>

namespace etts::acoustic {

namespace nn = torch::nn;
namespace rnn = torch::nn::utils::rnn;

namespace {

/// Runs an LSTM over a right-padded batch so that padding never leaks into
/// valid positions. Returns (output (B, L, dirs * H), h_n).
std::pair<torch::Tensor, torch::Tensor> run_packed(nn::LSTM& lstm, const torch::Tensor& x,
                                                   const torch::Tensor& lengths) {
    auto cpu_lengths = lengths.to(torch::kCPU, torch::kInt64);
    auto packed = rnn::pack_padded_sequence(x, cpu_lengths, /*batch_first=*/true, /*enforce_sorted=*/false);
    auto [out_packed, state] = lstm->forward_with_packed_input(packed);
    auto [out, out_lengths] = rnn::pad_packed_sequence(out_packed, /*batch_first=*/true, 0.0, x.size(1));
    return {out, std::get<0>(state)};
}

}  // namespace

void AcousticConfig::validate() const {
    const std::pair<const char*, std::int64_t> dims[] = {
        {"vocab_size", vocab_size},         {"n_mels", n_mels},
        {"embedding_dim", embedding_dim},   {"encoder_conv_channels", encoder_conv_channels},
        {"encoder_lstm_hidden", encoder_lstm_hidden}, {"attention_dim", attention_dim},
        {"location_filters", location_filters},       {"prenet_dim", prenet_dim},
        {"decoder_lstm_dim", decoder_lstm_dim},       {"max_ops", max_ops},
        {"latent_dim", latent_dim},         {"vae_conv_channels", vae_conv_channels},
        {"vae_lstm_hidden", vae_lstm_hidden}};
    for (const auto& [name, value] : dims) {
        if (value < 1) throw ConfigError(std::string("acoustic.") + name + " must be >= 1");
    }
    if (encoder_kernel % 2 == 0 || location_kernel % 2 == 0) {
        throw ConfigError("acoustic: convolution kernels must be odd");
    }
    if (prenet_dropout < 0.0 || prenet_dropout >= 1.0) throw ConfigError("acoustic.prenet_dropout must be in [0, 1)");
}

PhonemeInventory::PhonemeInventory(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {}

std::vector<std::int64_t> PhonemeInventory::encode(const std::vector<std::string>& tokens) const {
    std::vector<std::int64_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto it = std::find(symbols_.begin(), symbols_.end(), t);
        if (it == symbols_.end()) throw DataError("phoneme '" + t + "' is not in the inventory");
        ids.push_back(static_cast<std::int64_t>(it - symbols_.begin()));
    }
    return ids;
}

torch::Tensor sequence_mask(const torch::Tensor& lengths, std::int64_t max_len) {
    auto range = torch::arange(max_len, lengths.options().dtype(torch::kInt64));
    return range.unsqueeze(0) < lengths.to(torch::kInt64).unsqueeze(1);
}

std::int64_t decoder_steps(std::int64_t frames, std::int64_t ops) { return (frames + ops - 1) / ops; }

// ---------------------------------------------------------------------------

PhonemeEncoderImpl::PhonemeEncoderImpl(const AcousticConfig& cfg) : vocab_size_(cfg.vocab_size) {
    embedding_ = register_module("embedding", nn::Embedding(cfg.vocab_size, cfg.embedding_dim));
    std::int64_t in = cfg.embedding_dim;
    for (std::int64_t i = 0; i < cfg.encoder_conv_layers; ++i) {
        convs_->push_back(nn::Conv1d(
            nn::Conv1dOptions(in, cfg.encoder_conv_channels, cfg.encoder_kernel).padding(cfg.encoder_kernel / 2)));
        in = cfg.encoder_conv_channels;
    }
    register_module("convs", convs_);
    lstm_ = register_module(
        "lstm", nn::LSTM(nn::LSTMOptions(in, cfg.encoder_lstm_hidden).batch_first(true).bidirectional(true)));
}

torch::Tensor PhonemeEncoderImpl::forward(const torch::Tensor& tokens, const torch::Tensor& lengths) {
    if (tokens.numel() > 0) {
        const auto lo = tokens.min().item<std::int64_t>();
        const auto hi = tokens.max().item<std::int64_t>();
        if (lo < 0 || hi >= vocab_size_) {
            throw DataError("phoneme id " + std::to_string(lo < 0 ? lo : hi) + " outside vocabulary of size " +
                            std::to_string(vocab_size_));
        }
    }
    auto mask = sequence_mask(lengths, tokens.size(1)).unsqueeze(1);
    auto x = embedding_->forward(tokens).transpose(1, 2);
    mask = mask.to(x.dtype());
    for (auto& conv : *convs_) {
        x = torch::relu(conv->as<nn::Conv1d>()->forward(x)) * mask;
    }
    return run_packed(lstm_, x.transpose(1, 2), lengths).first;
}

// ---------------------------------------------------------------------------

AttentionState initial_attention_state(std::int64_t batch, std::int64_t length, const torch::TensorOptions& options) {
    auto weights = torch::zeros({batch, length}, options);
    weights.select(1, 0).fill_(1.0);
    return {weights, torch::zeros({batch, length}, options)};
}

torch::Tensor attention_weights(const torch::Tensor& scores, const torch::Tensor& mask) {
    if (!mask.defined()) return torch::softmax(scores, -1);
    return torch::softmax(scores.masked_fill(mask.logical_not(), -std::numeric_limits<double>::infinity()), -1);
}

torch::Tensor attention_context(const torch::Tensor& weights, const torch::Tensor& memory) {
    return torch::bmm(weights.unsqueeze(1), memory).squeeze(1);
}

LocationSensitiveAttentionImpl::LocationSensitiveAttentionImpl(std::int64_t query_dim, std::int64_t memory_dim,
                                                               const AcousticConfig& cfg) {
    query_layer_ = register_module("query_layer", nn::Linear(nn::LinearOptions(query_dim, cfg.attention_dim).bias(false)));
    memory_layer_ = register_module("memory_layer", nn::Linear(nn::LinearOptions(memory_dim, cfg.attention_dim).bias(false)));
    location_conv_ = register_module(
        "location_conv",
        nn::Conv1d(nn::Conv1dOptions(2, cfg.location_filters, cfg.location_kernel).padding(cfg.location_kernel / 2).bias(false)));
    location_dense_ = register_module(
        "location_dense", nn::Linear(nn::LinearOptions(cfg.location_filters, cfg.attention_dim).bias(false)));
    v_ = register_module("v", nn::Linear(nn::LinearOptions(cfg.attention_dim, 1).bias(false)));
}

torch::Tensor LocationSensitiveAttentionImpl::process_memory(const torch::Tensor& memory) {
    return memory_layer_->forward(memory);
}

torch::Tensor LocationSensitiveAttentionImpl::scores(const torch::Tensor& query, const torch::Tensor& processed_memory,
                                                     const AttentionState& prev) {
    auto location = torch::stack({prev.weights, prev.cumulative}, 1);           // (B, 2, N)
    auto features = location_dense_->forward(location_conv_->forward(location).transpose(1, 2));
    auto energy = torch::tanh(query_layer_->forward(query).unsqueeze(1) + processed_memory + features);
    return v_->forward(energy).squeeze(-1);
}

std::pair<torch::Tensor, AttentionState> LocationSensitiveAttentionImpl::step(
    const torch::Tensor& query, const torch::Tensor& memory, const torch::Tensor& processed_memory,
    const AttentionState& prev, const torch::Tensor& mask) {
    auto weights = attention_weights(scores(query, processed_memory, prev), mask);
    auto context = attention_context(weights, memory);
    return {context, AttentionState{weights, prev.cumulative + weights}};
}

// ---------------------------------------------------------------------------

torch::Tensor slice_ops(const DecoderStepOutput& out, std::int64_t ops) {
    const auto max_ops = out.raw_frames.size(1);
    if (ops < 1 || ops > max_ops) {
        throw ShapeError("ops " + std::to_string(ops) + " outside [1, " + std::to_string(max_ops) + "]");
    }
    return out.raw_frames.slice(1, 0, ops);
}

DecoderImpl::DecoderImpl(const AcousticConfig& cfg) : cfg_(cfg) {
    const auto mem = cfg.memory_dim();
    prenet1_ = register_module("prenet1", nn::Linear(cfg.n_mels, cfg.prenet_dim));
    prenet2_ = register_module("prenet2", nn::Linear(cfg.prenet_dim, cfg.prenet_dim));
    att_rnn_ = register_module("att_rnn", nn::LSTMCell(cfg.prenet_dim + mem, cfg.decoder_lstm_dim));
    attention_ = register_module("attention", LocationSensitiveAttention(cfg.decoder_lstm_dim, mem, cfg));
    dec_rnn_ = register_module("dec_rnn", nn::LSTMCell(cfg.decoder_lstm_dim + mem, cfg.decoder_lstm_dim));
    frame_proj_ = register_module("frame_proj", nn::Linear(cfg.decoder_lstm_dim + mem, cfg.max_ops * cfg.n_mels));
    stop_proj_ = register_module("stop_proj", nn::Linear(cfg.decoder_lstm_dim + mem, 1));
}

DecoderState DecoderImpl::initial_state(const torch::Tensor& memory) {
    const auto batch = memory.size(0);
    auto opts = memory.options();
    DecoderState s;
    s.att_h = torch::zeros({batch, cfg_.decoder_lstm_dim}, opts);
    s.att_c = torch::zeros_like(s.att_h);
    s.dec_h = torch::zeros_like(s.att_h);
    s.dec_c = torch::zeros_like(s.att_h);
    s.context = torch::zeros({batch, memory.size(2)}, opts);
    s.attention = initial_attention_state(batch, memory.size(1), opts);
    return s;
}

DecoderStepOutput DecoderImpl::step(const torch::Tensor& feedback, DecoderState& state, const torch::Tensor& memory,
                                    const torch::Tensor& processed_memory, const torch::Tensor& mask) {
    const double scale = std::abs(cfg_.pad_value);
    auto x = (feedback - cfg_.pad_value) / scale;
    const bool drop = cfg_.prenet_dropout > 0.0 && is_training();
    x = torch::dropout(torch::relu(prenet1_->forward(x)), cfg_.prenet_dropout, drop);
    x = torch::dropout(torch::relu(prenet2_->forward(x)), cfg_.prenet_dropout, drop);

    std::tie(state.att_h, state.att_c) =
        att_rnn_->forward(torch::cat({x, state.context}, -1), std::make_tuple(state.att_h, state.att_c));
    std::tie(state.context, state.attention) =
        attention_->step(state.att_h, memory, processed_memory, state.attention, mask);
    std::tie(state.dec_h, state.dec_c) =
        dec_rnn_->forward(torch::cat({state.att_h, state.context}, -1), std::make_tuple(state.dec_h, state.dec_c));

    auto out_in = torch::cat({state.dec_h, state.context}, -1);
    auto raw = cfg_.pad_value + scale * frame_proj_->forward(out_in);
    return {raw.view({-1, cfg_.max_ops, cfg_.n_mels}), stop_proj_->forward(out_in).squeeze(-1)};
}

// ---------------------------------------------------------------------------

ReferenceEncoderImpl::ReferenceEncoderImpl(const AcousticConfig& cfg) {
    std::int64_t in = cfg.n_mels;
    for (std::int64_t i = 0; i < cfg.vae_conv_layers; ++i) {
        convs_->push_back(nn::Conv1d(nn::Conv1dOptions(in, cfg.vae_conv_channels, 3).stride(2).padding(1)));
        in = cfg.vae_conv_channels;
    }
    register_module("convs", convs_);
    lstm_ = register_module("lstm",
                            nn::LSTM(nn::LSTMOptions(in, cfg.vae_lstm_hidden).batch_first(true).bidirectional(true)));
    mu_proj_ = register_module("mu_proj", nn::Linear(2 * cfg.vae_lstm_hidden, cfg.latent_dim));
    logvar_proj_ = register_module("logvar_proj", nn::Linear(2 * cfg.vae_lstm_hidden, cfg.latent_dim));
    pad_value_ = cfg.pad_value;
}

GaussianPosterior ReferenceEncoderImpl::forward(const torch::Tensor& mel, const torch::Tensor& lengths) {
    auto len = lengths.to(torch::kCPU, torch::kInt64);
    // Silence maps to 0, so right padding with zeros is indistinguishable from trailing silence.
    auto x = ((mel - pad_value_) / std::abs(pad_value_)) *
             sequence_mask(len, mel.size(1)).unsqueeze(-1).to(mel.dtype());
    x = x.transpose(1, 2);
    for (auto& conv : *convs_) {
        x = torch::relu(conv->as<nn::Conv1d>()->forward(x));
        len = torch::div(len - 1, 2, "floor") + 1;
        x = x * sequence_mask(len, x.size(2)).unsqueeze(1).to(x.dtype());
    }
    auto h_n = run_packed(lstm_, x.transpose(1, 2), len).second;  // (2, B, H)
    auto summary = torch::cat({h_n[0], h_n[1]}, -1);
    return {mu_proj_->forward(summary), logvar_proj_->forward(summary)};
}

// ---------------------------------------------------------------------------

AcousticModelImpl::AcousticModelImpl(const AcousticConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    encoder_ = register_module("encoder", PhonemeEncoder(cfg_));
    decoder_ = register_module("decoder", Decoder(cfg_));
    reference_ = register_module("reference", ReferenceEncoder(cfg_));
}

torch::Tensor AcousticModelImpl::encode(const torch::Tensor& tokens, const torch::Tensor& lengths) {
    return encoder_->forward(tokens, lengths);
}

torch::Tensor AcousticModelImpl::condition_memory(const torch::Tensor& encoded, const torch::Tensor& z) {
    if (z.dim() != 2 || z.size(1) != cfg_.latent_dim || z.size(0) != encoded.size(0)) {
        throw ShapeError("latent must be (B, " + std::to_string(cfg_.latent_dim) + ")");
    }
    return torch::cat({encoded, z.unsqueeze(1).expand({-1, encoded.size(1), -1})}, -1);
}

GaussianPosterior AcousticModelImpl::posterior(const torch::Tensor& mel, const torch::Tensor& lengths) {
    return reference_->forward(mel, lengths);
}

TeacherForcedOutput AcousticModelImpl::teacher_forced(const torch::Tensor& tokens, const torch::Tensor& token_lengths,
                                                      const torch::Tensor& mel, const torch::Tensor& mel_lengths,
                                                      const torch::Tensor& z, std::int64_t ops) {
    if (ops < 1 || ops > cfg_.max_ops) throw ShapeError("ops " + std::to_string(ops) + " outside [1, max_ops]");
    if (mel.dim() != 3 || mel.size(2) != cfg_.n_mels) throw ShapeError("mel must be (B, M, n_mels)");
    const auto frames = mel_lengths.max().item<std::int64_t>();
    if (frames < 1) throw ShapeError("teacher forcing needs at least one target frame");
    const auto steps = decoder_steps(frames, ops);

    auto memory = condition_memory(encode(tokens, token_lengths), z);
    auto mask = sequence_mask(token_lengths, tokens.size(1));

    auto go = torch::full({mel.size(0), 1, cfg_.n_mels}, cfg_.pad_value, mel.options());
    torch::Tensor feedback = go;
    if (steps > 1) {
        auto idx = torch::arange(1, steps, torch::kInt64) * ops - 1;
        feedback = torch::cat({go, mel.index_select(1, idx.to(mel.device()))}, 1);
    }
    return decode_with_feedback(memory, mask, feedback, ops);
}

TeacherForcedOutput AcousticModelImpl::decode_with_feedback(const torch::Tensor& memory, const torch::Tensor& token_mask,
                                                            const torch::Tensor& feedback, std::int64_t ops) {
    if (ops < 1 || ops > cfg_.max_ops) throw ShapeError("ops " + std::to_string(ops) + " outside [1, max_ops]");
    const auto steps = feedback.size(1);
    auto processed = decoder_->attention()->process_memory(memory);
    auto state = decoder_->initial_state(memory);
    std::vector<torch::Tensor> raws, stops, aligns;
    raws.reserve(static_cast<std::size_t>(steps));
    for (std::int64_t t = 0; t < steps; ++t) {
        auto out = decoder_->step(feedback.select(1, t), state, memory, processed, token_mask);
        raws.push_back(out.raw_frames);
        stops.push_back(out.stop_logit);
        aligns.push_back(state.attention.weights);
    }
    TeacherForcedOutput result;
    result.raw = torch::stack(raws, 1);
    result.frames = result.raw.slice(2, 0, ops).reshape({memory.size(0), steps * ops, cfg_.n_mels});
    result.stop_logits = torch::stack(stops, 1);
    result.alignments = torch::stack(aligns, 1);
    result.ops = ops;
    result.steps = steps;
    return result;
}

InferenceResult AcousticModelImpl::infer(const torch::Tensor& tokens, const torch::Tensor& z, std::int64_t ops,
                                         std::int64_t max_steps) {
    torch::NoGradGuard no_grad;
    if (tokens.dim() != 1 || tokens.size(0) < 1) throw ShapeError("infer expects a non-empty 1-D token sequence");
    auto tok = tokens.unsqueeze(0);
    auto lengths = torch::full({1}, tokens.size(0), torch::kInt64);
    auto memory = condition_memory(encode(tok, lengths), z.reshape({1, -1}).to(memory_dtype()));
    auto mask = sequence_mask(lengths, tokens.size(0));
    auto processed = decoder_->attention()->process_memory(memory);
    auto state = decoder_->initial_state(memory);
    auto feedback = torch::full({1, cfg_.n_mels}, cfg_.pad_value, memory.options());

    InferenceResult result;
    std::vector<torch::Tensor> frames, aligns;
    for (std::int64_t t = 0; t < max_steps; ++t) {
        auto out = decoder_->step(feedback, state, memory, processed, mask);
        auto sliced = slice_ops(out, ops)[0];  // (ops, n_mels)
        frames.push_back(sliced);
        aligns.push_back(state.attention.weights[0]);
        feedback = sliced.select(0, ops - 1).unsqueeze(0);
        ++result.steps;
        if (torch::sigmoid(out.stop_logit).item<double>() > 0.5) {
            result.stop_step = t;
            break;
        }
    }
    result.hit_max_steps = result.stop_step < 0;
    if (frames.empty()) {
        result.frames = torch::zeros({0, cfg_.n_mels}, memory.options());
        result.alignments = torch::zeros({0, tokens.size(0)}, memory.options());
    } else {
        result.frames = torch::cat(frames, 0);
        result.alignments = torch::stack(aligns, 0);
    }
    return result;
}

}  // namespace etts::acoustic
