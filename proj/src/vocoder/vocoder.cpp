#include "etts/vocoder/vocoder.hpp"

#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <cmath>
#include <sstream>

namespace etts::vocoder {

namespace F = torch::nn::functional;

void VocoderConfig::validate() const {
    auto positive = [](std::int64_t v, const char* name) {
        if (v < 1) throw ConfigError(std::string("vocoder.") + name + " must be >= 1");
    };
    positive(n_mels, "n_mels");
    positive(latent_dim, "latent_dim");
    positive(hop, "hop");
    positive(cond_lstm_hidden, "cond_lstm_hidden");
    positive(cond_lstm_layers, "cond_lstm_layers");
    positive(cond_channels, "cond_channels");
    positive(mixtures, "mixtures");
    positive(teacher_residual, "teacher_residual");
    positive(teacher_gate, "teacher_gate");
    positive(teacher_skip, "teacher_skip");
    positive(teacher_blocks, "teacher_blocks");
    positive(teacher_layers_per_block, "teacher_layers_per_block");
    positive(kernel, "kernel");
    positive(flow_channels, "flow_channels");
    positive(flow_dilation_cycle, "flow_dilation_cycle");
    if (flow_layers.empty()) throw ConfigError("vocoder.flow_layers must list at least one flow");
    for (auto n : flow_layers) positive(n, "flow_layers[]");
    if (quantization_levels < 2) throw ConfigError("vocoder.quantization_levels must be >= 2");
}

// ---------------------------------------------------------------------------

MoLParams mol_from_raw(const torch::Tensor& raw, std::int64_t mixtures, double log_scale_min) {
    if (raw.size(-1) != 3 * mixtures) throw ShapeError("mixture output must have 3K channels");
    auto parts = raw.split(mixtures, -1);
    return {parts[0], parts[1], torch::clamp_min(parts[2], log_scale_min)};
}

torch::Tensor Quantization::quantize(const torch::Tensor& x) const {
    const double steps = static_cast<double>(levels - 1);
    return torch::round((x.clamp(-1.0, 1.0) + 1.0) * (steps / 2.0)) * (2.0 / steps) - 1.0;
}

torch::Tensor Quantization::grid(const torch::TensorOptions& options) const {
    return torch::arange(levels, options) * (2.0 / static_cast<double>(levels - 1)) - 1.0;
}

torch::Tensor logistic_log_mass(const torch::Tensor& x, const torch::Tensor& mean, const torch::Tensor& log_scale,
                                double delta) {
    auto inv_s = torch::exp(-log_scale);
    auto centred = x - mean;
    auto upper = (centred + delta) * inv_s;
    auto lower = (centred - delta) * inv_s;
    // sigma(a) - sigma(b) = sigma(a) * sigma(-b) * (1 - exp(b - a))
    auto interior = torch::log_sigmoid(upper) + torch::log_sigmoid(-lower) +
                    torch::log(-torch::expm1(-2.0 * delta * inv_s));
    auto low_edge = x <= (-1.0 + 0.5 * delta);
    auto high_edge = x >= (1.0 - 0.5 * delta);
    auto out = torch::where(low_edge, torch::log_sigmoid(upper), interior);
    return torch::where(high_edge, torch::log_sigmoid(-lower), out);
}

torch::Tensor mol_log_prob(const torch::Tensor& x, const MoLParams& p, double delta) {
    auto log_w = torch::log_softmax(p.logits, -1);
    return torch::logsumexp(log_w + logistic_log_mass(x.unsqueeze(-1), p.means, p.log_scales, delta), -1);
}

torch::Tensor logistic_log_density(const torch::Tensor& x, const torch::Tensor& mean, const torch::Tensor& log_scale) {
    auto u = (x - mean) * torch::exp(-log_scale);
    return torch::log_sigmoid(u) + torch::log_sigmoid(-u) - log_scale;
}

torch::Tensor mol_log_density(const torch::Tensor& x, const MoLParams& p) {
    auto log_w = torch::log_softmax(p.logits, -1);
    return torch::logsumexp(log_w + logistic_log_density(x.unsqueeze(-1), p.means, p.log_scales), -1);
}

torch::Tensor logistic_noise(at::IntArrayRef shape, const torch::TensorOptions& options,
                             std::optional<torch::Generator> generator) {
    auto u = at::rand(shape, generator, options).clamp(1e-7, 1.0 - 1e-7);
    return torch::log(u) - torch::log1p(-u);
}

// ---------------------------------------------------------------------------

ConditioningEncoderImpl::ConditioningEncoderImpl(const VocoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    lstm_ = register_module("lstm", torch::nn::LSTM(torch::nn::LSTMOptions(cfg_.n_mels, cfg_.cond_lstm_hidden)
                                                        .num_layers(cfg_.cond_lstm_layers)
                                                        .batch_first(true)
                                                        .bidirectional(true)));
    affine_ = register_module("affine", torch::nn::Conv1d(torch::nn::Conv1dOptions(
                                            2 * cfg_.cond_lstm_hidden + cfg_.latent_dim, cfg_.cond_channels, 1)));
}

torch::Tensor ConditioningEncoderImpl::frames(const torch::Tensor& mel, const torch::Tensor& z) {
    if (mel.dim() != 3 || mel.size(2) != cfg_.n_mels) throw ShapeError("conditioning expects mel (B, M, n_mels)");
    if (z.dim() != 2 || z.size(0) != mel.size(0) || z.size(1) != cfg_.latent_dim) {
        throw ShapeError("conditioning latent must be (B, " + std::to_string(cfg_.latent_dim) + ")");
    }
    auto h = std::get<0>(lstm_->forward(mel));
    auto zz = z.unsqueeze(1).expand({mel.size(0), mel.size(1), cfg_.latent_dim});
    auto x = torch::cat({h, zz}, 2).transpose(1, 2);
    return affine_->forward(x).transpose(1, 2);
}

torch::Tensor ConditioningEncoderImpl::forward(const torch::Tensor& mel, const torch::Tensor& z) {
    return frames(mel, z).repeat_interleave(cfg_.hop, 1);
}

GatedResidualLayerImpl::GatedResidualLayerImpl(std::int64_t residual, std::int64_t gate, std::int64_t skip,
                                               std::int64_t cond, std::int64_t kernel, std::int64_t dilation)
    : left_pad_((kernel - 1) * dilation) {
    dilated_ = register_module(
        "dilated", torch::nn::Conv1d(torch::nn::Conv1dOptions(residual, 2 * gate, kernel).dilation(dilation)));
    cond_ = register_module("cond", torch::nn::Conv1d(torch::nn::Conv1dOptions(cond, 2 * gate, 1).bias(false)));
    residual_ = register_module("residual", torch::nn::Conv1d(torch::nn::Conv1dOptions(gate, residual, 1)));
    skip_ = register_module("skip", torch::nn::Conv1d(torch::nn::Conv1dOptions(gate, skip, 1)));
}

std::pair<torch::Tensor, torch::Tensor> GatedResidualLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& c) {
    auto h = dilated_->forward(F::pad(x, F::PadFuncOptions({left_pad_, 0}))) + cond_->forward(c);
    auto parts = h.chunk(2, 1);
    auto g = torch::tanh(parts[0]) * torch::sigmoid(parts[1]);
    return {x + residual_->forward(g), skip_->forward(g)};
}

CausalStackImpl::CausalStackImpl(std::int64_t residual, std::int64_t gate, std::int64_t skip, std::int64_t cond,
                                 std::int64_t kernel, const std::vector<std::int64_t>& dilations, std::int64_t out,
                                 bool zero_output) {
    input_ = register_module("input", torch::nn::Conv1d(torch::nn::Conv1dOptions(1, residual, 1)));
    for (std::size_t i = 0; i < dilations.size(); ++i) {
        layers_.push_back(register_module("layer" + std::to_string(i),
                                          GatedResidualLayer(residual, gate, skip, cond, kernel, dilations[i])));
    }
    post1_ = register_module("post1", torch::nn::Conv1d(torch::nn::Conv1dOptions(skip, skip, 1)));
    post2_ = register_module("post2", torch::nn::Conv1d(torch::nn::Conv1dOptions(skip, out, 1)));
    if (zero_output) {
        torch::NoGradGuard no_grad;
        post2_->weight.zero_();
        post2_->bias.zero_();
    }
}

torch::Tensor CausalStackImpl::forward(const torch::Tensor& x, const torch::Tensor& c) {
    const auto T = x.size(1);
    auto shifted = F::pad(x, F::PadFuncOptions({1, 0})).slice(1, 0, T).unsqueeze(1);
    auto h = input_->forward(shifted);
    auto cc = c.transpose(1, 2);
    torch::Tensor skips;
    for (auto& layer : layers_) {
        auto [res, sk] = layer->forward(h, cc);
        h = res;
        skips = skips.defined() ? skips + sk : sk;
    }
    auto y = post2_->forward(torch::relu(post1_->forward(torch::relu(skips))));
    return y.transpose(1, 2);
}

std::vector<std::int64_t> teacher_dilations(const VocoderConfig& cfg) {
    std::vector<std::int64_t> d;
    for (std::int64_t b = 0; b < cfg.teacher_blocks; ++b) {
        for (std::int64_t l = 0; l < cfg.teacher_layers_per_block; ++l) d.push_back(std::int64_t{1} << l);
    }
    return d;
}

std::vector<std::int64_t> flow_dilations(std::int64_t layers, std::int64_t cycle) {
    std::vector<std::int64_t> d;
    for (std::int64_t l = 0; l < layers; ++l) d.push_back(std::int64_t{1} << (l % cycle));
    return d;
}

TeacherImpl::TeacherImpl(const VocoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    conditioning_ = register_module("conditioning", ConditioningEncoder(cfg_));
    stack_ = register_module("stack", CausalStack(cfg_.teacher_residual, cfg_.teacher_gate, cfg_.teacher_skip,
                                                  cfg_.cond_channels, cfg_.kernel, teacher_dilations(cfg_),
                                                  3 * cfg_.mixtures));
}

MoLParams TeacherImpl::forward(const torch::Tensor& w, const torch::Tensor& cond) {
    if (w.dim() != 2 || cond.dim() != 3 || w.size(0) != cond.size(0) || w.size(1) != cond.size(1)) {
        throw ShapeError("teacher: waveform (B, T) and conditioning (B, T, C) lengths differ");
    }
    return mol_from_raw(stack_->forward(w, cond), cfg_.mixtures, cfg_.log_scale_min);
}

torch::Tensor teacher_nll_loss(Teacher& teacher, const torch::Tensor& w, const torch::Tensor& cond) {
    Quantization q{teacher->config().quantization_levels};
    auto wq = q.quantize(w);
    auto p = teacher->forward(wq, cond);
    return -mol_log_prob(wq, p, q.half_bin()).mean();
}

IafResult iaf_apply(const torch::Tensor& s_in, const torch::Tensor& mu, const torch::Tensor& log_sigma) {
    return {mu + torch::exp(log_sigma) * s_in, log_sigma.sum(-1)};
}

std::pair<torch::Tensor, torch::Tensor> compose_affine(const std::vector<torch::Tensor>& mu,
                                                       const std::vector<torch::Tensor>& log_sigma) {
    if (mu.empty() || mu.size() != log_sigma.size()) throw ShapeError("compose_affine needs matching flow lists");
    auto mu_tot = torch::zeros_like(mu[0]);
    auto ls_tot = torch::zeros_like(log_sigma[0]);
    for (std::size_t f = 0; f < mu.size(); ++f) {
        mu_tot = mu[f] + torch::exp(log_sigma[f]) * mu_tot;
        ls_tot = ls_tot + log_sigma[f];
    }
    return {mu_tot, ls_tot};
}

StudentImpl::StudentImpl(const VocoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t f = 0; f < cfg_.flow_layers.size(); ++f) {
        flows_.push_back(register_module(
            "flow" + std::to_string(f),
            CausalStack(cfg_.flow_channels, cfg_.flow_channels, cfg_.flow_channels, cfg_.cond_channels, cfg_.kernel,
                        flow_dilations(cfg_.flow_layers[f], cfg_.flow_dilation_cycle), 2, /*zero_output=*/true)));
    }
}

StudentOutput StudentImpl::forward(const torch::Tensor& cond, const torch::Tensor& noise) {
    if (noise.dim() != 2 || cond.dim() != 3 || noise.size(0) != cond.size(0) || noise.size(1) != cond.size(1)) {
        throw ShapeError("student: noise (B, T) and conditioning (B, T, C) lengths differ");
    }
    StudentOutput out;
    auto x = noise;
    for (auto& flow : flows_) {
        auto params = flow->forward(x, cond);
        auto mu = params.select(2, 0);
        auto ls = params.select(2, 1);
        x = iaf_apply(x, mu, ls).output;
        out.flow_mu.push_back(mu);
        out.flow_log_sigma.push_back(ls);
    }
    out.waveform = x;
    std::tie(out.mu_tot, out.log_sigma_tot) = compose_affine(out.flow_mu, out.flow_log_sigma);
    return out;
}

// ---------------------------------------------------------------------------

torch::Tensor distill_kl_term(const MoLParams& teacher_at_student, const torch::Tensor& mu_tot,
                              const torch::Tensor& log_sigma_tot, std::int64_t n_mc,
                              std::optional<torch::Generator> generator) {
    if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
    std::vector<std::int64_t> shape{n_mc};
    for (auto s : mu_tot.sizes()) shape.push_back(s);
    auto eps = logistic_noise(shape, mu_tot.options().requires_grad(false), generator);
    auto x = mu_tot.unsqueeze(0) + torch::exp(log_sigma_tot).unsqueeze(0) * eps;
    auto cross_entropy = -mol_log_density(x, teacher_at_student).mean(0);
    return (cross_entropy - (log_sigma_tot + 2.0)).mean();
}

torch::Tensor spectral_loss(const torch::Tensor& a, const torch::Tensor& b, std::int64_t fft, std::int64_t hop) {
    if (!a.sizes().equals(b.sizes())) throw ShapeError("spectral loss inputs differ in shape");
    if (a.size(-1) < fft) throw ShapeError("spectral loss input shorter than the FFT size");
    auto window = torch::hann_window(fft, a.options().requires_grad(false));
    auto log_mag = [&](const torch::Tensor& x) {
        auto spec = torch::stft(x, fft, hop, fft, window, /*center=*/false, "reflect", /*normalized=*/false,
                                /*onesided=*/true, /*return_complex=*/true);
        return torch::log(spec.abs().clamp_min(1e-5));
    };
    return (log_mag(a) - log_mag(b)).pow(2).mean();
}

DistillTerms distill_loss(const StudentOutput& student, Teacher& teacher, const torch::Tensor& cond,
                          const torch::Tensor& target, const DistillOptions& options,
                          std::optional<torch::Generator> generator) {
    DistillTerms terms;
    auto p = teacher->forward(student.waveform, cond);
    terms.kl_term = distill_kl_term(p, student.mu_tot, student.log_sigma_tot, options.n_mc, generator);
    terms.spectral_term = spectral_loss(student.waveform, target, options.stft_fft, options.stft_hop);
    terms.total = terms.kl_term + options.spectral_weight * terms.spectral_term;
    return terms;
}

// ---------------------------------------------------------------------------

std::string tensor_hash(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    std::ostringstream head;
    head << c.scalar_type() << c.sizes();
    std::string bytes = head.str();
    bytes.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
    return util::fnv1a_hex(bytes);
}

FrozenGuard::FrozenGuard(torch::nn::Module& module) {
    for (auto& p : module.named_parameters()) {
        p.value().set_requires_grad(false);
        stamps_[p.key()] = {p.value()._version(), tensor_hash(p.value())};
    }
    for (auto& b : module.named_buffers()) stamps_[b.key()] = {b.value()._version(), tensor_hash(b.value())};
}

void FrozenGuard::verify(torch::nn::Module& module) const {
    auto check = [&](const std::string& name, const torch::Tensor& t) {
        auto it = stamps_.find(name);
        if (it == stamps_.end()) throw Error("frozen module gained tensor " + name);
        if (t._version() != it->second.version || tensor_hash(t) != it->second.hash) {
            throw Error("frozen tensor modified: " + name);
        }
    };
    for (auto& p : module.named_parameters()) check(p.key(), p.value());
    for (auto& b : module.named_buffers()) check(b.key(), b.value());
}

}  // namespace etts::vocoder
