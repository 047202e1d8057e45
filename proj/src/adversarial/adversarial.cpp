#include "etts/adversarial/adversarial.hpp"

#include "etts/acoustic/loss.hpp"
#include "etts/error.hpp"

#include <cmath>
#include <map>

namespace etts::adversarial {

namespace F = torch::nn::functional;

namespace {

torch::Tensor l2_normalize(const torch::Tensor& x) { return x / x.norm().clamp_min(1e-12); }

}  // namespace


torch::Tensor spectral_sigma(const torch::Tensor& weight, const PowerIterationState& state) {
    auto w = weight.reshape({weight.size(0), -1});
    return torch::dot(state.u, torch::mv(w, state.v));
}

namespace {

void power_iterate(const torch::Tensor& weight, int iters, PowerIterationState& state) {
    torch::NoGradGuard no_grad;
    auto w = weight.detach().reshape({weight.size(0), -1});
    for (int i = 0; i < iters; ++i) {
        state.v = l2_normalize(torch::mv(w.t(), state.u));
        state.u = l2_normalize(torch::mv(w, state.v));
    }
}

torch::Tensor divide_by_sigma(const torch::Tensor& weight, const PowerIterationState& state) {
    auto sigma = spectral_sigma(weight, state);
    if (std::abs(sigma.item<double>()) < 1e-12) return weight;
    return weight / sigma;
}

}  // namespace

PowerIterationState init_power_iteration(const torch::Tensor& weight, torch::Generator generator, int warmup) {
    torch::NoGradGuard no_grad;
    auto w = weight.detach().reshape({weight.size(0), -1});
    auto u = l2_normalize(at::normal(0.0, 1.0, {w.size(0)}, generator, w.options().requires_grad(false)));
    PowerIterationState state{u, l2_normalize(torch::mv(w.t(), u))};
    power_iterate(weight, warmup, state);
    return state;
}

torch::Tensor spectral_normalize(const torch::Tensor& weight, int iters, PowerIterationState& state) {
    if (iters < 1) throw ConfigError("spectral_normalize needs at least one power iteration");
    if (!state.u.defined()) state = init_power_iteration(weight);
    power_iterate(weight, iters, state);
    return divide_by_sigma(weight, state);
}

// ---------------------------------------------------------------------------

SNConv1dImpl::SNConv1dImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t padding, int iters)
    : padding_(padding), iters_(iters) {
    torch::nn::Conv1d proto(torch::nn::Conv1dOptions(in, out, kernel));
    auto w = proto->weight.detach().clone();
    torch::nn::init::orthogonal_(w);
    weight = register_parameter("weight", w);
    bias = register_parameter("bias", proto->bias.detach().clone());
    auto state = init_power_iteration(weight);
    u_ = register_buffer("u", state.u);
    v_ = register_buffer("v", state.v);
}

torch::Tensor SNConv1dImpl::normalized_weight(int iters) {
    PowerIterationState state{u_, v_};
    power_iterate(weight, iters, state);
    u_.detach().copy_(state.u);
    v_.detach().copy_(state.v);
    return divide_by_sigma(weight, state);
}

torch::Tensor SNConv1dImpl::normalized_weight() { return divide_by_sigma(weight, {u_, v_}); }

torch::Tensor SNConv1dImpl::forward(const torch::Tensor& x) {
    auto w = is_training() ? normalized_weight(iters_) : normalized_weight();
    return F::conv1d(x, w, F::Conv1dFuncOptions().bias(bias).padding(padding_));
}

SelfAttention1dImpl::SelfAttention1dImpl(std::int64_t channels, int iters) {
    const auto inner = std::max<std::int64_t>(channels / 8, 1);
    query_ = register_module("query", SNConv1d(channels, inner, 1, 0, iters));
    key_ = register_module("key", SNConv1d(channels, inner, 1, 0, iters));
    value_ = register_module("value", SNConv1d(channels, channels, 1, 0, iters));
    gamma = register_parameter("gamma", torch::zeros({1}));
}

torch::Tensor SelfAttention1dImpl::forward(const torch::Tensor& x) {
    auto q = query_->forward(x);                                    // (B, C', T)
    auto k = key_->forward(x);                                      // (B, C', T)
    auto attn = torch::softmax(torch::bmm(q.transpose(1, 2), k), -1);  // (B, T, T)
    auto o = torch::bmm(value_->forward(x), attn.transpose(1, 2));  // (B, C, T)
    return x + gamma * o;
}

void DiscriminatorConfig::validate() const {
    if (channels.empty()) throw ConfigError("discriminator needs at least one conv block");
    if (attention_after < 0 || attention_after >= static_cast<std::int64_t>(channels.size())) {
        throw ConfigError("discriminator.attention_after must index a conv block");
    }
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("discriminator.kernel must be odd");
    if (sn_iters < 1) throw ConfigError("discriminator.sn_iters must be >= 1");
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::int64_t in = cfg_.n_mels;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
        blocks_.push_back(register_module("block" + std::to_string(i),
                                          SNConv1d(in, cfg_.channels[i], cfg_.kernel, cfg_.kernel / 2, cfg_.sn_iters)));
        in = cfg_.channels[i];
        if (static_cast<std::int64_t>(i) == cfg_.attention_after) {
            attention_ = register_module("attention", SelfAttention1d(in, cfg_.sn_iters));
        }
    }
    head_ = register_module("head", SNConv1d(in, 1, 1, 0, cfg_.sn_iters));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& crops) {
    if (crops.dim() != 3 || crops.size(2) != cfg_.n_mels) throw ShapeError("discriminator expects (B, width, n_mels)");
    auto x = ((crops - cfg_.pad_value) / std::abs(cfg_.pad_value)).transpose(1, 2);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        x = F::leaky_relu(blocks_[i]->forward(x), F::LeakyReLUFuncOptions().negative_slope(cfg_.leaky_slope));
        if (static_cast<std::int64_t>(i) == cfg_.attention_after) x = attention_->forward(x);
    }
    return head_->forward(x.mean(2, /*keepdim=*/true)).reshape({-1});
}

std::vector<SNConv1d> DiscriminatorImpl::sn_layers() {
    std::vector<SNConv1d> layers;
    for (auto& m : modules(/*include_self=*/false)) {
        if (auto sn = std::dynamic_pointer_cast<SNConv1dImpl>(m)) layers.emplace_back(sn);
    }
    return layers;
}

// ---------------------------------------------------------------------------

WindowCrop random_window(const torch::Tensor& mel, std::int64_t width, std::mt19937_64& rng) {
    if (width < 1) throw ConfigError("window width must be >= 1");
    const auto frames = mel.size(0);
    if (frames <= width) return {0, frames, mel};
    std::uniform_int_distribution<std::int64_t> dist(0, frames - width);
    const auto start = dist(rng);
    return {start, width, mel.slice(0, start, start + width)};
}

std::vector<CropPair> paired_windows(const torch::Tensor& real, const torch::Tensor& fake,
                                     const torch::Tensor& mel_lengths, std::int64_t width, std::mt19937_64& rng) {
    std::vector<CropPair> pairs;
    auto lengths = mel_lengths.to(torch::kCPU, torch::kInt64);
    for (std::int64_t b = 0; b < real.size(0); ++b) {
        const auto len = lengths[b].item<std::int64_t>();
        auto real_crop = random_window(real[b].slice(0, 0, len), width, rng);
        WindowCrop fake_crop{real_crop.start, real_crop.width,
                             fake[b].slice(0, real_crop.start, real_crop.start + real_crop.width)};
        pairs.push_back({real_crop, fake_crop});
    }
    return pairs;
}

torch::Tensor score_crops(Discriminator& disc, const std::vector<WindowCrop>& crops) {
    std::map<std::int64_t, std::vector<std::size_t>> by_width;
    for (std::size_t i = 0; i < crops.size(); ++i) by_width[crops[i].width].push_back(i);
    std::vector<torch::Tensor> scores(crops.size());
    for (const auto& [width, idx] : by_width) {
        std::vector<torch::Tensor> batch;
        for (auto i : idx) batch.push_back(crops[i].frames);
        auto s = disc->forward(torch::stack(batch, 0));
        for (std::size_t j = 0; j < idx.size(); ++j) scores[idx[j]] = s[static_cast<std::int64_t>(j)];
    }
    return torch::stack(scores, 0);
}

torch::Tensor d_hinge_loss(const torch::Tensor& score_fake, const torch::Tensor& score_real) {
    return -torch::clamp_max(-1.0 - score_fake, 0.0).mean() - torch::clamp_max(-1.0 + score_real, 0.0).mean();
}

GanLossReport g_composite_loss(const torch::Tensor& pred, const torch::Tensor& target,
                               const torch::Tensor& mel_lengths, const torch::Tensor& score_fake,
                               const torch::Tensor& score_real, const acoustic::GaussianPosterior& q,
                               double alpha, double beta) {
    if (!score_fake.sizes().equals(score_real.sizes())) throw ShapeError("real and fake score batches differ");
    GanLossReport r;
    r.alpha = alpha;
    r.beta = beta;
    r.g_l1 = acoustic::masked_l1(pred, target, mel_lengths);
    r.g_adv = (score_real.detach() - score_fake).mean();
    r.g_kld = acoustic::kld_closed_form(q).mean();
    r.total = r.g_l1 + alpha * r.g_adv + beta * r.g_kld;
    return r;
}

}  // namespace etts::adversarial
