#include "etts/acoustic/loss.hpp"
#include "etts/acoustic/model.hpp"
#include "etts/acoustic/vae.hpp"
#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/checks/oracles.hpp"
#include "etts/error.hpp"

#include <cmath>
#include <random>

namespace etts::checks {

namespace {

using namespace etts::acoustic;

struct TinyInstance {
    AcousticModel model{nullptr};
    torch::Tensor tokens, token_lengths, mel, mel_lengths;
};

/// Float64 model with a random batch of two utterances.
TinyInstance tiny_instance(const AcousticConfig& cfg, std::int64_t frames, std::uint64_t seed) {
    torch::manual_seed(seed);
    TinyInstance t;
    t.model = AcousticModel(cfg);
    t.model->to(torch::kFloat64);
    t.model->eval();
    const std::int64_t n = 4;
    t.tokens = torch::randint(0, cfg.vocab_size, {2, n}, torch::kInt64);
    t.token_lengths = torch::tensor({n, n - 1}, torch::kInt64);
    t.mel = torch::randn({2, frames, cfg.n_mels}, torch::kFloat64) - 4.0;
    t.mel_lengths = torch::tensor({frames, frames - 1}, torch::kInt64);
    return t;
}

torch::Tensor loss_value(TinyInstance& t, std::int64_t ops, double beta) {
    auto q = t.model->posterior(t.mel, t.mel_lengths);
    auto out = t.model->teacher_forced(t.tokens, t.token_lengths, t.mel, t.mel_lengths, q.mu, ops);
    return acoustic_loss(out.frames, t.mel, t.mel_lengths, out.stop_logits, ops, q, beta).total;
}

}  // namespace

std::vector<Check> acoustic_checks() {
    std::vector<Check> c;

    c.push_back({"acoustic.encoder_shapes", [] {
        torch::manual_seed(1);
        auto cfg = small_acoustic_config(8);
        AcousticModel m(cfg);
        m->eval();
        torch::NoGradGuard ng;
        auto one = m->encode(torch::tensor({{3}}, torch::kInt64), torch::tensor({1}, torch::kInt64));
        expect(one.size(1) == 1, "N = 1 must give one memory row");
        auto x = torch::tensor({{1, 2, 3, 4, 5}}, torch::kInt64);
        auto len = torch::tensor({5}, torch::kInt64);
        auto a = m->encode(x, len);
        expect(torch::equal(a, m->encode(x, len)), "encoder must be deterministic in eval mode");
        auto p = m->encode(torch::tensor({{5, 4, 3, 2, 1}}, torch::kInt64), len);
        expect(!torch::allclose(a, p), "a permutation must change the memory");
        bool threw = false;
        try {
            m->encode(torch::tensor({{cfg.vocab_size}}, torch::kInt64), torch::tensor({1}, torch::kInt64));
        } catch (const DataError&) {
            threw = true;
        }
        expect(threw, "out-of-vocabulary ids must be rejected");
        return std::string("ok");
    }});

    c.push_back({"acoustic.attention_softmax", [] {
        auto w = attention_weights(torch::zeros({1, 7}, torch::kFloat64));
        expect_near((w - 1.0 / 7.0).abs().max().item<double>(), 0.0, 1e-15, "uniform weights");
        auto s = torch::zeros({1, 5}, torch::kFloat64);
        s[0][3] = 1e4;
        expect_near(attention_weights(s)[0][3].item<double>(), 1.0, 1e-12, "saturated weight");
        auto memory = torch::randn({1, 5, 3}, torch::kFloat64);
        auto onehot = torch::zeros({1, 5}, torch::kFloat64);
        onehot[0][2] = 1.0;
        expect(torch::allclose(attention_context(onehot, memory)[0], memory[0][2]), "one-hot context");
        return std::string("ok");
    }});

    c.push_back({"acoustic.decoder_step_shape", [] {
        torch::manual_seed(2);
        auto cfg = small_acoustic_config(8);
        AcousticModel m(cfg);
        m->eval();
        torch::NoGradGuard ng;
        auto memory = torch::zeros({1, 3, cfg.memory_dim()});
        auto processed = m->decoder()->attention()->process_memory(memory);
        auto mask = torch::ones({1, 3}, torch::kBool);
        auto s1 = m->decoder()->initial_state(memory);
        auto s2 = m->decoder()->initial_state(memory);
        auto feedback = torch::zeros({1, cfg.n_mels});
        auto a = m->decoder()->step(feedback, s1, memory, processed, mask);
        auto b = m->decoder()->step(feedback, s2, memory, processed, mask);
        expect(a.raw_frames.sizes() == torch::IntArrayRef({1, 5, cfg.n_mels}), "raw frames must be (1, 5, n_mels)");
        expect(torch::equal(a.raw_frames, b.raw_frames), "decoder step must be deterministic");
        expect(std::isfinite(a.stop_logit.item<double>()), "stop logit must be finite");
        return std::string("(5, n_mels)");
    }});

    c.push_back({"acoustic.slice_ops", [] {
        DecoderStepOutput out{torch::arange(10, torch::kFloat64).reshape({1, 5, 2}), torch::zeros({1})};
        expect(torch::equal(slice_ops(out, 5), out.raw_frames), "ops 5 is the identity");
        expect(torch::equal(slice_ops(out, 2), out.raw_frames.slice(1, 0, 2)), "ops 2 keeps rows 1 and 2");
        for (int k = 1; k < 5; ++k) {
            expect(torch::equal(slice_ops(out, k + 1).slice(1, 0, k), slice_ops(out, k)), "prefix property");
        }
        for (int bad : {0, 6}) {
            bool threw = false;
            try {
                slice_ops(out, bad);
            } catch (const ShapeError&) {
                threw = true;
            }
            expect(threw, "ops out of range must be rejected");
        }
        return std::string("ok");
    }});

    c.push_back({"acoustic.ops_slicing_equivalence", [] {
        auto t = tiny_instance(small_acoustic_config(8), 20, 3);
        torch::NoGradGuard ng;
        auto mask = sequence_mask(t.token_lengths, t.tokens.size(1));
        auto memory = t.model->condition_memory(t.model->encode(t.tokens, t.token_lengths),
                                                torch::randn({2, t.model->config().latent_dim}, torch::kFloat64));
        auto feedback = torch::randn({2, 6, 8}, torch::kFloat64) - 4.0;
        auto full = t.model->decode_with_feedback(memory, mask, feedback, 5);
        double worst = 0.0;
        for (std::int64_t k : {2, 3, 4}) {
            auto part = t.model->decode_with_feedback(memory, mask, feedback, k);
            auto frames = part.frames.reshape({2, 6, k, 8});
            worst = std::max(worst, (frames - full.raw.slice(2, 0, k)).abs().max().item<double>());
        }
        expect(worst <= 1e-6, "max abs diff " + fmt(worst));
        return "max abs diff " + fmt(worst);
    }});

    c.push_back({"acoustic.teacher_forced_lengths", [] {
        auto t = tiny_instance(tiny_acoustic_config(), 20, 4);
        torch::NoGradGuard ng;
        auto z = torch::zeros({2, 2}, torch::kFloat64);
        auto five = t.model->teacher_forced(t.tokens, t.token_lengths, t.mel, t.mel_lengths, z, 5);
        auto two = t.model->teacher_forced(t.tokens, t.token_lengths, t.mel, t.mel_lengths, z, 2);
        expect(five.steps == 4, "M = 20, ops 5 gives 4 steps");
        expect(two.steps == 10, "M = 20, ops 2 gives 10 steps");
        for (std::int64_t m : {1, 7, 13}) {
            auto mel = t.mel.slice(1, 0, m);
            auto lens = torch::tensor({m, m}, torch::kInt64);
            for (std::int64_t k = 1; k <= 5; ++k) {
                auto out = t.model->teacher_forced(t.tokens, t.token_lengths, mel, lens, z, k);
                expect(out.frames.size(1) == k * decoder_steps(m, k), "length k * ceil(M / k)");
            }
        }
        return std::string("ok");
    }});

    c.push_back({"acoustic.attention_simplex", [] {
        auto t = tiny_instance(small_acoustic_config(8), 15, 5);
        torch::NoGradGuard ng;
        auto z = torch::randn({2, t.model->config().latent_dim}, torch::kFloat64);
        auto out = t.model->teacher_forced(t.tokens, t.token_lengths, t.mel, t.mel_lengths, z, 2);
        expect(out.alignments.min().item<double>() >= 0.0, "weights must be non-negative");
        auto sums = out.alignments.sum(-1);
        expect_near((sums - 1.0).abs().max().item<double>(), 0.0, 1e-5, "weights sum");
        auto cumulative = out.alignments.cumsum(1);
        expect((cumulative.slice(1, 1) - cumulative.slice(1, 0, -1) >= 0).all().item<bool>(),
               "cumulative weights must be non-decreasing");
        return std::string("ok");
    }});

    c.push_back({"acoustic.vae_posterior", [] {
        torch::manual_seed(6);
        AcousticConfig defaults;
        expect(defaults.latent_dim == 64, "default latent_dim 64");
        auto cfg = small_acoustic_config(8);
        AcousticModel m(cfg);
        m->eval();
        torch::NoGradGuard ng;
        auto lens = torch::tensor({12}, torch::kInt64);
        auto q0 = m->posterior(torch::zeros({1, 12, 8}), lens);
        expect(torch::isfinite(q0.mu).all().item<bool>() && torch::isfinite(q0.log_var).all().item<bool>(),
               "zero spectrogram gives a finite posterior");
        auto qa = m->posterior(torch::randn({1, 12, 8}) - 4.0, lens);
        auto qb = m->posterior(torch::randn({1, 12, 8}) - 4.0, lens);
        expect(!torch::allclose(qa.mu, qb.mu), "different spectrograms must give different means");
        return std::string("ok");
    }});

    c.push_back({"acoustic.reparameterize", [] {
        auto mu = torch::tensor({0.5, -1.0, 2.0}, torch::kFloat64);
        auto lv = torch::tensor({0.0, -1.0, 0.7}, torch::kFloat64);
        auto noise = torch::randn({3}, torch::kFloat64);
        expect(torch::equal(reparameterize({mu, lv}, torch::zeros({3}, torch::kFloat64)), mu), "noise 0 gives mu");
        expect(torch::allclose(reparameterize({torch::zeros({3}, torch::kFloat64), torch::zeros({3}, torch::kFloat64)},
                                              noise),
                               noise),
               "standard posterior gives the noise");
        torch::manual_seed(7);
        const std::int64_t n = 100000;
        auto z = reparameterize({mu.expand({n, 3}), lv.expand({n, 3})}, torch::randn({n, 3}, torch::kFloat64));
        auto var = torch::exp(lv);
        auto mean_se = torch::sqrt(var / n);
        auto var_se = var * std::sqrt(2.0 / (n - 1));
        expect(((z.mean(0) - mu).abs() <= 3 * mean_se).all().item<bool>(), "sample mean outside 3 standard errors");
        expect(((z.var(0) - var).abs() <= 3 * var_se).all().item<bool>(), "sample variance outside 3 standard errors");
        return std::string("moments within 3 SE");
    }});

    c.push_back({"acoustic.kld_closed_form", [] {
        auto zero = torch::zeros({64}, torch::kFloat64);
        expect_near(kld_closed_form({zero, zero}).item<double>(), 0.0, 0.0, "prior posterior");
        expect_near(kld_closed_form({torch::ones({1}, torch::kFloat64), torch::zeros({1}, torch::kFloat64)}).item<double>(),
                    0.5, 1e-15, "mu = 1");
        torch::manual_seed(8);
        double worst = 0.0;
        for (int i = 0; i < 3; ++i) {
            auto mu = torch::rand({16}, torch::kFloat64) * 2 - 1;
            auto lv = torch::rand({16}, torch::kFloat64) * 2.5 - 1.5;
            const double closed = kld_closed_form({mu, lv}).item<double>();
            expect(closed >= 0.0, "KLD must be non-negative");
            auto mc = kld_monte_carlo(mu, lv, 1000000, 100 + i);
            worst = std::max(worst, std::abs(mc.mean - closed) / closed);
        }
        expect(worst < 0.01, "relative error " + fmt(worst));
        return "MC relative error " + fmt(worst);
    }});

    c.push_back({"acoustic.loss_terms", [] {
        auto y = torch::randn({2, 6, 3}, torch::kFloat64);
        auto lens = torch::tensor({6, 4}, torch::kInt64);
        auto stop = torch::randn({2, 3}, torch::kFloat64);
        GaussianPosterior zero{torch::zeros({2, 4}, torch::kFloat64), torch::zeros({2, 4}, torch::kFloat64)};
        auto exact = acoustic_loss(y, y, lens, stop, 2, zero, 0.7);
        expect_near(exact.l1.item<double>(), 0.0, 0.0, "L1 of identical frames");
        expect_near(exact.kld.item<double>(), 0.0, 0.0, "KLD of the prior");
        GaussianPosterior q{torch::randn({2, 4}, torch::kFloat64), torch::randn({2, 4}, torch::kFloat64)};
        auto pred = torch::randn({2, 6, 3}, torch::kFloat64);
        expect_near(acoustic_loss(pred, y, lens, stop, 2, q, 0.0).total.item<double>(),
                    acoustic_loss(pred, y, lens, stop, 2, zero, 0.0).total.item<double>(), 1e-15,
                    "beta = 0 ignores q");

        // hand-computed scalar oracle
        double l1 = 0.0, count = 0.0;
        auto pa = pred.accessor<double, 3>();
        auto ya = y.accessor<double, 3>();
        const std::int64_t valid[] = {6, 4};
        for (int b = 0; b < 2; ++b)
            for (std::int64_t t = 0; t < valid[b]; ++t)
                for (int d = 0; d < 3; ++d) {
                    l1 += std::abs(pa[b][t][d] - ya[b][t][d]);
                    count += 1.0;
                }
        double kld = 0.0;
        auto mu = q.mu.accessor<double, 2>();
        auto lv = q.log_var.accessor<double, 2>();
        for (int b = 0; b < 2; ++b)
            for (int d = 0; d < 4; ++d) kld += 0.5 * (mu[b][d] * mu[b][d] + std::exp(lv[b][d]) - 1 - lv[b][d]);
        kld /= 2.0;
        double bce = 0.0, n = 0.0;
        auto sa = stop.accessor<double, 2>();
        const std::int64_t final_step[] = {2, 1};
        for (int b = 0; b < 2; ++b)
            for (std::int64_t t = 0; t <= final_step[b]; ++t) {
                const double x = sa[b][t];
                const double target = t == final_step[b] ? 1.0 : 0.0;
                bce += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
                n += 1.0;
            }
        const double expected = l1 / count + 0.3 * kld + bce / n;
        expect_near(acoustic_loss(pred, y, lens, stop, 2, q, 0.3).total.item<double>(), expected, 1e-12,
                    "loss sum");
        bool threw = false;
        try {
            acoustic_loss(pred.slice(2, 0, 2), y, lens, stop, 2, q, 0.3);
        } catch (const ShapeError&) {
            threw = true;
        }
        expect(threw, "shape mismatch must be rejected");
        return std::string("ok");
    }});

    c.push_back({"acoustic.loss_gradient", [] {
        auto t = tiny_instance(tiny_acoustic_config(), 4, 9);
        t.tokens = t.tokens.slice(1, 0, 2);
        t.token_lengths = torch::tensor({2, 1}, torch::kInt64);
        auto params = named_parameters(*t.model);
        std::int64_t total = 0;
        for (auto& p : params) total += p.second.numel();
        expect(total <= 500, "instance exercises " + std::to_string(total) + " parameters");
        auto report = gradient_check([&] { return loss_value(t, 2, 0.5); }, params);
        expect(report.passed, "max relative error " + fmt(report.max_rel_error) + " at " + report.worst);
        return std::to_string(report.entries) + " entries, max rel error " + fmt(report.max_rel_error);
    }});

    c.push_back({"acoustic.infer_bounds", [] {
        torch::manual_seed(10);
        auto cfg = small_acoustic_config(8);
        AcousticModel m(cfg);
        m->eval();
        auto tokens = torch::tensor({1, 2, 3}, torch::kInt64);
        auto z = torch::zeros({cfg.latent_dim});
        auto one = m->infer(tokens, z, 2, 1);
        expect(one.frames.size(0) == 2, "max_steps 1 at ops 2 gives 2 frames");
        auto capped = m->infer(tokens, z, 3, 25);
        expect(capped.steps <= 25 && capped.frames.size(0) == capped.steps * 3, "max_steps honoured");
        return "stopped after " + std::to_string(capped.steps) + " steps";
    }});

    return c;
}

}  // namespace etts::checks
