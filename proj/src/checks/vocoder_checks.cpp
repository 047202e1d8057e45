#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/checks/oracles.hpp"
#include "etts/error.hpp"
#include "etts/vocoder/vocoder.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <random>

namespace etts::checks {

namespace {

using namespace etts::vocoder;

MoLParams single_logistic(double mean, double log_scale, std::int64_t length = 1) {
    auto opts = torch::kFloat64;
    return {torch::zeros({length, 1}, opts), torch::full({length, 1}, mean, opts),
            torch::full({length, 1}, log_scale, opts)};
}

MoLParams random_mixture(std::int64_t length, std::int64_t k, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return {at::normal(0.0, 1.0, {length, k}, gen, torch::kFloat64),
            at::normal(0.0, 0.5, {length, k}, gen, torch::kFloat64),
            at::normal(-2.0, 0.8, {length, k}, gen, torch::kFloat64)};
}

/// Sums every bin mass of a `levels` grid for each of the `length` mixtures.
torch::Tensor grid_mass(const MoLParams& p, std::int64_t levels) {
    Quantization q{levels};
    auto grid = q.grid(torch::kFloat64);
    const auto length = p.logits.size(0);
    auto x = grid.unsqueeze(1).expand({levels, length});
    auto expand = [&](const torch::Tensor& t) { return t.unsqueeze(0).expand({levels, length, t.size(1)}); };
    MoLParams pe{expand(p.logits), expand(p.means), expand(p.log_scales)};
    return torch::exp(mol_log_prob(x, pe, q.half_bin())).sum(0);
}

void perturb_flows(Student& student, std::uint64_t seed) {
    torch::NoGradGuard ng;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    for (auto& item : student->named_parameters()) {
        if (item.key().find("post2") != std::string::npos) {
            item.value().copy_(at::normal(0.0, 0.3, item.value().sizes(), gen, item.value().scalar_type()));
        }
    }
}

}  // namespace

std::vector<Check> vocoder_checks() {
    std::vector<Check> c;

    c.push_back({"vocoder.conditioning_length", [] {
        torch::manual_seed(1);
        VocoderConfig defaults;
        expect(defaults.latent_dim == 64, "default latent_dim 64");
        auto cfg = tiny_vocoder_config();
        cfg.hop = 200;
        ConditioningEncoder enc(cfg);
        torch::NoGradGuard ng;
        auto mel = torch::randn({1, 10, cfg.n_mels});
        auto a = enc->forward(mel, torch::randn({1, cfg.latent_dim}));
        expect(a.size(1) == 2000, "M = 10, hop = 200 gives T = 2000");
        auto b = enc->forward(mel, torch::randn({1, cfg.latent_dim}));
        expect(!torch::allclose(a, b), "changing z must change the conditioning");
        bool threw = false;
        try {
            enc->forward(mel, torch::randn({1, cfg.latent_dim + 1}));
        } catch (const ShapeError&) {
            threw = true;
        }
        expect(threw, "latent dimension mismatch must be rejected");
        return std::string("T = 2000");
    }});

    c.push_back({"vocoder.mol_single_bin", [] {
        auto p = single_logistic(0.0, 0.0);
        const double lp = mol_log_prob(torch::zeros({1}, torch::kFloat64), p, 0.5).item<double>();
        const double expected = 2.0 / (1.0 + std::exp(-0.5)) - 1.0;
        expect_near(std::exp(lp), expected, 1e-12, "2 sigmoid(0.5) - 1");
        expect_near(lp, std::log(std::tanh(0.25)), 1e-12, "log mass");
        return "log p = " + fmt(lp);
    }});

    c.push_back({"vocoder.mol_completeness", [] {
        auto p = random_mixture(16, 10, 2);
        double worst = 0.0;
        for (std::int64_t levels : {8, 256}) {
            worst = std::max(worst, (grid_mass(p, levels) - 1.0).abs().max().item<double>());
        }
        expect(worst <= 1e-9, "mass deviation " + fmt(worst));
        // per-bin values against the plain-double oracle
        Quantization q{8};
        auto grid = q.grid(torch::kFloat64);
        auto w = torch::softmax(p.logits[0], 0);
        auto scales = torch::exp(p.log_scales[0]);
        std::vector<double> wv(w.data_ptr<double>(), w.data_ptr<double>() + 10);
        std::vector<double> mv(p.means[0].contiguous().data_ptr<double>(), p.means[0].contiguous().data_ptr<double>() + 10);
        std::vector<double> sv(scales.data_ptr<double>(), scales.data_ptr<double>() + 10);
        MoLParams row{p.logits[0].unsqueeze(0).expand({8, 10}), p.means[0].unsqueeze(0).expand({8, 10}),
                      p.log_scales[0].unsqueeze(0).expand({8, 10})};
        auto lp = mol_log_prob(grid, row, q.half_bin());
        for (int i = 0; i < 8; ++i) {
            const double x = grid[i].item<double>();
            expect_near(std::exp(lp[i].item<double>()), mol_bin_mass(x, wv, mv, sv, 8), 1e-12, "bin " + std::to_string(i));
        }
        return "max deviation " + fmt(worst);
    }});

    c.push_back({"vocoder.mol_one_hot", [] {
        auto p = random_mixture(5, 4, 3);
        auto x = torch::rand({5}, torch::kFloat64) * 2 - 1;
        for (std::int64_t k = 0; k < 4; ++k) {
            auto logits = torch::full({5, 4}, -1e4, torch::kFloat64);
            logits.select(1, k).fill_(0.0);
            MoLParams one{logits, p.means, p.log_scales};
            auto mixture = mol_log_prob(x, one, 1.0 / 255.0);
            auto single = logistic_log_mass(x, p.means.select(1, k), p.log_scales.select(1, k), 1.0 / 255.0);
            expect(torch::allclose(mixture, single, 0.0, 1e-10), "one-hot mixture equals component");
        }
        return std::string("ok");
    }});

    c.push_back({"vocoder.nll_near_delta", [] {
        Quantization q{32768};
        auto x = q.quantize(torch::rand({6}, torch::kFloat64) * 1.8 - 0.9);
        MoLParams p{torch::zeros({6, 1}, torch::kFloat64), x.unsqueeze(1),
                    torch::full({6, 1}, std::log(1e-7), torch::kFloat64)};
        const double nll = -mol_log_prob(x, p, q.half_bin()).mean().item<double>();
        expect(nll >= 0.0 && nll < 1e-6, "NLL " + fmt(nll));
        return "NLL " + fmt(nll);
    }});

    c.push_back({"vocoder.teacher_defaults", [] {
        VocoderConfig cfg;
        expect(cfg.teacher_skip == 256 && cfg.teacher_gate == 256, "256 skip and gate channels");
        expect(cfg.mixtures == 10, "10 logistic components");
        expect(cfg.flow_layers == std::vector<std::int64_t>({10, 10, 10, 30}), "flow layers 10 10 10 30");
        auto d = teacher_dilations(cfg);
        expect(d.size() == 20 && d.front() == 1 && d[9] == 512 && d[10] == 1, "doubling and reset dilations");
        return std::string("ok");
    }});

    c.push_back({"vocoder.teacher_causality", [] {
        torch::manual_seed(4);
        auto cfg = tiny_vocoder_config();
        cfg.teacher_blocks = 2;
        cfg.teacher_layers_per_block = 4;
        Teacher teacher(cfg);
        teacher->eval();
        torch::NoGradGuard ng;
        const std::int64_t T = 200;
        auto w = torch::rand({1, T}) * 2 - 1;
        auto cond = torch::randn({1, T, cfg.cond_channels});
        auto base = teacher->forward(w, cond);
        std::mt19937_64 rng(4);
        std::uniform_int_distribution<std::int64_t> pos(0, T - 1);
        for (int probe = 0; probe < 3; ++probe) {
            const auto t = pos(rng);
            auto w2 = w.clone();
            w2[0][t] += 0.5;
            auto out = teacher->forward(w2, cond);
            for (auto [a, b] : {std::pair{base.logits, out.logits}, std::pair{base.means, out.means},
                                std::pair{base.log_scales, out.log_scales}}) {
                expect(torch::equal(a.slice(1, 0, t + 1), b.slice(1, 0, t + 1)), "output at <= t changed");
            }
        }
        bool threw = false;
        try {
            teacher->forward(w, cond.slice(1, 0, T - 1));
        } catch (const ShapeError&) {
            threw = true;
        }
        expect(threw, "length mismatch must be rejected");
        return std::string("3 probes");
    }});

    c.push_back({"vocoder.teacher_nll_value", [] {
        torch::manual_seed(5);
        auto cfg = tiny_vocoder_config();
        Teacher teacher(cfg);
        teacher->to(torch::kFloat64);
        const std::vector<double> logits{0.3, -0.4}, means{-0.2, 0.25}, log_scales{-1.5, -2.0};
        {
            torch::NoGradGuard ng;
            for (auto& item : teacher->named_parameters()) {
                if (item.key().find("post2.weight") != std::string::npos) item.value().zero_();
                if (item.key().find("post2.bias") != std::string::npos) {
                    item.value().copy_(torch::tensor({logits[0], logits[1], means[0], means[1], log_scales[0], log_scales[1]},
                                                     torch::kFloat64));
                }
            }
        }
        auto w = torch::tensor({{-0.5, 0.1, 0.3, 0.9}}, torch::kFloat64);
        auto cond = torch::randn({1, 4, cfg.cond_channels}, torch::kFloat64);
        const double nll = teacher_nll_loss(teacher, w, cond).item<double>();

        Quantization q{cfg.quantization_levels};
        const double wsum = std::exp(logits[0]) + std::exp(logits[1]);
        std::vector<double> wv{std::exp(logits[0]) / wsum, std::exp(logits[1]) / wsum};
        std::vector<double> sv{std::exp(log_scales[0]), std::exp(log_scales[1])};
        auto xq = q.quantize(w)[0];
        double expected = 0.0;
        for (int t = 0; t < 4; ++t) expected -= std::log(mol_bin_mass(xq[t].item<double>(), wv, means, sv, q.levels));
        expected /= 4.0;
        expect_near(nll, expected, 1e-9, "pinned NLL");
        return "NLL " + fmt(nll);
    }});

    c.push_back({"vocoder.iaf_log_det", [] {
        auto s = torch::randn({8}, torch::kFloat64);
        auto id = iaf_apply(s, torch::zeros({8}, torch::kFloat64), torch::zeros({8}, torch::kFloat64));
        expect(torch::equal(id.output, s), "identity flow");
        expect_near(id.log_det.item<double>(), 0.0, 0.0, "identity log det");
        auto two = iaf_apply(s, torch::zeros({8}, torch::kFloat64), torch::full({8}, std::log(2.0), torch::kFloat64));
        expect_near(two.log_det.item<double>(), 8.0 * std::log(2.0), 1e-9, "sigma = 2 log det");
        return fmt(two.log_det.item<double>());
    }});

    c.push_back({"vocoder.iaf_histogram", [] {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(6);
        const std::int64_t n = 100000;
        auto noise = logistic_noise({n}, torch::kFloat64, gen);
        const double mu = 0.3, sigma = 0.25;
        auto out = iaf_apply(noise, torch::full({n}, mu, torch::kFloat64), torch::full({n}, std::log(sigma), torch::kFloat64));
        std::vector<double> xs(out.output.data_ptr<double>(), out.output.data_ptr<double>() + n);
        const double ks = ks_statistic(xs, [&](double x) { return logistic_cdf(x, mu, sigma); });
        expect(ks < 0.02, "KS " + fmt(ks));
        return "KS " + fmt(ks);
    }});

    c.push_back({"vocoder.student_identity", [] {
        torch::manual_seed(7);
        Student student(tiny_vocoder_config());
        torch::NoGradGuard ng;
        auto cond = torch::randn({2, 30, 2});
        auto noise = logistic_noise({2, 30}, torch::kFloat32);
        auto out = student->forward(cond, noise);
        expect(torch::equal(out.waveform, noise), "identity flows return the noise");
        expect(out.waveform.sizes() == noise.sizes(), "output length");
        return std::string("ok");
    }});

    c.push_back({"vocoder.student_composition", [] {
        torch::manual_seed(8);
        Student student(tiny_vocoder_config());
        student->to(torch::kFloat64);
        perturb_flows(student, 8);
        torch::NoGradGuard ng;
        auto cond = torch::randn({2, 25, 2}, torch::kFloat64);
        auto noise = logistic_noise({2, 25}, torch::kFloat64);
        auto out = student->forward(cond, noise);
        auto x = noise;
        auto sigma = torch::ones_like(noise);
        for (std::size_t f = 0; f < out.flow_mu.size(); ++f) {
            x = out.flow_mu[f] + torch::exp(out.flow_log_sigma[f]) * x;
            sigma = sigma * torch::exp(out.flow_log_sigma[f]);
        }
        const double d1 = (x - out.waveform).abs().max().item<double>();
        const double d2 = (sigma - torch::exp(out.log_sigma_tot)).abs().max().item<double>();
        const double d3 = (out.mu_tot + torch::exp(out.log_sigma_tot) * noise - out.waveform).abs().max().item<double>();
        expect(d1 <= 1e-6 && d2 <= 1e-6 && d3 <= 1e-6, "composition mismatch " + fmt(std::max({d1, d2, d3})));
        return "max diff " + fmt(std::max({d1, d2, d3}));
    }});

    c.push_back({"vocoder.flow_density_integral", [] {
        torch::manual_seed(9);
        Student student(tiny_vocoder_config());
        student->to(torch::kFloat64);
        perturb_flows(student, 9);
        torch::NoGradGuard ng;
        auto out = student->forward(torch::randn({1, 1, 2}, torch::kFloat64), torch::zeros({1, 1}, torch::kFloat64));
        std::vector<double> mu, sigma;
        for (std::size_t f = 0; f < out.flow_mu.size(); ++f) {
            mu.push_back(out.flow_mu[f].item<double>());
            sigma.push_back(std::exp(out.flow_log_sigma[f].item<double>()));
        }
        const double m = out.mu_tot.item<double>();
        const double s = std::exp(out.log_sigma_tot.item<double>());
        std::vector<double> xs, ys;
        for (int i = 0; i <= 200000; ++i) {
            const double x = m - 40.0 * s + 80.0 * s * i / 200000.0;
            xs.push_back(x);
            ys.push_back(sequential_flow_density(x, mu, sigma));
        }
        const double integral = trapezoid(xs, ys);
        expect_near(integral, 1.0, 1e-3, "density integral");
        return "integral " + fmt(integral);
    }});

    c.push_back({"vocoder.distill_fixed_point", [] {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(10);
        auto teacher = single_logistic(0.0, 0.0);
        auto zero = torch::zeros({1}, torch::kFloat64);
        const double same = distill_kl_term(teacher, zero, zero, 10000, gen).item<double>();
        expect(std::abs(same) < 0.05, "identical student kl " + fmt(same));
        const double shifted = distill_kl_term(teacher, zero + 1.0, zero, 10000, gen).item<double>();
        expect(shifted > 0.0, "shifted student kl " + fmt(shifted));
        return "kl " + fmt(same) + " / shifted " + fmt(shifted);
    }});

    c.push_back({"vocoder.spectral_identity", [] {
        auto w = torch::randn({2, 1024}, torch::kFloat64);
        expect_near(spectral_loss(w, w, 512, 128).item<double>(), 0.0, 0.0, "spectral(w, w)");
        bool threw = false;
        try {
            spectral_loss(w, w.slice(1, 0, 1000), 512, 128);
        } catch (const ShapeError&) {
            threw = true;
        }
        expect(threw, "shape mismatch must be rejected");
        return std::string("0");
    }});

    c.push_back({"vocoder.frozen_conditioning", [] {
        torch::manual_seed(11);
        auto cfg = tiny_vocoder_config();
        Teacher teacher(cfg);
        Student student(cfg);
        perturb_flows(student, 11);
        FrozenGuard guard(*teacher);
        std::map<std::string, std::string> before;
        for (auto& item : teacher->conditioning()->named_parameters()) before[item.key()] = tensor_hash(item.value());
        torch::optim::Adam opt(student->parameters(), torch::optim::AdamOptions(1e-2));
        auto mel = torch::randn({1, 160, cfg.n_mels});
        torch::Tensor cond;
        {
            torch::NoGradGuard ng;
            cond = teacher->conditioning()->forward(mel, torch::randn({1, cfg.latent_dim}));
        }
        auto target = torch::randn({1, cond.size(1)}) * 0.1;
        for (int step = 0; step < 3; ++step) {
            opt.zero_grad();
            auto out = student->forward(cond, logistic_noise({1, cond.size(1)}, torch::kFloat32));
            DistillOptions o;
            distill_loss(out, teacher, cond, target, o).total.backward();
            opt.step();
            guard.verify(*teacher);
        }
        for (auto& item : teacher->conditioning()->named_parameters()) {
            expect(tensor_hash(item.value()) == before[item.key()], "conditioning weight changed: " + item.key());
        }
        {
            torch::NoGradGuard ng;
            teacher->conditioning()->parameters().front().add_(1.0);
        }
        bool caught = false;
        try {
            guard.verify(*teacher);
        } catch (const Error&) {
            caught = true;
        }
        expect(caught, "integrity check must detect a modified teacher");
        return std::string("bit-identical after 3 student steps");
    }});

    c.push_back({"vocoder.gradient_checks", [] {
        torch::manual_seed(12);
        auto cfg = tiny_vocoder_config();
        Teacher teacher(cfg);
        teacher->to(torch::kFloat64);
        auto w = torch::rand({1, 8}, torch::kFloat64) * 1.6 - 0.8;
        auto cond = torch::randn({1, 8, cfg.cond_channels}, torch::kFloat64);
        std::vector<std::pair<std::string, torch::Tensor>> tparams;
        for (auto& p : named_parameters(*teacher, "teacher.")) {
            if (p.first.find("conditioning") == std::string::npos) tparams.push_back(p);
        }
        auto nll = gradient_check([&] { return teacher_nll_loss(teacher, w, cond); }, tparams);
        expect(nll.passed, "teacher NLL: " + nll.worst);

        Student student(cfg);
        student->to(torch::kFloat64);
        perturb_flows(student, 12);
        FrozenGuard guard(*teacher);
        auto noise = logistic_noise({1, 8}, torch::kFloat64);
        auto kl = gradient_check(
            [&] {
                auto out = student->forward(cond, noise);
                auto p = teacher->forward(out.waveform, cond);
                auto gen = at::make_generator<at::CPUGeneratorImpl>(99);
                return distill_kl_term(p, out.mu_tot, out.log_sigma_tot, 4, gen);
            },
            named_parameters(*student, "student."));
        expect(kl.passed, "kl_term: " + kl.worst);
        return "NLL " + std::to_string(nll.entries) + " entries (" + fmt(nll.max_rel_error) + "), kl " +
               std::to_string(kl.entries) + " entries (" + fmt(kl.max_rel_error) + ")";
    }});

    return c;
}

}  // namespace etts::checks
