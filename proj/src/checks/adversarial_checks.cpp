#include "etts/adversarial/adversarial.hpp"
#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/checks/oracles.hpp"
#include "etts/error.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <random>
#include <set>

namespace etts::checks {

namespace {

using namespace etts::adversarial;

double hinge(double fake, double real) {
    return d_hinge_loss(torch::tensor({fake}, torch::kFloat64), torch::tensor({real}, torch::kFloat64)).item<double>();
}

}  // namespace

std::vector<Check> adversarial_checks() {
    std::vector<Check> c;

    c.push_back({"adversarial.spectral_norm_cases", [] {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
        auto d = torch::diag(torch::tensor({3.0, 1.0}, torch::kFloat64));
        auto s = init_power_iteration(d, gen);
        auto nd = spectral_normalize(d, 5, s);
        expect_near(max_singular_value(nd), 1.0, 1e-4, "diag(3, 1)");
        auto eye = torch::eye(4, torch::kFloat64);
        auto se = init_power_iteration(eye, gen);
        expect(torch::allclose(spectral_normalize(eye, 1, se), eye, 0.0, 1e-12), "identity unchanged");
        auto zero = torch::zeros({3, 3}, torch::kFloat64);
        PowerIterationState sz;
        auto nz = spectral_normalize(zero, 3, sz);
        expect(torch::isfinite(nz).all().item<bool>() && nz.abs().max().item<double>() == 0.0, "zero stays zero");
        auto w = at::normal(0.0, 1.0, {16, 16}, gen, torch::kFloat64);
        auto sw = init_power_iteration(w, gen);
        spectral_normalize(w, 10, sw);
        const double est = spectral_sigma(w, sw).item<double>();
        const double svd = max_singular_value(w);
        expect_near(est, svd, 1e-3, "16x16 power iteration");
        bool threw = false;
        try {
            spectral_normalize(w, 0, sw);
        } catch (const ConfigError&) {
            threw = true;
        }
        expect(threw, "iters < 1 must be rejected");
        return "16x16 sigma " + fmt(est) + " vs SVD " + fmt(svd);
    }});

    c.push_back({"adversarial.discriminator_sigma", [] {
        torch::manual_seed(2);
        Discriminator disc(DiscriminatorConfig{});
        double lo = 1e9, hi = 0.0;
        for (auto& layer : disc->sn_layers()) {
            torch::NoGradGuard ng;
            const double s = max_singular_value(layer->normalized_weight(10));
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        expect(lo >= 0.9 && hi <= 1.1, "sigma range [" + fmt(lo) + ", " + fmt(hi) + "]");
        return "sigma in [" + fmt(lo) + ", " + fmt(hi) + "]";
    }});

    c.push_back({"adversarial.two_forwards_one_backward", [] {
        torch::manual_seed(3);
        Discriminator disc(tiny_discriminator_config());
        auto real = torch::randn({2, 6, 4});
        auto fake = torch::randn({2, 6, 4});
        auto loss = d_hinge_loss(disc->forward(fake), disc->forward(real));
        loss.backward();
        for (auto& p : disc->parameters()) expect(torch::isfinite(p.grad()).all().item<bool>(), "finite gradients");
        return std::string("ok");
    }});

    c.push_back({"adversarial.random_window", [] {
        std::mt19937_64 rng(3);
        auto mel = torch::randn({32, 4});
        auto whole = random_window(mel, 32, rng);
        expect(whole.start == 0 && whole.width == 32 && torch::equal(whole.frames, mel), "M = width gives the input");
        auto shorter = random_window(mel.slice(0, 0, 10), 32, rng);
        expect(shorter.width == 10 && shorter.start == 0, "M < width gives the whole input");

        auto big = torch::arange(100, torch::kFloat32).unsqueeze(1);
        std::set<std::int64_t> starts;
        for (int i = 0; i < 10000; ++i) {
            auto w = random_window(big, 32, rng);
            expect(w.start >= 0 && w.start <= 68, "start out of range");
            expect(w.frames[0][0].item<float>() == static_cast<float>(w.start), "frames must match the start");
            starts.insert(w.start);
        }
        expect(starts.size() == 69, "observed " + std::to_string(starts.size()) + " of 69 starts");

        std::mt19937_64 a(9), b(9);
        expect(random_window(big, 16, a).start == random_window(big, 16, b).start, "seeded crops must agree");

        std::uniform_int_distribution<std::int64_t> dim(1, 60);
        for (int i = 0; i < 500; ++i) {
            const auto m = dim(rng), width = dim(rng);
            auto w = random_window(torch::zeros({m, 2}), width, rng);
            expect(w.start >= 0 && w.start + w.width <= m && w.width == std::min(m, width), "crop out of bounds");
        }
        return std::string("69 of 69 starts");
    }});

    c.push_back({"adversarial.discriminator_score", [] {
        torch::manual_seed(4);
        Discriminator disc(tiny_discriminator_config());
        disc->to(torch::kFloat64);
        disc->eval();
        {
            torch::NoGradGuard ng;
            auto zero = disc->forward(torch::zeros({1, 8, 4}, torch::kFloat64));
            expect(std::isfinite(zero.item<double>()), "zero crop must score finitely");
            auto x = torch::randn({3, 8, 4}, torch::kFloat64);
            expect(torch::equal(disc->forward(x), disc->forward(x)), "scores must be deterministic");
        }
        auto attention = disc->attention();
        {
            torch::NoGradGuard ng;
            attention->gamma.fill_(0.5);
        }
        auto crop = (torch::randn({1, 8, 4}, torch::kFloat64) - 5.0).requires_grad_(true);
        auto report = gradient_check([&] { return disc->forward(crop).sum(); }, {{"crop", crop}});
        expect(report.passed, "input gradient: " + report.worst);
        return std::to_string(report.entries) + " entries, max rel error " + fmt(report.max_rel_error);
    }});

    c.push_back({"adversarial.hinge_table", [] {
        expect_near(hinge(-2.0, 2.0), 0.0, 1e-12, "saturated");
        expect_near(hinge(0.0, 0.0), 2.0, 1e-12, "zero scores");
        expect_near(hinge(-0.5, 0.5), 1.0, 1e-12, "half margins");
        std::mt19937_64 rng(5);
        std::normal_distribution<double> n(0.0, 2.0);
        for (int i = 0; i < 200; ++i) {
            const double f = n(rng), r = n(rng);
            const double v = hinge(f, r);
            expect(v >= 0.0, "hinge loss must be non-negative");
            expect((v == 0.0) == (r >= 1.0 && f <= -1.0), "zero iff both margins satisfied");
        }
        return std::string("ok");
    }});

    c.push_back({"adversarial.g_composite", [] {
        auto y = torch::randn({1, 6, 3}, torch::kFloat64);
        auto lens = torch::tensor({6}, torch::kInt64);
        acoustic::GaussianPosterior zero{torch::zeros({1, 4}, torch::kFloat64), torch::zeros({1, 4}, torch::kFloat64)};
        auto s = torch::tensor({0.3}, torch::kFloat64);
        expect_near(g_composite_loss(y, y, lens, s, s, zero, 0.02, 1.0).total.item<double>(), 0.0, 0.0, "zero case");
        auto pred = y + 0.2;
        auto l1_only = g_composite_loss(pred, y, lens, s, s + 5.0, zero, 0.0, 0.0);
        expect_near(l1_only.total.item<double>(), l1_only.g_l1.item<double>(), 1e-15, "alpha = beta = 0");
        auto r = g_composite_loss(pred, y, lens, torch::tensor({0.1}, torch::kFloat64),
                                  torch::tensor({0.4}, torch::kFloat64), zero, 1.0, 0.0);
        expect_near(r.total.item<double>(), 0.5, 1e-12, "0.2 + 1 * 0.3");

        auto real = torch::tensor({0.7, -0.2}, torch::kFloat64).requires_grad_(true);
        auto fake = torch::tensor({0.1, 0.5}, torch::kFloat64).requires_grad_(true);
        auto y2 = torch::randn({2, 4, 3}, torch::kFloat64);
        auto q2 = acoustic::GaussianPosterior{torch::zeros({2, 4}, torch::kFloat64), torch::zeros({2, 4}, torch::kFloat64)};
        g_composite_loss(y2 + 0.1, y2, torch::tensor({4, 4}, torch::kInt64), fake, real, q2, 1.0, 0.0).total.backward();
        expect(!real.grad().defined() || real.grad().abs().max().item<double>() == 0.0, "D(y) must not get gradient");
        expect(fake.grad().defined() && fake.grad().abs().max().item<double>() > 0.0, "D(G(x)) must get gradient");
        bool threw = false;
        try {
            g_composite_loss(pred, y, lens, torch::zeros({2}, torch::kFloat64), s, zero, 1.0, 0.0);
        } catch (const ShapeError&) {
            threw = true;
        }
        expect(threw, "mismatched scores must be rejected");
        return std::string("ok");
    }});

    c.push_back({"adversarial.generator_sign", [] {
        torch::manual_seed(6);
        Discriminator disc(tiny_discriminator_config());
        disc->to(torch::kFloat64);
        disc->eval();
        auto fake = (torch::randn({4, 8, 4}, torch::kFloat64) - 5.0).requires_grad_(true);
        auto real = torch::randn({4, 8, 4}, torch::kFloat64) - 5.0;
        auto lens = torch::full({4}, 8, torch::kInt64);
        acoustic::GaussianPosterior q{torch::zeros({4, 2}, torch::kFloat64), torch::zeros({4, 2}, torch::kFloat64)};
        const double before = disc->forward(fake).mean().item<double>();
        auto report = g_composite_loss(fake, fake.detach(), lens, disc->forward(fake), disc->forward(real), q, 1.0, 0.0);
        report.g_adv.backward();
        {
            torch::NoGradGuard ng;
            fake -= 1e-3 * fake.grad();
        }
        const double after = disc->forward(fake).mean().item<double>();
        expect(after > before, "score_fake " + fmt(before) + " -> " + fmt(after));
        return "score_fake " + fmt(before) + " -> " + fmt(after);
    }});

    return c;
}

}  // namespace etts::checks
