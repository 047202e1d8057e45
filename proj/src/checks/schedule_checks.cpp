#include "etts/checks/checks.hpp"
#include "etts/error.hpp"
#include "etts/schedule/schedule.hpp"

#include <cmath>

namespace etts::checks {

namespace {

using namespace etts::schedule;

template <class E, class F>
bool throws(F&& f) {
    try {
        f();
    } catch (const E&) {
        return true;
    }
    return false;
}

}  // namespace

std::vector<Check> schedule_checks() {
    std::vector<Check> c;

    c.push_back({"schedule.phase_plan", [] {
        auto plan = PhasePlan::default_plan();
        auto first = ops_at_step(plan, 0);
        expect(first.ops == 5 && !first.gan_enabled, "step 0 is ops 5 without GAN");
        auto last = ops_at_step(plan, 1000000);
        expect(last.ops == 2 && last.gan_enabled, "final phase is ops 2 with GAN");
        std::vector<std::string> order;
        std::vector<int> ops;
        int prev_ops = 5;
        for (std::int64_t s = 0; s < plan.phases.back().start_step + 10; ++s) {
            auto a = ops_at_step(plan, s);
            if (order.empty() || order.back() != a.name) {
                order.push_back(a.name);
                ops.push_back(a.gan_enabled ? -a.ops : a.ops);
            }
            if (!a.gan_enabled) {
                expect(a.ops <= prev_ops, "ops must not increase before the GAN phase");
                prev_ops = a.ops;
            }
        }
        expect(ops == std::vector<int>({5, 4, 3, 2, -2}), "phase order 5 4 3 2 GAN");
        for (std::size_t i = 1; i < plan.phases.size(); ++i) {
            const auto& p = plan.phases[i];
            auto at = ops_at_step(plan, p.start_step);
            auto before = ops_at_step(plan, p.start_step - 1);
            expect(at.name == p.name && before.name == plan.phases[i - 1].name, "half-open boundaries");
        }
        PhasePlan bad{{{"ops5", 0, 5, false}, {"ops4", 0, 4, false}}};
        expect(throws<ConfigError>([&] { bad.validate(); }), "non-increasing start steps must be rejected");
        PhasePlan rising{{{"ops2", 0, 2, false}, {"ops5", 10, 5, false}}};
        expect(throws<ConfigError>([&] { rising.validate(); }), "rising ops must be rejected");
        return std::string("5 4 3 2 GAN");
    }});

    c.push_back({"schedule.beta_kld", [] {
        AnnealSpec spec;
        expect_near(beta_kld(spec, 0), 0.0, 0.0, "before the ramp");
        expect_near(beta_kld(spec, spec.ramp_start), 0.0, 0.0, "ramp start");
        expect_near(beta_kld(spec, (spec.ramp_start + spec.ramp_end) / 2), 0.5, 0.0, "ramp midpoint");
        expect_near(beta_kld(spec, spec.ramp_end), 1.0, 0.0, "ramp end");
        expect_near(beta_kld(spec, spec.ramp_end + spec.period), 1.0, 0.0, "periodic application");
        expect_near(beta_kld(spec, spec.ramp_end + spec.period + 1), 0.0, 0.0, "between applications");
        for (std::int64_t s = 0; s < 8000; ++s) {
            const double b = beta_kld(spec, s);
            expect(b >= 0.0 && b <= 1.0, "beta outside [0, 1]");
            if (s > spec.ramp_start && s <= spec.ramp_end) {
                expect_near(b - beta_kld(spec, s - 1), 1.0 / static_cast<double>(spec.ramp_end - spec.ramp_start), 1e-12,
                            "linear ramp");
            }
        }
        return std::string("ok");
    }});

    c.push_back({"schedule.polyak", [] {
        auto live = std::vector<torch::Tensor>{torch::randn({3, 2}, torch::kFloat64)};
        auto shadow = std::vector<torch::Tensor>{live[0].clone()};
        polyak_update(shadow, live, 0.999);
        expect(torch::equal(shadow[0], live[0]), "fixed point");
        std::vector<torch::Tensor> zero{torch::zeros({1}, torch::kFloat64)};
        polyak_update(zero, {torch::ones({1}, torch::kFloat64)}, 0.999);
        expect_near(zero[0].item<double>(), 0.001, 1e-15, "0 toward 1");

        PolyakState state({torch::full({1}, 3.0, torch::kFloat64)}, 0.999);
        const auto target = torch::full({1}, -1.0, torch::kFloat64);
        double worst = 0.0;
        for (int n = 1; n <= 2000; ++n) {
            state.update({target});
            const double gap = std::abs(state.shadow()[0].item<double>() + 1.0);
            worst = std::max(worst, std::abs(gap - std::pow(0.999, n) * 4.0));
        }
        expect(worst <= 1e-12, "geometric identity deviation " + fmt(worst));

        auto a = torch::randn({4}, torch::kFloat64), b = torch::randn({4}, torch::kFloat64);
        std::vector<torch::Tensor> s1{torch::zeros({4}, torch::kFloat64)}, s2{torch::zeros({4}, torch::kFloat64)};
        polyak_update(s1, {a + 2.0 * b}, 0.9);
        polyak_update(s2, {a}, 0.9);
        expect(torch::allclose(s1[0], s2[0] + 0.1 * 2.0 * b), "update must be linear in the live value");
        std::vector<torch::Tensor> mismatch{torch::zeros({3}, torch::kFloat64)};
        expect(throws<ShapeError>([&] { polyak_update(mismatch, {torch::zeros({4}, torch::kFloat64)}, 0.9); }),
               "shape mismatch must be rejected");
        return "max deviation " + fmt(worst);
    }});

    c.push_back({"schedule.optimizer_params", [] {
        auto acoustic = optimizer_phase_params("ops5");
        expect(acoustic.lr == 1e-3 && acoustic.beta1 == 0.9, "Adam defaults");
        expect(optimizer_phase_params("gan").beta1 == 0.5, "GAN beta1 0.5");
        auto teacher = optimizer_phase_params("teacher");
        expect_near(teacher.lr_at_epoch(2), teacher.lr * 0.95 * 0.95, 1e-18, "teacher decay");
        auto student = optimizer_phase_params("student");
        expect(student.lr_at_epoch(0) == student.lr_at_epoch(50), "student rate is constant");
        expect(throws<ConfigError>([] { optimizer_phase_params("warmup"); }), "unknown phase rejected");
        return std::string("ok");
    }});

    c.push_back({"schedule.snapshot_rotation", [] {
        std::vector<Snapshot> snaps{{"s1", 100}, {"s2", 200}, {"s3", 300}};
        expect(snapshot_rotation(snaps, 0, 3000).id == "s1", "step 0");
        expect(snapshot_rotation(snaps, 999, 3000).id == "s1", "step 999");
        expect(snapshot_rotation(snaps, 1000, 3000).id == "s2", "boundary 1000");
        expect(snapshot_rotation(snaps, 1999, 3000).id == "s2", "step 1999");
        expect(snapshot_rotation(snaps, 2000, 3000).id == "s3", "step 2000");
        expect(snapshot_rotation(snaps, 2999, 3000).id == "s3", "step 2999");
        std::vector<Snapshot> one{{"only", 1}};
        for (std::int64_t s : {0, 500, 2999}) expect(snapshot_rotation(one, s, 3000).id == "only", "single snapshot");
        expect(throws<DataError>([] { snapshot_rotation({}, 0, 10); }), "empty list rejected");
        return std::string("ok");
    }});

    return c;
}

}  // namespace etts::checks
