// Acceptance criteria, one PASS/FAIL line each. `--criterion N` runs a single one.

#include "etts/acoustic/loss.hpp"
#include "etts/acoustic/model.hpp"
#include "etts/adversarial/adversarial.hpp"
#include "etts/checkpoint/checkpoint.hpp"
#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/checks/oracles.hpp"
#include "etts/cli/config.hpp"
#include "etts/cli/pipeline.hpp"
#include "etts/schedule/schedule.hpp"
#include "etts/vocoder/vocoder.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace etts;
using checks::expect;
using checks::fmt;

namespace {

struct Options {
    std::string etts;         // path of the etts executable
    std::string toy_config;   // configs/toy.json
    std::string work_dir;     // keeps run directories when set
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void expect_runtime(double seconds, double budget, const std::string& what) {
    expect(seconds < budget, what + " took " + fmt(seconds) + " s, budget " + fmt(budget) + " s");
}

// ---------------------------------------------------------------------------

std::string kld_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(1001);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        auto mu = at::normal(0.0, 1.0, {64}, gen, torch::kFloat64);
        auto log_var = at::normal(-0.5, 0.8, {64}, gen, torch::kFloat64);
        const double closed = acoustic::kld_closed_form({mu, log_var}).item<double>();
        const auto mc = checks::kld_monte_carlo(mu, log_var, 1000000, 2000 + i);
        const double rel = std::abs(mc.mean - closed) / closed;
        expect(rel <= 0.01, "posterior " + std::to_string(i) + ": closed " + fmt(closed) + " vs MC " + fmt(mc.mean));
        worst = std::max(worst, rel);
    }
    const double elapsed = seconds_since(t0);
    expect_runtime(elapsed, 30.0, "20 posteriors");
    return "20 posteriors, worst relative error " + fmt(worst) + ", " + fmt(elapsed) + " s";
}

std::string hinge_table() {
    auto hinge = [](double fake, double real) {
        return adversarial::d_hinge_loss(torch::tensor({fake}, torch::kFloat64), torch::tensor({real}, torch::kFloat64))
            .item<double>();
    };
    const std::vector<std::tuple<double, double, double>> cases{{-2.0, 2.0, 0.0}, {0.0, 0.0, 2.0}, {-0.5, 0.5, 1.0}};
    std::ostringstream out;
    for (auto [fake, real, expected] : cases) {
        const double got = hinge(fake, real);
        checks::expect_near(got, expected, 1e-9, "fake " + fmt(fake) + ", real " + fmt(real));
        out << got << " ";
    }
    return "values " + out.str();
}

std::string spectral_norm() {
    const auto t0 = std::chrono::steady_clock::now();
    torch::manual_seed(3003);
    adversarial::Discriminator disc(adversarial::DiscriminatorConfig{});
    double lo = 1e9, hi = 0.0;
    std::size_t layers = 0;
    for (auto& layer : disc->sn_layers()) {
        torch::NoGradGuard ng;
        const double s = checks::max_singular_value(layer->normalized_weight(10));
        lo = std::min(lo, s);
        hi = std::max(hi, s);
        ++layers;
    }
    const double elapsed = seconds_since(t0);
    expect(lo >= 0.99 && hi <= 1.01, "sigma_max range [" + fmt(lo) + ", " + fmt(hi) + "]");
    expect_runtime(elapsed, 10.0, "spectral norm");
    return std::to_string(layers) + " weights, sigma_max in [" + fmt(lo) + ", " + fmt(hi) + "], " + fmt(elapsed) + " s";
}

// ---------------------------------------------------------------------------

cli::RunConfig small_run_config() {
    cli::RunConfig cfg;
    cfg.seed = 4004;
    cfg.mel.n_mels = 16;
    cfg.latent_dim = 8;
    cfg.corpus.num_utterances = 6;
    cfg.acoustic = checks::small_acoustic_config(16);
    cfg.discriminator.channels = {8, 8};
    cfg.discriminator.attention_after = 0;
    cfg.train_acoustic.batch_size = 3;
    cfg.train_acoustic.gan_window = 8;
    cfg.train_acoustic.checkpoint_every = 1000;
    cfg.propagate();
    return cfg;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::vector<json> rows;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(json::parse(line));
    }
    return rows;
}

std::string ops_slicing() {
    torch::manual_seed(4004);
    auto acfg = checks::small_acoustic_config(80);
    acoustic::AcousticModel model(acfg);
    model->to(torch::kFloat64);
    model->eval();
    std::ostringstream detail;
    {
        torch::NoGradGuard ng;
        auto tokens = torch::randint(0, acfg.vocab_size, {2, 6}, torch::kInt64);
        auto token_lengths = torch::tensor({6, 5}, torch::kInt64);
        auto mask = acoustic::sequence_mask(token_lengths, 6);
        auto memory = model->condition_memory(model->encode(tokens, token_lengths),
                                              torch::randn({2, acfg.latent_dim}, torch::kFloat64));
        auto feedback = torch::randn({2, 8, 80}, torch::kFloat64) - 4.0;
        auto full = model->decode_with_feedback(memory, mask, feedback, 5);
        for (std::int64_t k : {2, 3, 4}) {
            auto part = model->decode_with_feedback(memory, mask, feedback, k);
            auto frames = part.frames.reshape({2, 8, k, 80});
            const double diff = (frames - full.raw.slice(2, 0, k)).abs().max().item<double>();
            expect(diff <= 1e-6, "ops " + std::to_string(k) + " max abs diff " + fmt(diff));
            detail << "k=" << k << " diff " << fmt(diff) << "; ";
        }
    }

    // an ops-5 checkpoint resumed straight into an ops-2 phase
    checks::TempDir dir("ops_resume");
    auto cfg = small_run_config();
    cfg.phases = schedule::PhasePlan{{{"ops5", 0, 5, false},
                                      {"ops4", 10, 4, false},
                                      {"ops3", 20, 3, false},
                                      {"ops2", 30, 2, false},
                                      {"gan", 40, 2, true}}};
    cfg.acoustic_steps = 50;
    cfg.validate();
    auto first = cli::train_acoustic(cfg, dir.path(), {3, true});
    auto saved = checkpoint::load_checkpoint(first.checkpoint);
    expect(saved.meta.at("ops").get<int>() == 5, "first checkpoint must come from the ops-5 phase");

    auto resumed_cfg = cfg;
    resumed_cfg.phases = schedule::PhasePlan{{{"ops5", 0, 5, false}, {"ops2", 3, 2, false}, {"gan", 40, 2, true}}};
    resumed_cfg.validate();
    auto second = cli::train_acoustic(resumed_cfg, dir.path(), {6, true});
    auto last = checkpoint::load_checkpoint(second.checkpoint);
    expect(last.meta.at("ops").get<int>() == 2 && second.steps_done == 6, "resumed run must finish in ops 2");
    int resumed_steps = 0;
    for (const auto& row : read_jsonl(dir.path() / "logs" / "train_acoustic.jsonl")) {
        if (row.contains("event") && row["event"] == "resumed") expect(row["from_phase"] == "ops5", "resumed from ops5");
        if (!row.contains("event") && row["step"].get<int>() >= 3) {
            expect(row["ops"] == 2, "step after resume must run at ops 2");
            expect(std::isfinite(row["total"].get<double>()), "finite loss after resume");
            ++resumed_steps;
        }
    }
    expect(resumed_steps == 3, "three steps after resume, saw " + std::to_string(resumed_steps));
    detail << "ops-5 checkpoint at step 3 resumed for 3 ops-2 steps";
    return detail.str();
}

// ---------------------------------------------------------------------------

struct TinyAcoustic {
    acoustic::AcousticModel model{nullptr};
    torch::Tensor tokens, token_lengths, mel, mel_lengths;
};

std::string gradient_report(const std::string& name, const checks::GradCheckReport& r, std::int64_t params) {
    expect(params <= 500, name + " exercises " + std::to_string(params) + " parameters");
    expect(r.passed, name + ": worst " + r.worst + " (rel " + fmt(r.max_rel_error) + ")");
    return name + " " + std::to_string(params) + " params rel " + fmt(r.max_rel_error);
}

std::int64_t count(const std::vector<std::pair<std::string, torch::Tensor>>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.second.numel();
    return n;
}

std::string gradient_checks() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> parts;

    {
        torch::manual_seed(5005);
        TinyAcoustic t;
        auto cfg = checks::tiny_acoustic_config();
        t.model = acoustic::AcousticModel(cfg);
        t.model->to(torch::kFloat64);
        t.model->eval();
        t.tokens = torch::randint(0, cfg.vocab_size, {2, 2}, torch::kInt64);
        t.token_lengths = torch::tensor({2, 1}, torch::kInt64);
        t.mel = torch::randn({2, 4, cfg.n_mels}, torch::kFloat64) - 4.0;
        t.mel_lengths = torch::tensor({4, 3}, torch::kInt64);
        auto params = checks::named_parameters(*t.model);
        auto report = checks::gradient_check(
            [&] {
                auto q = t.model->posterior(t.mel, t.mel_lengths);
                auto out = t.model->teacher_forced(t.tokens, t.token_lengths, t.mel, t.mel_lengths, q.mu, 2);
                return acoustic::acoustic_loss(out.frames, t.mel, t.mel_lengths, out.stop_logits, 2, q, 0.5).total;
            },
            params);
        parts.push_back(gradient_report("acoustic_loss", report, count(params)));
    }
    {
        torch::manual_seed(5006);
        adversarial::Discriminator disc(checks::tiny_discriminator_config());
        disc->to(torch::kFloat64);
        disc->eval();
        {
            torch::NoGradGuard ng;
            disc->attention()->gamma.fill_(0.5);
        }
        auto real = torch::randn({2, 6, 4}, torch::kFloat64) * 0.5 - 4.0;
        auto fake = torch::randn({2, 6, 4}, torch::kFloat64) * 0.5 - 5.0;
        auto params = checks::named_parameters(*disc);
        auto report = checks::gradient_check(
            [&] { return adversarial::d_hinge_loss(disc->forward(fake), disc->forward(real)); }, params);
        parts.push_back(gradient_report("d_hinge_loss", report, count(params)));
    }
    auto vcfg = checks::tiny_vocoder_config();
    torch::manual_seed(5007);
    vocoder::Teacher teacher(vcfg);
    teacher->to(torch::kFloat64);
    auto cond = torch::randn({1, 8, vcfg.cond_channels}, torch::kFloat64);
    {
        auto w = torch::rand({1, 8}, torch::kFloat64) * 1.6 - 0.8;
        std::vector<std::pair<std::string, torch::Tensor>> params;
        for (auto& p : checks::named_parameters(*teacher)) {
            if (p.first.find("conditioning") == std::string::npos) params.push_back(p);
        }
        auto report = checks::gradient_check([&] { return vocoder::teacher_nll_loss(teacher, w, cond); }, params);
        parts.push_back(gradient_report("teacher NLL", report, count(params)));
    }
    {
        vocoder::Student student(vcfg);
        student->to(torch::kFloat64);
        {
            torch::NoGradGuard ng;
            auto gen = at::make_generator<at::CPUGeneratorImpl>(5008);
            for (auto& item : student->named_parameters()) {
                item.value().copy_(at::normal(0.0, 0.3, item.value().sizes(), gen, torch::kFloat64));
            }
        }
        vocoder::FrozenGuard guard(*teacher);
        auto noise = vocoder::logistic_noise({1, 8}, torch::kFloat64);
        auto params = checks::named_parameters(*student);
        auto report = checks::gradient_check(
            [&] {
                auto out = student->forward(cond, noise);
                auto p = teacher->forward(out.waveform, cond);
                auto gen = at::make_generator<at::CPUGeneratorImpl>(5009);
                return vocoder::distill_kl_term(p, out.mu_tot, out.log_sigma_tot, 4, gen);
            },
            params);
        parts.push_back(gradient_report("kl_term", report, count(params)));
        guard.verify(*teacher);
    }
    const double elapsed = seconds_since(t0);
    expect_runtime(elapsed, 300.0, "gradient checks");
    std::string detail;
    for (const auto& p : parts) detail += p + "; ";
    return detail + fmt(elapsed) + " s";
}

// ---------------------------------------------------------------------------

std::string flow_correctness() {
    auto s = torch::randn({8}, torch::kFloat64);
    auto identity = vocoder::iaf_apply(s, torch::zeros({8}, torch::kFloat64), torch::zeros({8}, torch::kFloat64));
    expect(identity.log_det.item<double>() == 0.0, "identity log_det " + fmt(identity.log_det.item<double>()));
    auto doubled =
        vocoder::iaf_apply(s, torch::zeros({8}, torch::kFloat64), torch::full({8}, std::log(2.0), torch::kFloat64));
    checks::expect_near(doubled.log_det.item<double>(), 8.0 * std::log(2.0), 1e-9, "sigma 2 log_det");

    torch::manual_seed(6006);
    vocoder::Student student(checks::tiny_vocoder_config());
    student->to(torch::kFloat64);
    {
        torch::NoGradGuard ng;
        auto gen = at::make_generator<at::CPUGeneratorImpl>(6007);
        for (auto& item : student->named_parameters()) {
            item.value().copy_(at::normal(0.0, 0.3, item.value().sizes(), gen, torch::kFloat64));
        }
    }
    torch::NoGradGuard ng;
    auto cond = torch::randn({1, 1, 2}, torch::kFloat64);
    auto out = student->forward(cond, torch::zeros({1, 1}, torch::kFloat64));
    std::vector<double> mu, sigma;
    for (std::size_t f = 0; f < out.flow_mu.size(); ++f) {
        mu.push_back(out.flow_mu[f].item<double>());
        sigma.push_back(std::exp(out.flow_log_sigma[f].item<double>()));
    }
    expect(mu.size() == 4, "four flows");
    const double m = out.mu_tot.item<double>();
    const double sd = std::exp(out.log_sigma_tot.item<double>());
    std::vector<double> xs, ys;
    for (int i = 0; i <= 200000; ++i) {
        const double x = m - 40.0 * sd + 80.0 * sd * i / 200000.0;
        xs.push_back(x);
        ys.push_back(checks::sequential_flow_density(x, mu, sigma));
    }
    const double integral = checks::trapezoid(xs, ys);
    checks::expect_near(integral, 1.0, 1e-3, "density integral");

    // samples from the composed flow at one position, with that position's parameters
    const std::int64_t n = 100000;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(6008);
    auto noise = vocoder::logistic_noise({n, 1}, torch::kFloat64, gen);
    auto samples = student->forward(cond.expand({n, 1, 2}).contiguous(), noise).waveform.reshape({n});
    std::vector<double> v(samples.data_ptr<double>(), samples.data_ptr<double>() + n);
    const double ks = checks::ks_statistic(v, [&](double x) {
        double u = x;
        for (std::size_t f = mu.size(); f-- > 0;) u = (u - mu[f]) / sigma[f];
        return checks::logistic_cdf(u, 0.0, 1.0);
    });
    expect(ks < 0.02, "KS " + fmt(ks));
    return "log_det " + fmt(doubled.log_det.item<double>()) + ", integral " + fmt(integral) + ", KS " + fmt(ks);
}

std::string mol_completeness() {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(7007);
    const std::int64_t length = 16, k = 10;
    vocoder::MoLParams p{at::normal(0.0, 1.0, {length, k}, gen, torch::kFloat64),
                         at::normal(0.0, 0.5, {length, k}, gen, torch::kFloat64),
                         at::normal(-2.0, 0.8, {length, k}, gen, torch::kFloat64)};
    double worst = 0.0;
    for (std::int64_t levels : {8, 256}) {
        vocoder::Quantization q{levels};
        auto grid = q.grid(torch::kFloat64);
        auto x = grid.unsqueeze(1).expand({levels, length});
        auto expand = [&](const torch::Tensor& t) { return t.unsqueeze(0).expand({levels, length, k}); };
        vocoder::MoLParams pe{expand(p.logits), expand(p.means), expand(p.log_scales)};
        auto total = torch::exp(vocoder::mol_log_prob(x, pe, q.half_bin())).sum(0);
        const double dev = (total - 1.0).abs().max().item<double>();
        expect(dev <= 1e-6, std::to_string(levels) + " levels: deviation " + fmt(dev));
        worst = std::max(worst, dev);
    }
    const double delta = 0.5;
    vocoder::MoLParams single{torch::zeros({1, 1}, torch::kFloat64), torch::zeros({1, 1}, torch::kFloat64),
                              torch::zeros({1, 1}, torch::kFloat64)};
    const double mass = std::exp(vocoder::mol_log_prob(torch::zeros({1}, torch::kFloat64), single, delta).item<double>());
    const double expected = 2.0 / (1.0 + std::exp(-delta)) - 1.0;
    checks::expect_near(mass, expected, 1e-9, "2 sigmoid(delta) - 1");
    return "max mass deviation " + fmt(worst) + ", symmetric bin " + fmt(mass) + " vs " + fmt(expected);
}

std::string distill_fixed_point() {
    const auto t0 = std::chrono::steady_clock::now();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(8008);
    vocoder::MoLParams teacher{torch::zeros({1, 1}, torch::kFloat64), torch::zeros({1, 1}, torch::kFloat64),
                               torch::zeros({1, 1}, torch::kFloat64)};
    auto zero = torch::zeros({1}, torch::kFloat64);
    const double same = vocoder::distill_kl_term(teacher, zero, zero, 10000, gen).item<double>();
    const double shifted = vocoder::distill_kl_term(teacher, zero + 1.0, zero, 10000, gen).item<double>();
    const double elapsed = seconds_since(t0);
    const std::string values = "identical " + fmt(same) + ", shifted " + fmt(shifted);
    expect(std::abs(same) < 0.05, "identical student: " + values);
    expect(shifted > 0.3, "shifted student: " + values);
    expect_runtime(elapsed, 120.0, "distillation fixed point");
    return values;
}

std::string teacher_causality() {
    torch::manual_seed(9009);
    auto cfg = checks::tiny_vocoder_config();
    cfg.teacher_blocks = 2;
    cfg.teacher_layers_per_block = 4;
    vocoder::Teacher teacher(cfg);
    teacher->eval();
    torch::NoGradGuard ng;
    const std::int64_t T = 256;
    auto w = torch::rand({1, T}) * 2 - 1;
    auto cond = torch::randn({1, T, cfg.cond_channels});
    auto base = teacher->forward(w, cond);
    std::mt19937_64 rng(9009);
    std::uniform_int_distribution<std::int64_t> pos(0, T - 1);
    std::string where;
    for (int probe = 0; probe < 3; ++probe) {
        const auto t = pos(rng);
        auto w2 = w.clone();
        w2[0][t] += 0.5;
        auto out = teacher->forward(w2, cond);
        for (auto [a, b] : {std::pair{base.logits, out.logits}, std::pair{base.means, out.means},
                            std::pair{base.log_scales, out.log_scales}}) {
            expect(torch::equal(a.slice(1, 0, t + 1), b.slice(1, 0, t + 1)), "output at <= " + std::to_string(t));
        }
        where += std::to_string(t) + " ";
    }
    return "probes at " + where;
}

// ---------------------------------------------------------------------------

std::string run_command(const std::string& cmd) {
    const auto line = cmd + " 2>&1";
    std::string output;
    FILE* pipe = popen(line.c_str(), "r");
    if (!pipe) throw checks::CheckFailure("cannot run " + cmd);
    char buf[4096];
    while (fgets(buf, sizeof buf, pipe)) output += buf;
    const int status = pclose(pipe);
    if (status != 0) throw checks::CheckFailure("command failed: " + cmd + "\n" + output);
    return output;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw checks::CheckFailure("missing " + p.string());
    return json::parse(in);
}

std::string toy_end_to_end(const Options& opts) {
    expect(!opts.etts.empty() && !opts.toy_config.empty(), "--etts and --toy-config are required");
    std::unique_ptr<checks::TempDir> temp;
    fs::path run;
    if (opts.work_dir.empty()) {
        temp = std::make_unique<checks::TempDir>("toy");
        run = temp->path() / "run";
    } else {
        run = fs::path(opts.work_dir) / "toy_run";
        fs::remove_all(run);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::string base = quote(opts.etts) + " ";
    const std::string common = " --config " + quote(opts.toy_config) + " --run-dir " + quote(run);
    std::map<std::string, double> stage_seconds;
    for (const std::string stage :
         {"prepare-data", "train-acoustic", "train-teacher", "distill-student", "build-latent-bank"}) {
        const auto s0 = std::chrono::steady_clock::now();
        run_command(base + stage + common);
        stage_seconds[stage] = seconds_since(s0);
    }
    run_command(base + "evaluate" + common);
    run_command(base + "evaluate --untrained" + common);
    const double elapsed = seconds_since(t0);

    const auto trained = read_json(run / "eval" / "summary.json");
    const auto untrained = read_json(run / "eval_untrained" / "summary.json");
    const double diag = trained.at("attention_diagonality").get<double>();
    const double l1 = trained.at("mel_l1").get<double>();
    const double l1_base = untrained.at("mel_l1").get<double>();
    const double synth = trained.at("synth_mel_l1").get<double>();
    const double synth_base = untrained.at("synth_mel_l1").get<double>();

    std::ostringstream detail;
    detail << "diagonality " << fmt(diag) << ", mel L1 " << fmt(l1) << " vs untrained " << fmt(l1_base)
           << " (ratio " << fmt(l1 / l1_base) << "), synthesis mel L1 " << fmt(synth) << " vs untrained "
           << fmt(synth_base) << " (ratio " << fmt(synth / synth_base) << "), " << fmt(elapsed / 60.0) << " min [";
    for (const auto& [stage, s] : stage_seconds) detail << stage << " " << fmt(s) << " s; ";
    detail << "]";
    std::cout << detail.str() << std::endl;
    expect(diag >= 0.8, "attention diagonality " + fmt(diag));
    expect(l1 <= 0.5 * l1_base, "teacher-forced mel L1 ratio " + fmt(l1 / l1_base));
    expect(synth <= 0.5 * synth_base, "synthesis mel L1 ratio " + fmt(synth / synth_base));
    expect_runtime(elapsed, 90.0 * 60.0, "toy pipeline");
    return detail.str();
}

std::string schedule_conformance() {
    using namespace schedule;
    auto plan = PhasePlan::default_plan();
    std::vector<std::string> order;
    for (std::int64_t s = 0; s <= plan.phases.back().start_step + 100; ++s) {
        auto a = ops_at_step(plan, s);
        const std::string label = a.gan_enabled ? "GAN" : std::to_string(a.ops);
        if (order.empty() || order.back() != label) order.push_back(label);
    }
    expect(order == std::vector<std::string>({"5", "4", "3", "2", "GAN"}), "phase order");
    expect(ops_at_step(plan, plan.phases.back().start_step).ops == 2, "GAN phase keeps ops 2");

    AnnealSpec spec;
    expect(beta_kld(spec, spec.ramp_start) == 0.0, "ramp start is 0");
    expect(beta_kld(spec, spec.ramp_end) == 1.0, "ramp end is 1");
    for (int k = 1; k <= 5; ++k) {
        const auto on = spec.ramp_end + k * spec.period;
        expect(beta_kld(spec, on) == 1.0, "periodic step " + std::to_string(on));
        expect(beta_kld(spec, on + 1) == 0.0 && beta_kld(spec, on - 1) == 0.0, "between periodic steps");
    }

    PolyakState state({torch::full({2}, 3.0, torch::kFloat64)}, 0.999);
    const auto target = torch::full({2}, -1.0, torch::kFloat64);
    double worst = 0.0;
    for (int n = 1; n <= 5000; ++n) {
        state.update({target});
        const double gap = (state.shadow()[0] - target).abs().max().item<double>();
        worst = std::max(worst, std::abs(gap - std::pow(0.999, n) * 4.0));
    }
    expect(worst <= 1e-12, "Polyak identity deviation " + fmt(worst));

    cli::RunConfig defaults;
    expect(defaults.train_teacher.snapshots == 3, "default snapshot count");
    std::vector<Snapshot> snaps;
    for (std::int64_t i = 0; i < defaults.train_teacher.snapshots; ++i) snaps.push_back({"s" + std::to_string(i), i});
    std::vector<std::string> used;
    for (std::int64_t s = 0; s < defaults.distill.steps; ++s) {
        const auto id = snapshot_rotation(snaps, s, defaults.distill.steps).id;
        if (used.empty() || used.back() != id) used.push_back(id);
    }
    expect(used == std::vector<std::string>({"s0", "s1", "s2"}), "three contiguous segments");
    return "order 5 4 3 2 GAN, Polyak deviation " + fmt(worst) + ", 3 snapshot segments";
}

std::string determinism(const Options& opts) {
    expect(!opts.etts.empty() && !opts.toy_config.empty(), "--etts and --toy-config are required");
    checks::TempDir dir("determinism");
    const std::string base = quote(opts.etts) + " train-acoustic --until-step 100 --config " + quote(opts.toy_config) +
                             " --override threads=1 --run-dir ";
    for (const std::string name : {"a", "b"}) run_command(base + quote(dir.path() / name));
    const auto a = dir.path() / "a" / "acoustic" / "step_0000100";
    const auto b = dir.path() / "b" / "acoustic" / "step_0000100";
    expect(fs::is_directory(a) && fs::is_directory(b), "step 100 checkpoints exist");
    const auto diff = checks::compare_trees(a, b);
    expect(diff.empty(), diff);
    std::uintmax_t bytes = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) bytes += e.file_size();
    }
    return "byte-identical step 100 checkpoints (" + std::to_string(bytes) + " bytes)";
}

struct Criterion {
    int id;
    std::string name;
    std::function<std::string(const Options&)> run;
};

std::vector<Criterion> criteria() {
    return {
        {1, "KLD oracle", [](const Options&) { return kld_oracle(); }},
        {2, "hinge-loss table", [](const Options&) { return hinge_table(); }},
        {3, "spectral norm", [](const Options&) { return spectral_norm(); }},
        {4, "ops-slicing equivalence", [](const Options&) { return ops_slicing(); }},
        {5, "gradient checks", [](const Options&) { return gradient_checks(); }},
        {6, "flow correctness", [](const Options&) { return flow_correctness(); }},
        {7, "MoL completeness", [](const Options&) { return mol_completeness(); }},
        {8, "distillation fixed point", [](const Options&) { return distill_fixed_point(); }},
        {9, "teacher causality", [](const Options&) { return teacher_causality(); }},
        {10, "toy end-to-end", toy_end_to_end},
        {11, "schedule conformance", [](const Options&) { return schedule_conformance(); }},
        {12, "determinism", determinism},
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    Options opts;
    int only = 0;
    app.add_option("--criterion", only, "run a single criterion (1-12)")->check(CLI::Range(1, 12));
    app.add_option("--etts", opts.etts, "etts executable");
    app.add_option("--toy-config", opts.toy_config, "toy run configuration");
    app.add_option("--work-dir", opts.work_dir, "keep run directories here");
    CLI11_PARSE(app, argc, argv);

    at::set_num_threads(1);
    int failed = 0;
    for (const auto& c : criteria()) {
        if (only != 0 && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        std::string status = "PASS", detail;
        try {
            detail = c.run(opts);
        } catch (const std::exception& e) {
            status = "FAIL";
            detail = e.what();
            ++failed;
        }
        std::cout << status << " criterion " << c.id << " (" << c.name << ", " << fmt(seconds_since(t0)) << " s): "
                  << detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
