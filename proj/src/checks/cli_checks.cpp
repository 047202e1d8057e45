#include "etts/checkpoint/checkpoint.hpp"
#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/cli/config.hpp"
#include "etts/cli/pipeline.hpp"
#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <cmath>
#include <random>

namespace etts::checks {

std::vector<Check> cli_checks() {
    std::vector<Check> c;

    c.push_back({"cli.config_round_trip", [] {
        cli::RunConfig cfg;
        cfg.seed = 99;
        cfg.train_teacher.steps = 123;
        cfg.phases.phases[1].start_step = 1500;
        auto back = cli::from_json(cli::to_json(cfg));
        expect(cli::canonical_dump(back) == cli::canonical_dump(cfg), "config must round-trip");
        expect(cli::config_hash(back) == cli::config_hash(cfg), "hash must be stable");
        return cli::config_hash(cfg);
    }});

    c.push_back({"cli.config_strict_keys", [] {
        TempDir dir("config");
        util::write_file_atomic(dir.path() / "bad.json", std::string(R"({"train_teacher": {"stepz": 5}})"));
        try {
            cli::load_run_config(dir.path() / "bad.json");
        } catch (const ConfigError& e) {
            expect(std::string(e.what()).find("train_teacher.stepz") != std::string::npos, e.what());
            util::write_file_atomic(dir.path() / "ok.json", std::string(R"({"train_teacher": {"steps": 5}})"));
            auto cfg = cli::load_run_config(dir.path() / "ok.json", {"distill.steps=7", "synthesis.scheme=prior_mean"});
            expect(cfg.train_teacher.steps == 5 && cfg.distill.steps == 7, "file and override values");
            expect(cfg.synthesis.scheme == "prior_mean", "string override");
            return std::string("unknown key named in the error");
        }
        throw CheckFailure("unknown key must be rejected");
    }});

    c.push_back({"cli.checkpoint_round_trip", [] {
        TempDir dir("ckpt");
        torch::manual_seed(1);
        checkpoint::Checkpoint ck;
        ck.meta = {{"kind", "test"}, {"step", 3}};
        ck.tensors = {{"a/weight", torch::randn({3, 4})},
                      {"b/step", torch::tensor(7, torch::kInt64)},
                      {"c/values", torch::randn({5}, torch::kFloat64)}};
        checkpoint::save_checkpoint(dir.path() / "one", ck);
        auto loaded = checkpoint::load_checkpoint(dir.path() / "one");
        checkpoint::save_checkpoint(dir.path() / "two", loaded);
        auto diff = compare_trees(dir.path() / "one", dir.path() / "two");
        expect(diff.empty(), diff);
        for (const auto& [name, t] : ck.tensors) expect(torch::equal(loaded.get(name), t), "tensor " + name);
        bool missing = false;
        try {
            checkpoint::load_checkpoint(dir.path() / "absent");
        } catch (const MissingPathError& e) {
            missing = e.path().find("absent") != std::string::npos;
        }
        expect(missing, "missing checkpoints must name the path");
        return std::string("save -> load -> save byte-identical");
    }});

    c.push_back({"cli.diagonality_metric", [] {
        auto diag = torch::eye(5, torch::kFloat64);
        expect_near(cli::attention_diagonality(diag), 1.0, 0.0, "identity alignment");
        expect_near(cli::attention_coverage(diag), 1.0, 0.0, "identity coverage");
        auto stuck = torch::zeros({6, 4}, torch::kFloat64);
        stuck.select(1, 0).fill_(1.0);
        expect_near(cli::attention_diagonality(stuck), 1.0, 0.0, "staying is a monotone advance");
        expect_near(cli::attention_coverage(stuck), 0.25, 0.0, "one of four tokens covered");
        auto jumpy = torch::zeros({3, 6}, torch::kFloat64);
        jumpy[0][0] = 1.0;
        jumpy[1][4] = 1.0;
        jumpy[2][1] = 1.0;
        expect_near(cli::attention_diagonality(jumpy), 0.0, 0.0, "skips and reversals");
        return std::string("ok");
    }});

    c.push_back({"cli.eval_aggregates", [] {
        std::vector<cli::EvalRow> rows;
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < 7; ++i) {
            cli::EvalRow r;
            r.id = "u" + std::to_string(i);
            r.mel_l1 = u(rng);
            r.attention_diagonality = u(rng);
            r.attention_coverage = u(rng);
            r.stop_accuracy = u(rng);
            if (i % 2 == 0) r.teacher_nll = u(rng);
            rows.push_back(r);
        }
        auto agg = cli::aggregate(rows);
        double l1 = 0.0, nll = 0.0;
        int n_nll = 0;
        for (const auto& r : rows) {
            l1 += r.mel_l1;
            if (r.teacher_nll) {
                nll += *r.teacher_nll;
                ++n_nll;
            }
        }
        expect_near(agg.at("mel_l1").get<double>(), l1 / 7.0, 1e-12, "mel_l1 mean");
        expect_near(agg.at("teacher_nll").get<double>(), nll / n_nll, 1e-12, "teacher_nll mean over rows that have it");
        expect(agg.at("utterances").get<int>() == 7, "row count");
        return std::string("ok");
    }});

    c.push_back({"cli.step_seed", [] {
        expect(cli::step_seed(1, 5, 0) == cli::step_seed(1, 5, 0), "pure function");
        expect(cli::step_seed(1, 5, 0) != cli::step_seed(1, 6, 0), "step changes the seed");
        expect(cli::step_seed(1, 5, 0) != cli::step_seed(1, 5, 1), "stream changes the seed");
        expect(cli::step_seed(1, 5, 0) != cli::step_seed(2, 5, 0), "base seed changes the seed");
        return std::string("ok");
    }});

    return c;
}

}  // namespace etts::checks
