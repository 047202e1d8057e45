// etts command line front end.

#include "etts/checks/checks.hpp"
#include "etts/cli/config.hpp"
#include "etts/cli/pipeline.hpp"
#include "etts/error.hpp"
#include "etts/inference/inference.hpp"
#include "etts/signal/wav.hpp"
#include "etts/util/atomic_file.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string run_dir = "runs/default";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "run configuration (JSON)");
    cmd->add_option("--seed", c.seed, "global seed, overrides the config value");
    cmd->add_option("--run-dir", c.run_dir, "run directory")->capture_default_str();
    cmd->add_option("--override", c.overrides, "dotted key=value override, repeatable");
}

etts::cli::RunConfig resolve(const Common& c) {
    auto overrides = c.overrides;
    if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
    if (!c.config.empty() && !fs::exists(c.config)) throw etts::MissingPathError(c.config);
    return etts::cli::load_run_config(c.config, overrides);
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

int fail(const std::string& kind, const std::string& message, int code, const json& extra = json::object()) {
    json j{{"status", "error"}, {"kind", kind}, {"message", message}};
    j.update(extra);
    std::cerr << j.dump() << std::endl;
    return code;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

json to_json_matrix(const torch::Tensor& m) {
    auto c = m.to(torch::kFloat64).contiguous();
    json rows = json::array();
    for (std::int64_t i = 0; i < c.size(0); ++i) {
        json row = json::array();
        for (std::int64_t j = 0; j < c.size(1); ++j) row.push_back(c[i][j].item<double>());
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"etts: expressive toy text-to-speech toolkit"};
    app.require_subcommand(1);

    Common common;
    auto* prepare = app.add_subcommand("prepare-data", "generate or read the corpus and cache features");
    add_common(prepare, common);

    etts::cli::StageOptions stage;
    std::int64_t until = 0;
    bool no_resume = false;
    auto add_stage = [&](CLI::App* cmd) {
        add_common(cmd, common);
        cmd->add_option("--until-step", until, "stop once this many steps are done");
        cmd->add_flag("--no-resume", no_resume, "ignore existing checkpoints");
    };
    auto* train_acoustic = app.add_subcommand("train-acoustic", "train the acoustic model through the phase plan");
    add_stage(train_acoustic);
    auto* train_teacher = app.add_subcommand("train-teacher", "train the mixture-of-logistics teacher");
    add_stage(train_teacher);
    auto* distill = app.add_subcommand("distill-student", "distill the flow student from teacher snapshots");
    add_stage(distill);

    auto* bank_cmd = app.add_subcommand("build-latent-bank", "extract reference and centroid latents");
    add_common(bank_cmd, common);

    std::string phonemes, tag = "statement", out_wav = "out.wav", scheme, reference_id;
    auto* synth = app.add_subcommand("synthesize", "phonemes to waveform");
    add_common(synth, common);
    synth->add_option("--phonemes", phonemes, "space separated phoneme symbols")->required();
    synth->add_option("--tag", tag, "statement or yes_no_question")->capture_default_str();
    synth->add_option("--out", out_wav, "output WAV path")->capture_default_str();
    synth->add_option("--scheme", scheme, "prior_sample, prior_mean, train_centroid or reference_utterance");

    etts::cli::EvaluateOptions eval_opts;
    bool no_vocoder = false, no_synthesis = false;
    auto* evaluate = app.add_subcommand("evaluate", "objective metrics report");
    add_common(evaluate, common);
    evaluate->add_flag("--untrained", eval_opts.untrained, "evaluate freshly initialized models");
    evaluate->add_flag("--no-vocoder", no_vocoder, "skip vocoder metrics");
    evaluate->add_flag("--no-synthesis", no_synthesis, "skip end-to-end synthesis metrics");
    evaluate->add_option("--max-utterances", eval_opts.max_utterances, "limit the number of utterances");

    auto* selfcheck = app.add_subcommand("selfcheck", "run the property check suite");
    add_common(selfcheck, common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (selfcheck->parsed()) {
            auto results = etts::checks::run_checks(etts::checks::property_checks(), std::cout);
            std::size_t failed = 0;
            for (const auto& r : results) failed += r.passed ? 0 : 1;
            emit({{"status", failed == 0 ? "ok" : "failed"}, {"checks", results.size()}, {"failed", failed}});
            return failed == 0 ? 0 : 1;
        }

        const auto cfg = resolve(common);
        const fs::path run_dir = common.run_dir;
        fs::create_directories(run_dir);
        etts::util::DirectoryLock lock(run_dir);
        stage.resume = !no_resume;
        if (until > 0) stage.until_step = until;

        if (prepare->parsed()) {
            etts::cli::JsonlLogger log(run_dir / "logs" / "prepare_data.jsonl");
            auto data = etts::cli::prepare_data(cfg, run_dir, &log);
            emit({{"status", "ok"}, {"command", "prepare-data"}, {"utterances", data.items.size()},
                  {"config_hash", etts::cli::config_hash(cfg)}});
        } else if (train_acoustic->parsed()) {
            auto r = etts::cli::train_acoustic(cfg, run_dir, stage);
            emit({{"status", "ok"}, {"command", "train-acoustic"}, {"steps", r.steps_done},
                  {"checkpoint", r.checkpoint.string()}});
        } else if (train_teacher->parsed()) {
            auto r = etts::cli::train_teacher(cfg, run_dir, stage);
            emit({{"status", "ok"}, {"command", "train-teacher"}, {"steps", r.steps_done},
                  {"checkpoint", r.checkpoint.string()}});
        } else if (distill->parsed()) {
            auto r = etts::cli::distill_student(cfg, run_dir, stage);
            emit({{"status", "ok"}, {"command", "distill-student"}, {"steps", r.steps_done},
                  {"checkpoint", r.checkpoint.string()}});
        } else if (bank_cmd->parsed()) {
            auto path = etts::cli::build_latent_bank(cfg, run_dir);
            emit({{"status", "ok"}, {"command", "build-latent-bank"}, {"bank", path.string()}});
        } else if (synth->parsed()) {
            at::set_num_threads(cfg.threads);
            auto acoustic = etts::cli::load_acoustic(cfg, etts::cli::latest_checkpoint(run_dir, "acoustic"));
            auto snaps = etts::cli::read_snapshots(run_dir);
            auto teacher = etts::cli::load_teacher(cfg, snaps.back().dir);
            auto student = etts::cli::load_student(cfg, etts::cli::latest_checkpoint(run_dir, "student"));
            auto bank = etts::inference::load_latent_bank(run_dir / "latent_bank.bin");

            etts::inference::SynthesisRequest req;
            req.tokens = etts::cli::toy_inventory().encode(split_ws(phonemes));
            req.tag = etts::signal::parse_intonation(tag);
            req.scheme.kind = etts::inference::parse_latent_kind(scheme.empty() ? cfg.synthesis.scheme : scheme);
            if (req.scheme.kind == etts::inference::LatentKind::reference_utterance) {
                req.scheme.reference_id = bank.provenance.at(
                    req.tag == etts::signal::IntonationTag::yes_no_question ? "question_z" : "statement_z");
            }
            req.ops = cfg.synthesis.ops;
            req.max_steps = cfg.synthesis.max_steps;
            req.seed = cfg.seed;
            auto res = etts::inference::synthesize(req, acoustic, teacher, student, bank, cfg.mel.sample_rate);
            etts::signal::save_wav(out_wav, res.waveform);
            json diag{{"frames", res.frames},
                      {"samples", res.waveform.samples.size()},
                      {"stop_step", res.stop_step},
                      {"hit_max_steps", res.hit_max_steps},
                      {"scheme", etts::inference::to_string(req.scheme.kind)},
                      {"tag", etts::signal::to_string(req.tag)},
                      {"attention_diagonality", etts::cli::attention_diagonality(res.alignments)},
                      {"alignments", to_json_matrix(res.alignments)}};
            etts::util::write_file_atomic(out_wav + ".json", diag.dump() + "\n");
            emit({{"status", "ok"}, {"command", "synthesize"}, {"out", out_wav}, {"frames", res.frames},
                  {"samples", res.waveform.samples.size()}, {"stop_step", res.stop_step}});
        } else if (evaluate->parsed()) {
            eval_opts.vocoder = !no_vocoder;
            eval_opts.synthesis = !no_synthesis;
            auto report = etts::cli::evaluate(cfg, run_dir, eval_opts);
            const auto dir = run_dir / (eval_opts.untrained ? "eval_untrained" : "eval");
            etts::cli::write_eval_report(dir, report);
            emit({{"status", "ok"}, {"command", "evaluate"}, {"report", (dir / "report.jsonl").string()},
                  {"summary", report.aggregates}});
        }
    } catch (const etts::MissingPathError& e) {
        return fail("missing_path", e.what(), 2, {{"path", e.path()}});
    } catch (const etts::ConfigError& e) {
        return fail("config", e.what(), 1);
    } catch (const etts::Error& e) {
        return fail("error", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
