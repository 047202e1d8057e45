#include "etts/cli/pipeline.hpp"

#include "etts/acoustic/loss.hpp"
#include "etts/adversarial/adversarial.hpp"
#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>

namespace etts::cli {

namespace fs = std::filesystem;
using nlohmann::json;
namespace ckpt = etts::checkpoint;

std::uint64_t step_seed(std::uint64_t seed, std::int64_t step, std::uint64_t stream) {
    // splitmix64 over a combined key
    std::uint64_t x = seed ^ (static_cast<std::uint64_t>(step) * 0x9E3779B97F4A7C15ULL) ^ (stream << 56);
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return (x ^ (x >> 31)) & 0x7FFFFFFFFFFFFFFFULL;
}

JsonlLogger::JsonlLogger(const fs::path& path) {
    fs::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw Error("cannot open log " + path.string());
}

void JsonlLogger::write(const json& record) {
    if (!out_.is_open()) return;
    out_ << record.dump() << '\n';
    out_.flush();
}

std::int64_t Dataset::min_frames() const {
    std::int64_t m = std::numeric_limits<std::int64_t>::max();
    for (const auto& u : items) m = std::min(m, u.mel.size(0));
    return items.empty() ? 0 : m;
}

acoustic::PhonemeInventory toy_inventory() {
    std::vector<std::string> symbols;
    for (const auto& t : signal::toy_token_table()) symbols.push_back(t.symbol);
    return acoustic::PhonemeInventory(symbols);
}

// ---------------------------------------------------------------------------
// Data

namespace {

json mel_json(const signal::MelConfig& m) {
    return {{"sample_rate", m.sample_rate}, {"fft_size", m.fft_size}, {"hop", m.hop},     {"win", m.win},
            {"n_mels", m.n_mels},           {"fmin", m.fmin},         {"fmax", m.fmax},   {"log_floor", m.log_floor}};
}

}  // namespace

Dataset prepare_data(const RunConfig& cfg, const fs::path& run_dir, JsonlLogger* log) {
    fs::create_directories(run_dir);
    Dataset data;
    fs::path manifest_path;
    if (cfg.corpus.manifest.empty()) {
        manifest_path = run_dir / "corpus" / "manifest.tsv";
        if (!fs::exists(manifest_path)) {
            signal::generate_toy_corpus(cfg.corpus.num_utterances, cfg.corpus.seed, cfg.mel, run_dir / "corpus",
                                        cfg.corpus.toy);
            if (log) log->write({{"event", "corpus_generated"}, {"utterances", cfg.corpus.num_utterances}});
        }
    } else {
        manifest_path = cfg.corpus.manifest;
    }
    data.manifest = signal::read_manifest(manifest_path);
    data.manifest.validate();
    if (data.manifest.empty()) throw DataError("manifest " + manifest_path.string() + " is empty");

    const auto features_dir = run_dir / "features";
    const auto key = util::fnv1a_hex(mel_json(cfg.mel).dump() + util::read_text_file(manifest_path));
    ckpt::Checkpoint cache;
    bool have_cache = false;
    if (fs::exists(features_dir / "manifest.json")) {
        cache = ckpt::load_checkpoint(features_dir);
        have_cache = cache.meta.value("features_key", std::string()) == key;
    }
    if (!have_cache) {
        cache = ckpt::Checkpoint{};
        cache.meta = {{"kind", "features"}, {"features_key", key}, {"mel", mel_json(cfg.mel)}};
        for (const auto& utt : data.manifest.utterances) {
            auto wave = signal::load_wav(data.manifest.resolve_audio(utt));
            if (wave.sample_rate != cfg.mel.sample_rate) {
                throw DataError(utt.id + ": sample_rate=" + std::to_string(wave.sample_rate) + " (expected " +
                                std::to_string(cfg.mel.sample_rate) + ")");
            }
            auto mel = signal::wav_to_mel(wave, cfg.mel).frames;
            const auto len = mel.size(0) * cfg.mel.hop;
            auto audio = torch::from_blob(wave.samples.data(), {static_cast<std::int64_t>(wave.samples.size())},
                                          torch::kFloat32)
                             .slice(0, 0, len)
                             .clone();
            cache.tensors.emplace_back("mel/" + utt.id, mel);
            cache.tensors.emplace_back("audio/" + utt.id, audio);
        }
        ckpt::save_checkpoint(features_dir, cache);
        if (log) log->write({{"event", "features_cached"}, {"utterances", data.manifest.size()}});
    }
    const auto inventory = toy_inventory();
    for (const auto& utt : data.manifest.utterances) {
        Utterance u;
        u.id = utt.id;
        u.tokens = torch::tensor(inventory.encode(utt.phonemes), torch::kInt64);
        u.mel = cache.get("mel/" + utt.id);
        u.audio = cache.get("audio/" + utt.id);
        u.tag = utt.intonation;
        data.items.push_back(std::move(u));
    }
    return data;
}

AcousticBatch collate(const Dataset& data, const std::vector<std::size_t>& idx, double pad_value) {
    const auto B = static_cast<std::int64_t>(idx.size());
    std::int64_t max_n = 0, max_m = 0, n_mels = data.items.at(idx.at(0)).mel.size(1);
    for (auto i : idx) {
        max_n = std::max(max_n, data.items[i].tokens.size(0));
        max_m = std::max(max_m, data.items[i].mel.size(0));
    }
    AcousticBatch b;
    b.tokens = torch::zeros({B, max_n}, torch::kInt64);
    b.token_lengths = torch::zeros({B}, torch::kInt64);
    b.mel = torch::full({B, max_m, n_mels}, pad_value, torch::kFloat32);
    b.mel_lengths = torch::zeros({B}, torch::kInt64);
    for (std::int64_t k = 0; k < B; ++k) {
        const auto& u = data.items[idx[k]];
        b.tokens[k].slice(0, 0, u.tokens.size(0)).copy_(u.tokens);
        b.token_lengths[k] = u.tokens.size(0);
        b.mel[k].slice(0, 0, u.mel.size(0)).copy_(u.mel);
        b.mel_lengths[k] = u.mel.size(0);
    }
    return b;
}

std::vector<std::size_t> sample_batch(std::size_t n, std::int64_t batch, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(n, static_cast<std::size_t>(batch)));
    return idx;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers

json checkpoint_meta(const RunConfig& cfg, const std::string& kind, std::int64_t step) {
    return {{"kind", kind}, {"step", step}, {"config", to_json(cfg)}, {"config_hash", config_hash(cfg)}};
}

namespace {

std::string step_name(std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%07lld", static_cast<long long>(step));
    return buf;
}

void set_latest(const fs::path& stage_dir, const std::string& name) {
    util::write_file_atomic(stage_dir / "latest.json", json{{"checkpoint", name}}.dump() + "\n");
}

ckpt::NamedTensors named_params(torch::nn::Module& m) {
    ckpt::NamedTensors out;
    for (auto& p : m.named_parameters()) out.emplace_back(p.key(), p.value());
    return out;
}

void append(ckpt::NamedTensors& dst, ckpt::NamedTensors src) {
    for (auto& e : src) dst.push_back(std::move(e));
}

void set_adam(torch::optim::Adam& opt, double lr, double beta1, double beta2) {
    for (auto& group : opt.param_groups()) {
        auto& o = static_cast<torch::optim::AdamOptions&>(group.options());
        o.lr(lr);
        o.betas({beta1, beta2});
    }
}

double polyak_decay_at(double decay, bool warmup, std::int64_t updates) {
    if (!warmup) return decay;
    return std::min(decay, (1.0 + static_cast<double>(updates)) / (10.0 + static_cast<double>(updates)));
}

std::vector<torch::Tensor> param_list(torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (auto& p : m.named_parameters()) out.push_back(p.value());
    return out;
}

ckpt::NamedTensors shadow_tensors(torch::nn::Module& m, const schedule::PolyakState& polyak, const std::string& prefix) {
    ckpt::NamedTensors out;
    std::size_t i = 0;
    for (auto& p : m.named_parameters()) out.emplace_back(prefix + p.key(), polyak.shadow().at(i++));
    for (auto& b : m.named_buffers()) out.emplace_back(prefix + b.key(), b.value());
    return out;
}

void restore_shadow(torch::nn::Module& m, schedule::PolyakState& polyak, const std::string& prefix,
                    const ckpt::Checkpoint& c) {
    torch::NoGradGuard no_grad;
    std::size_t i = 0;
    for (auto& p : m.named_parameters()) polyak.shadow().at(i++).copy_(c.get(prefix + p.key()));
}

void seed_step(const RunConfig& cfg, std::int64_t step, std::uint64_t stream) {
    torch::manual_seed(step_seed(cfg.seed, step, stream));
}

std::optional<fs::path> find_latest(const fs::path& stage_dir) {
    const auto pointer = stage_dir / "latest.json";
    if (!fs::exists(pointer)) return std::nullopt;
    auto j = json::parse(util::read_text_file(pointer));
    return stage_dir / j.at("checkpoint").get<std::string>();
}

void announce(const std::string& stage, std::int64_t step, std::int64_t total, const json& record) {
    std::cerr << "[" << stage << "] step " << step << "/" << total << " " << record.dump() << "\n";
}

}  // namespace

fs::path latest_checkpoint(const fs::path& run_dir, const std::string& stage) {
    auto found = find_latest(run_dir / stage);
    if (!found) throw MissingPathError((run_dir / stage / "latest.json").string());
    if (!fs::exists(*found)) throw MissingPathError(found->string());
    return *found;
}

acoustic::AcousticModel load_acoustic(const RunConfig& cfg, const fs::path& ckpt_dir) {
    auto c = ckpt::load_checkpoint(ckpt_dir);
    acoustic::AcousticModel model(cfg.acoustic);
    ckpt::restore_module(*model, "model/", c);
    model->eval();
    return model;
}

vocoder::Teacher load_teacher(const RunConfig& cfg, const fs::path& ckpt_dir) {
    auto c = ckpt::load_checkpoint(ckpt_dir);
    vocoder::Teacher teacher(cfg.vocoder);
    ckpt::restore_module(*teacher, "teacher/", c);
    teacher->eval();
    return teacher;
}

vocoder::Student load_student(const RunConfig& cfg, const fs::path& ckpt_dir) {
    auto c = ckpt::load_checkpoint(ckpt_dir);
    vocoder::Student student(cfg.vocoder);
    ckpt::restore_module(*student, "student/", c);
    student->eval();
    return student;
}

// ---------------------------------------------------------------------------
// Acoustic training

StageResult train_acoustic(const RunConfig& cfg, const fs::path& run_dir, const StageOptions& opts) {
    at::set_num_threads(cfg.threads);
    JsonlLogger log(run_dir / "logs" / "train_acoustic.jsonl");
    auto data = prepare_data(cfg, run_dir, &log);
    const auto stage_dir = run_dir / "acoustic";
    fs::create_directories(stage_dir);

    torch::manual_seed(cfg.seed);
    acoustic::AcousticModel model(cfg.acoustic);
    adversarial::Discriminator disc(cfg.discriminator);
    torch::optim::Adam opt_g(model->parameters(), torch::optim::AdamOptions(cfg.optimizer.lr));
    torch::optim::Adam opt_d(disc->parameters(), torch::optim::AdamOptions(cfg.optimizer.lr));
    const auto g_params = named_params(*model);
    const auto d_params = named_params(*disc);

    std::int64_t start = 0;
    if (opts.resume) {
        if (auto latest = find_latest(stage_dir)) {
            auto c = ckpt::load_checkpoint(*latest);
            ckpt::restore_module(*model, "model/", c);
            ckpt::restore_module(*disc, "disc/", c);
            ckpt::restore_adam_state(opt_g, g_params, "optim_g/", c);
            ckpt::restore_adam_state(opt_d, d_params, "optim_d/", c);
            start = c.meta.at("step").get<std::int64_t>();
            log.write({{"event", "resumed"},
                       {"step", start},
                       {"from_phase", c.meta.value("phase", "")},
                       {"config_changed", c.meta.value("config_hash", "") != config_hash(cfg)}});
        }
    }
    const auto total = opts.until_step ? std::min(*opts.until_step, cfg.acoustic_steps) : cfg.acoustic_steps;
    const double pad = cfg.acoustic.pad_value;

    auto save = [&](std::int64_t steps_done, const schedule::PhaseAttributes& attrs) {
        ckpt::Checkpoint c;
        c.meta = checkpoint_meta(cfg, "acoustic", steps_done);
        c.meta["ops"] = attrs.ops;
        c.meta["phase"] = attrs.name;
        c.tensors = ckpt::module_tensors(*model, "model/");
        append(c.tensors, ckpt::module_tensors(*disc, "disc/"));
        append(c.tensors, ckpt::adam_state_tensors(opt_g, g_params, "optim_g/"));
        append(c.tensors, ckpt::adam_state_tensors(opt_d, d_params, "optim_d/"));
        const auto name = step_name(steps_done);
        ckpt::save_checkpoint(stage_dir / name, c);
        set_latest(stage_dir, name);
        return stage_dir / name;
    };

    model->train();
    disc->train();
    std::string current_phase;
    StageResult result;
    result.steps_done = start;
    for (std::int64_t step = start; step < total; ++step) {
        const auto attrs = schedule::ops_at_step(cfg.phases, step);
        if (attrs.name != current_phase) {
            const auto p = schedule::optimizer_phase_params(attrs.gan_enabled ? "gan" : attrs.name, cfg.optimizer);
            set_adam(opt_g, p.lr, p.beta1, p.beta2);
            set_adam(opt_d, p.lr, p.beta1, p.beta2);
            current_phase = attrs.name;
            log.write({{"event", "phase"}, {"step", step}, {"phase", attrs.name}, {"ops", attrs.ops},
                       {"gan", attrs.gan_enabled}, {"beta1", p.beta1}});
        }
        seed_step(cfg, step, 1);
        std::mt19937_64 rng(step_seed(cfg.seed, step, 2));
        const auto batch = collate(data, sample_batch(data.items.size(), cfg.train_acoustic.batch_size, rng), pad);
        const double beta = schedule::beta_kld(cfg.anneal, step);

        auto q = model->posterior(batch.mel, batch.mel_lengths);
        auto z = acoustic::reparameterize(q, torch::randn_like(q.mu));
        auto out = model->teacher_forced(batch.tokens, batch.token_lengths, batch.mel, batch.mel_lengths, z, attrs.ops);

        json record{{"step", step}, {"phase", attrs.name}, {"ops", attrs.ops}, {"beta", beta}};
        if (!attrs.gan_enabled) {
            auto terms = acoustic::acoustic_loss(out.frames, batch.mel, batch.mel_lengths, out.stop_logits, attrs.ops,
                                                 q, beta);
            opt_g.zero_grad();
            terms.total.backward();
            torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.train_acoustic.grad_clip);
            opt_g.step();
            record.update({{"l1", terms.l1.item<double>()},
                           {"kld", terms.kld.item<double>()},
                           {"stop", terms.stop.item<double>()},
                           {"total", terms.total.item<double>()}});
        } else {
            auto pairs = adversarial::paired_windows(batch.mel, out.frames, batch.mel_lengths,
                                                     cfg.train_acoustic.gan_window, rng);
            std::vector<adversarial::WindowCrop> real, fake, fake_detached;
            for (const auto& p : pairs) {
                real.push_back(p.real);
                fake.push_back(p.fake);
                fake_detached.push_back({p.fake.start, p.fake.width, p.fake.frames.detach()});
            }
            auto d_loss = adversarial::d_hinge_loss(adversarial::score_crops(disc, fake_detached),
                                                    adversarial::score_crops(disc, real));
            opt_d.zero_grad();
            d_loss.backward();
            opt_d.step();

            auto score_fake = adversarial::score_crops(disc, fake);
            auto score_real = adversarial::score_crops(disc, real);
            auto rep = adversarial::g_composite_loss(out.frames, batch.mel, batch.mel_lengths, score_fake, score_real,
                                                     q, cfg.train_acoustic.gan_alpha, beta);
            auto stop = acoustic::stop_loss(out.stop_logits, batch.mel_lengths, attrs.ops);
            auto total_g = rep.total + stop;
            opt_g.zero_grad();
            total_g.backward();
            torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.train_acoustic.grad_clip);
            opt_g.step();
            record.update({{"d_loss", d_loss.item<double>()},
                           {"g_l1", rep.g_l1.item<double>()},
                           {"g_adv", rep.g_adv.item<double>()},
                           {"g_kld", rep.g_kld.item<double>()},
                           {"alpha", rep.alpha},
                           {"stop", stop.item<double>()},
                           {"total", total_g.item<double>()}});
        }
        log.write(record);
        if (step % 100 == 0) announce("acoustic", step, total, record);
        const auto done = step + 1;
        result.steps_done = done;
        if (done % cfg.train_acoustic.checkpoint_every == 0 || done == total) result.checkpoint = save(done, attrs);
    }
    if (result.checkpoint.empty()) {
        if (auto latest = find_latest(stage_dir)) result.checkpoint = *latest;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Vocoder training

namespace {

/// Posterior means of every utterance under the latest acoustic checkpoint, (n, latent).
torch::Tensor utterance_latents(const RunConfig& cfg, const fs::path& run_dir, const Dataset& data) {
    auto model = load_acoustic(cfg, latest_checkpoint(run_dir, "acoustic"));
    std::vector<torch::Tensor> rows;
    for (const auto& u : data.items) rows.push_back(inference::posterior_mean(model, u.mel));
    return torch::stack(rows, 0);
}

struct VocoderBatch {
    torch::Tensor cond;   // (B, L, C)
    torch::Tensor audio;  // (B, L)
};

VocoderBatch vocoder_batch(vocoder::Teacher& teacher, const Dataset& data, const std::vector<std::size_t>& idx,
                           const torch::Tensor& latents, std::int64_t window, std::int64_t hop, std::mt19937_64& rng) {
    std::vector<torch::Tensor> conds, audios;
    for (auto i : idx) {
        const auto& u = data.items[i];
        const auto M = u.mel.size(0);
        const auto w = std::min(window, M);
        std::uniform_int_distribution<std::int64_t> dist(0, M - w);
        const auto s = dist(rng);
        auto frames = teacher->conditioning()->frames(u.mel.unsqueeze(0), latents[static_cast<std::int64_t>(i)].unsqueeze(0))[0];
        conds.push_back(frames.slice(0, s, s + w).repeat_interleave(hop, 0));
        audios.push_back(u.audio.slice(0, s * hop, (s + w) * hop));
    }
    return {torch::stack(conds, 0), torch::stack(audios, 0)};
}

}  // namespace

std::vector<SnapshotRecord> read_snapshots(const fs::path& run_dir) {
    const auto path = run_dir / "teacher" / "snapshots.json";
    auto j = json::parse(util::read_text_file(path));
    std::vector<SnapshotRecord> out;
    for (const auto& s : j.at("snapshots")) {
        out.push_back({s.at("id").get<std::string>(), s.at("step").get<std::int64_t>(),
                       run_dir / "teacher" / s.at("id").get<std::string>()});
    }
    if (out.empty()) throw DataError("teacher snapshot list is empty");
    return out;
}

StageResult train_teacher(const RunConfig& cfg, const fs::path& run_dir, const StageOptions& opts) {
    at::set_num_threads(cfg.threads);
    JsonlLogger log(run_dir / "logs" / "train_teacher.jsonl");
    auto data = prepare_data(cfg, run_dir, &log);
    const auto latents = utterance_latents(cfg, run_dir, data);
    const auto stage_dir = run_dir / "teacher";
    fs::create_directories(stage_dir);
    const auto& tc = cfg.train_teacher;
    const auto window = std::min(tc.window_frames, data.min_frames());

    torch::manual_seed(step_seed(cfg.seed, 0, 10));
    vocoder::Teacher teacher(cfg.vocoder);
    const auto params = named_params(*teacher);
    const auto base = schedule::optimizer_phase_params("teacher", cfg.optimizer);
    torch::optim::Adam opt(teacher->parameters(),
                           torch::optim::AdamOptions(base.lr).betas({base.beta1, base.beta2}));
    schedule::PolyakState polyak(param_list(*teacher), tc.polyak_decay);

    std::int64_t start = 0;
    json snapshots = json::array();
    if (opts.resume) {
        if (auto latest = find_latest(stage_dir)) {
            auto c = ckpt::load_checkpoint(*latest);
            ckpt::restore_module(*teacher, "teacher/", c);
            restore_shadow(*teacher, polyak, "shadow/", c);
            ckpt::restore_adam_state(opt, params, "optim/", c);
            start = c.meta.at("step").get<std::int64_t>();
            snapshots = c.meta.value("snapshots", json::array());
            log.write({{"event", "resumed"}, {"step", start}});
        }
    }
    const auto total = opts.until_step ? std::min(*opts.until_step, tc.steps) : tc.steps;

    auto save_state = [&](std::int64_t done) {
        ckpt::Checkpoint c;
        c.meta = checkpoint_meta(cfg, "teacher", done);
        c.meta["phase"] = "teacher";
        c.meta["snapshots"] = snapshots;
        c.tensors = ckpt::module_tensors(*teacher, "teacher/");
        append(c.tensors, shadow_tensors(*teacher, polyak, "shadow/"));
        append(c.tensors, ckpt::adam_state_tensors(opt, params, "optim/"));
        const auto name = step_name(done);
        ckpt::save_checkpoint(stage_dir / name, c);
        set_latest(stage_dir, name);
        return stage_dir / name;
    };
    auto save_snapshot = [&](std::int64_t done, std::int64_t index) {
        ckpt::Checkpoint c;
        c.meta = checkpoint_meta(cfg, "teacher_snapshot", done);
        c.meta["phase"] = "teacher";
        const auto id = "snapshot_" + std::to_string(index);
        c.meta["snapshot_id"] = id;
        c.tensors = shadow_tensors(*teacher, polyak, "teacher/");
        ckpt::save_checkpoint(stage_dir / id, c);
        snapshots.push_back({{"id", id}, {"step", done}});
        util::write_file_atomic(stage_dir / "snapshots.json", json{{"snapshots", snapshots}}.dump(2) + "\n");
        log.write({{"event", "snapshot"}, {"id", id}, {"step", done}});
    };

    teacher->train();
    StageResult result;
    result.steps_done = start;
    for (std::int64_t step = start; step < total; ++step) {
        seed_step(cfg, step, 11);
        std::mt19937_64 rng(step_seed(cfg.seed, step, 12));
        const double lr = base.lr_at_epoch(step / tc.epoch_steps);
        set_adam(opt, lr, base.beta1, base.beta2);
        auto idx = sample_batch(data.items.size(), tc.batch_size, rng);
        auto batch = vocoder_batch(teacher, data, idx, latents, window, cfg.mel.hop, rng);
        auto loss = vocoder::teacher_nll_loss(teacher, batch.audio, batch.cond);
        opt.zero_grad();
        loss.backward();
        torch::nn::utils::clip_grad_norm_(teacher->parameters(), tc.grad_clip);
        opt.step();
        polyak.update(param_list(*teacher), polyak_decay_at(tc.polyak_decay, tc.polyak_warmup, step));

        json record{{"step", step}, {"nll", loss.item<double>()}, {"lr", lr}};
        log.write(record);
        if (step % 100 == 0) announce("teacher", step, total, record);
        const auto done = step + 1;
        result.steps_done = done;
        for (std::int64_t i = 0; i < tc.snapshots; ++i) {
            if (done == (i + 1) * tc.steps / tc.snapshots) save_snapshot(done, i);
        }
        if (done % 500 == 0 || done == total) result.checkpoint = save_state(done);
    }
    return result;
}

StageResult distill_student(const RunConfig& cfg, const fs::path& run_dir, const StageOptions& opts) {
    at::set_num_threads(cfg.threads);
    JsonlLogger log(run_dir / "logs" / "distill_student.jsonl");
    auto data = prepare_data(cfg, run_dir, &log);
    const auto latents = utterance_latents(cfg, run_dir, data);
    const auto snaps = read_snapshots(run_dir);
    std::vector<schedule::Snapshot> plan;
    for (const auto& s : snaps) plan.push_back({s.id, s.step});
    const auto stage_dir = run_dir / "student";
    fs::create_directories(stage_dir);
    const auto& sc = cfg.distill;
    const auto window = std::min(sc.window_frames, data.min_frames());
    if (window * cfg.mel.hop < sc.distill.stft_fft) throw ConfigError("student window shorter than the STFT size");

    torch::manual_seed(step_seed(cfg.seed, 0, 20));
    vocoder::Student student(cfg.vocoder);
    const auto params = named_params(*student);
    const auto base = schedule::optimizer_phase_params("student", cfg.optimizer);
    torch::optim::Adam opt(student->parameters(),
                           torch::optim::AdamOptions(base.lr).betas({base.beta1, base.beta2}));
    schedule::PolyakState polyak(param_list(*student), sc.polyak_decay);

    std::int64_t start = 0;
    if (opts.resume) {
        if (auto latest = find_latest(stage_dir)) {
            auto c = ckpt::load_checkpoint(*latest);
            ckpt::restore_module(*student, "live/", c);
            restore_shadow(*student, polyak, "student/", c);
            ckpt::restore_adam_state(opt, params, "optim/", c);
            start = c.meta.at("step").get<std::int64_t>();
            log.write({{"event", "resumed"}, {"step", start}});
        }
    }
    const auto total = opts.until_step ? std::min(*opts.until_step, sc.steps) : sc.steps;

    std::string active;
    vocoder::Teacher teacher{nullptr};
    vocoder::FrozenGuard guard;
    auto save = [&](std::int64_t done) {
        ckpt::Checkpoint c;
        c.meta = checkpoint_meta(cfg, "student", done);
        c.meta["phase"] = "student";
        c.meta["teacher_snapshot"] = active;
        c.tensors = shadow_tensors(*student, polyak, "student/");
        append(c.tensors, ckpt::module_tensors(*student, "live/"));
        append(c.tensors, ckpt::adam_state_tensors(opt, params, "optim/"));
        const auto name = step_name(done);
        ckpt::save_checkpoint(stage_dir / name, c);
        set_latest(stage_dir, name);
        return stage_dir / name;
    };

    student->train();
    StageResult result;
    result.steps_done = start;
    for (std::int64_t step = start; step < total; ++step) {
        const auto& snap = schedule::snapshot_rotation(plan, step, sc.steps);
        if (snap.id != active) {
            teacher = load_teacher(cfg, run_dir / "teacher" / snap.id);
            guard = vocoder::FrozenGuard(*teacher);
            active = snap.id;
            log.write({{"event", "teacher_snapshot"}, {"step", step}, {"id", snap.id}});
        }
        seed_step(cfg, step, 21);
        std::mt19937_64 rng(step_seed(cfg.seed, step, 22));
        auto idx = sample_batch(data.items.size(), sc.batch_size, rng);
        VocoderBatch batch;
        {
            torch::NoGradGuard no_grad;
            batch = vocoder_batch(teacher, data, idx, latents, window, cfg.mel.hop, rng);
        }
        auto noise = vocoder::logistic_noise({batch.audio.size(0), batch.audio.size(1)}, batch.audio.options());
        auto out = student->forward(batch.cond, noise);
        auto terms = vocoder::distill_loss(out, teacher, batch.cond, batch.audio, sc.distill);
        opt.zero_grad();
        terms.total.backward();
        torch::nn::utils::clip_grad_norm_(student->parameters(), sc.grad_clip);
        opt.step();
        guard.verify(*teacher);
        polyak.update(param_list(*student), polyak_decay_at(sc.polyak_decay, sc.polyak_warmup, step));

        json record{{"step", step},
                    {"kl_term", terms.kl_term.item<double>()},
                    {"spectral_term", terms.spectral_term.item<double>()},
                    {"total", terms.total.item<double>()},
                    {"teacher_snapshot", active}};
        log.write(record);
        if (step % 100 == 0) announce("student", step, total, record);
        const auto done = step + 1;
        result.steps_done = done;
        if (done % 500 == 0 || done == total) result.checkpoint = save(done);
    }
    return result;
}

fs::path build_latent_bank(const RunConfig& cfg, const fs::path& run_dir) {
    auto data = prepare_data(cfg, run_dir);
    auto model = load_acoustic(cfg, latest_checkpoint(run_dir, "acoustic"));
    auto pick = [&](const std::string& configured, signal::IntonationTag tag) {
        if (!configured.empty()) return configured;
        for (const auto& u : data.manifest.utterances) {
            if (u.intonation == tag) return u.id;
        }
        throw DataError("manifest has no " + signal::to_string(tag) + " utterance for the latent bank");
    };
    auto bank = inference::build_latent_bank(model, data.manifest, cfg.mel,
                                             pick(cfg.latent_bank.statement_id, signal::IntonationTag::statement),
                                             pick(cfg.latent_bank.question_id, signal::IntonationTag::yes_no_question));
    const auto path = run_dir / "latent_bank.bin";
    inference::save_latent_bank(path, bank);
    return path;
}

// ---------------------------------------------------------------------------
// Evaluation

double attention_diagonality(const torch::Tensor& alignments) {
    if (alignments.size(0) < 2) return 1.0;
    auto arg = alignments.argmax(1);
    auto delta = arg.slice(0, 1) - arg.slice(0, 0, -1);
    auto ok = (delta >= 0).logical_and(delta <= 1);
    return ok.to(torch::kFloat64).mean().item<double>();
}

double attention_coverage(const torch::Tensor& alignments) {
    if (alignments.size(0) == 0) return 0.0;
    auto arg = alignments.argmax(1);
    auto hit = torch::zeros({alignments.size(1)}, torch::kBool);
    hit.index_fill_(0, arg, true);
    return hit.to(torch::kFloat64).mean().item<double>();
}

json to_json(const EvalRow& r) {
    json j{{"id", r.id},
           {"mel_l1", r.mel_l1},
           {"attention_diagonality", r.attention_diagonality},
           {"attention_coverage", r.attention_coverage},
           {"stop_accuracy", r.stop_accuracy}};
    if (r.teacher_nll) j["teacher_nll"] = *r.teacher_nll;
    if (r.student_spectral) j["student_spectral"] = *r.student_spectral;
    if (r.synth_mel_l1) j["synth_mel_l1"] = *r.synth_mel_l1;
    return j;
}

json aggregate(const std::vector<EvalRow>& rows) {
    std::map<std::string, std::pair<double, std::int64_t>> sums;
    for (const auto& r : rows) {
        const json j = to_json(r);
        for (const auto& [key, value] : j.items()) {
            if (!value.is_number()) continue;
            auto& s = sums[key];
            s.first += value.get<double>();
            s.second += 1;
        }
    }
    json out = json::object();
    for (const auto& [key, s] : sums) out[key] = s.first / static_cast<double>(s.second);
    out["utterances"] = rows.size();
    return out;
}

std::vector<EvalRow> evaluate_acoustic(acoustic::AcousticModel& model, const Dataset& data, std::int64_t ops,
                                       const std::vector<std::size_t>& subset) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<std::size_t> idx = subset;
    if (idx.empty()) {
        for (std::size_t i = 0; i < data.items.size(); ++i) idx.push_back(i);
    }
    std::vector<EvalRow> rows;
    for (auto i : idx) {
        const auto& u = data.items[i];
        auto batch = collate(data, {i}, model->config().pad_value);
        auto mu = inference::posterior_mean(model, u.mel).unsqueeze(0);
        auto out = model->teacher_forced(batch.tokens, batch.token_lengths, batch.mel, batch.mel_lengths, mu, ops);
        EvalRow row;
        row.id = u.id;
        row.mel_l1 = acoustic::masked_l1(out.frames, batch.mel, batch.mel_lengths).item<double>();
        auto [targets, mask] = acoustic::stop_targets(batch.mel_lengths, ops, out.steps, out.stop_logits.options());
        auto predicted = (torch::sigmoid(out.stop_logits) > 0.5).to(targets.dtype());
        auto correct = (predicted == targets).logical_and(mask);
        row.stop_accuracy = correct.sum().item<double>() / mask.sum().item<double>();
        const auto valid = acoustic::decoder_steps(u.mel.size(0), ops);
        auto align = out.alignments[0].slice(0, 0, valid);
        row.attention_diagonality = attention_diagonality(align);
        row.attention_coverage = attention_coverage(align);
        rows.push_back(row);
    }
    return rows;
}

double synthesis_mel_l1(const torch::Tensor& synth_mel, const torch::Tensor& reference_mel, double pad_value) {
    const auto frames = std::max(synth_mel.size(0), reference_mel.size(0));
    auto pad_to = [&](const torch::Tensor& m) {
        auto out = torch::full({frames, reference_mel.size(1)}, pad_value, torch::kFloat64);
        if (m.size(0) > 0) out.slice(0, 0, m.size(0)).copy_(m.to(torch::kFloat64));
        return out;
    };
    return (pad_to(synth_mel) - pad_to(reference_mel)).abs().mean().item<double>();
}

EvalReport evaluate(const RunConfig& cfg, const fs::path& run_dir, const EvaluateOptions& opts) {
    at::set_num_threads(cfg.threads);
    auto data = prepare_data(cfg, run_dir);
    const auto final_ops = static_cast<std::int64_t>(cfg.phases.phases.back().ops);

    acoustic::AcousticModel model{nullptr};
    vocoder::Teacher teacher{nullptr};
    vocoder::Student student{nullptr};
    if (opts.untrained) {
        torch::manual_seed(cfg.seed);
        model = acoustic::AcousticModel(cfg.acoustic);
        torch::manual_seed(step_seed(cfg.seed, 0, 10));
        teacher = vocoder::Teacher(cfg.vocoder);
        torch::manual_seed(step_seed(cfg.seed, 0, 20));
        student = vocoder::Student(cfg.vocoder);
    } else {
        model = load_acoustic(cfg, latest_checkpoint(run_dir, "acoustic"));
        if (opts.vocoder || opts.synthesis) {
            teacher = load_teacher(cfg, read_snapshots(run_dir).back().dir);
            student = load_student(cfg, latest_checkpoint(run_dir, "student"));
        }
    }
    model->eval();

    std::vector<std::size_t> subset;
    const auto n = opts.max_utterances > 0 ? std::min<std::size_t>(opts.max_utterances, data.items.size())
                                           : data.items.size();
    for (std::size_t i = 0; i < n; ++i) subset.push_back(i);

    EvalReport report;
    report.rows = evaluate_acoustic(model, data, final_ops, subset);

    if (opts.vocoder || opts.synthesis) {
        torch::NoGradGuard no_grad;
        teacher->eval();
        student->eval();
        inference::LatentBank bank;
        const auto bank_path = run_dir / "latent_bank.bin";
        if (!opts.untrained && fs::exists(bank_path)) {
            bank = inference::load_latent_bank(bank_path);
        } else {
            std::string st, qu;
            for (const auto& u : data.manifest.utterances) {
                if (st.empty() && u.intonation == signal::IntonationTag::statement) st = u.id;
                if (qu.empty() && u.intonation == signal::IntonationTag::yes_no_question) qu = u.id;
            }
            if (qu.empty()) qu = st;
            bank = inference::build_latent_bank(model, data.manifest, cfg.mel, st, qu);
        }
        for (std::size_t k = 0; k < subset.size(); ++k) {
            const auto& u = data.items[subset[k]];
            auto& row = report.rows[k];
            auto mu = inference::posterior_mean(model, u.mel);
            if (opts.vocoder) {
                auto cond = teacher->conditioning()->forward(u.mel.unsqueeze(0), mu.unsqueeze(0));
                row.teacher_nll = vocoder::teacher_nll_loss(teacher, u.audio.unsqueeze(0), cond).item<double>();
                auto gen = at::make_generator<at::CPUGeneratorImpl>(step_seed(cfg.seed, static_cast<std::int64_t>(k), 30));
                auto noise = vocoder::logistic_noise({1, cond.size(1)}, cond.options(), gen);
                auto wave = student->forward(cond, noise).waveform.clamp(-1.0, 1.0);
                if (wave.size(1) >= cfg.distill.distill.stft_fft) {
                    row.student_spectral = vocoder::spectral_loss(wave, u.audio.unsqueeze(0), cfg.distill.distill.stft_fft,
                                                                  cfg.distill.distill.stft_hop)
                                               .item<double>();
                }
            }
            if (opts.synthesis) {
                inference::SynthesisRequest req;
                req.tokens.assign(u.tokens.data_ptr<std::int64_t>(), u.tokens.data_ptr<std::int64_t>() + u.tokens.numel());
                req.tag = u.tag;
                req.scheme.kind = inference::LatentKind::reference_utterance;
                req.scheme.reference_id = bank.provenance.at(u.tag == signal::IntonationTag::yes_no_question ? "question_z"
                                                                                                          : "statement_z");
                req.ops = final_ops;
                req.max_steps = cfg.synthesis.max_steps;
                req.seed = step_seed(cfg.seed, static_cast<std::int64_t>(k), 31);
                auto res = inference::synthesize(req, model, teacher, student, bank, cfg.mel.sample_rate);
                torch::Tensor synth_mel = torch::zeros({0, cfg.mel.n_mels});
                if (static_cast<std::int64_t>(res.waveform.samples.size()) >= cfg.mel.win) {
                    synth_mel = signal::wav_to_mel(res.waveform, cfg.mel).frames;
                }
                row.synth_mel_l1 = synthesis_mel_l1(synth_mel, u.mel, cfg.mel.log_floor_value());
            }
        }
    }
    report.aggregates = aggregate(report.rows);
    report.aggregates["untrained"] = opts.untrained;
    return report;
}

void write_eval_report(const fs::path& dir, const EvalReport& report) {
    fs::create_directories(dir);
    std::string lines;
    for (const auto& r : report.rows) lines += to_json(r).dump() + "\n";
    util::write_file_atomic(dir / "report.jsonl", std::string_view(lines));
    util::write_file_atomic(dir / "summary.json", report.aggregates.dump(2) + "\n");
}

}  // namespace etts::cli
