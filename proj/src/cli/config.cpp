#include "etts/cli/config.hpp"

#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <cmath>

namespace etts::schedule {

void to_json(nlohmann::json& j, const Phase& p) {
    j = {{"name", p.name}, {"start_step", p.start_step}, {"ops", p.ops}, {"gan", p.gan_enabled}};
}

void from_json(const nlohmann::json& j, Phase& p) {
    for (const auto& [key, _] : j.items()) {
        if (key != "name" && key != "start_step" && key != "ops" && key != "gan") {
            throw ConfigError("unknown phase key '" + key + "'");
        }
    }
    j.at("name").get_to(p.name);
    j.at("start_step").get_to(p.start_step);
    j.at("ops").get_to(p.ops);
    p.gan_enabled = j.value("gan", false);
}

}  // namespace etts::schedule

namespace etts::cli {

using nlohmann::json;

namespace {

struct Writer {
    json& j;
    template <typename T>
    void operator()(const char* name, T& value) {
        j[name] = value;
    }
    template <typename F>
    void section(const char* name, F&& fn) {
        json sub = json::object();
        Writer w{sub};
        fn(w);
        j[name] = std::move(sub);
    }
};

struct Reader {
    const json& j;
    std::string path;
    template <typename T>
    void operator()(const char* name, T& value) {
        try {
            j.at(name).get_to(value);
        } catch (const json::exception& e) {
            throw ConfigError("config key " + path + name + ": " + e.what());
        }
    }
    template <typename F>
    void section(const char* name, F&& fn) {
        if (!j.contains(name) || !j.at(name).is_object()) throw ConfigError("config section " + path + name + " missing");
        Reader r{j.at(name), path + name + "."};
        fn(r);
    }
};

template <typename V>
void visit_mel(V& v, signal::MelConfig& c) {
    v("sample_rate", c.sample_rate);
    v("fft_size", c.fft_size);
    v("hop", c.hop);
    v("win", c.win);
    v("n_mels", c.n_mels);
    v("fmin", c.fmin);
    v("fmax", c.fmax);
    v("log_floor", c.log_floor);
}

template <typename V>
void visit_toy(V& v, signal::ToyCorpusOptions& c) {
    v("min_tokens", c.min_tokens);
    v("max_tokens", c.max_tokens);
    v("question_fraction", c.question_fraction);
    v("pause_probability", c.pause_probability);
    v("pitch_ramp", c.pitch_ramp);
    v("ramp_start", c.ramp_start);
    v("envelope_ms", c.envelope_ms);
}

template <typename V>
void visit_acoustic(V& v, acoustic::AcousticConfig& c) {
    v("embedding_dim", c.embedding_dim);
    v("encoder_conv_layers", c.encoder_conv_layers);
    v("encoder_conv_channels", c.encoder_conv_channels);
    v("encoder_kernel", c.encoder_kernel);
    v("encoder_lstm_hidden", c.encoder_lstm_hidden);
    v("attention_dim", c.attention_dim);
    v("location_filters", c.location_filters);
    v("location_kernel", c.location_kernel);
    v("prenet_dim", c.prenet_dim);
    v("decoder_lstm_dim", c.decoder_lstm_dim);
    v("max_ops", c.max_ops);
    v("vae_conv_layers", c.vae_conv_layers);
    v("vae_conv_channels", c.vae_conv_channels);
    v("vae_lstm_hidden", c.vae_lstm_hidden);
    v("prenet_dropout", c.prenet_dropout);
}

template <typename V>
void visit_disc(V& v, adversarial::DiscriminatorConfig& c) {
    v("channels", c.channels);
    v("kernel", c.kernel);
    v("attention_after", c.attention_after);
    v("sn_iters", c.sn_iters);
    v("leaky_slope", c.leaky_slope);
}

template <typename V>
void visit_vocoder(V& v, vocoder::VocoderConfig& c) {
    v("cond_lstm_hidden", c.cond_lstm_hidden);
    v("cond_lstm_layers", c.cond_lstm_layers);
    v("cond_channels", c.cond_channels);
    v("mixtures", c.mixtures);
    v("teacher_residual", c.teacher_residual);
    v("teacher_gate", c.teacher_gate);
    v("teacher_skip", c.teacher_skip);
    v("teacher_blocks", c.teacher_blocks);
    v("teacher_layers_per_block", c.teacher_layers_per_block);
    v("kernel", c.kernel);
    v("flow_layers", c.flow_layers);
    v("flow_channels", c.flow_channels);
    v("flow_dilation_cycle", c.flow_dilation_cycle);
    v("quantization_levels", c.quantization_levels);
}

template <typename V>
void visit_run(V& v, RunConfig& c) {
    v("seed", c.seed);
    v("threads", c.threads);
    v("latent_dim", c.latent_dim);
    v.section("mel", [&](auto& s) { visit_mel(s, c.mel); });
    v.section("corpus", [&](auto& s) {
        s("manifest", c.corpus.manifest);
        s("num_utterances", c.corpus.num_utterances);
        s("seed", c.corpus.seed);
        s.section("toy", [&](auto& t) { visit_toy(t, c.corpus.toy); });
    });
    v.section("acoustic", [&](auto& s) { visit_acoustic(s, c.acoustic); });
    v.section("discriminator", [&](auto& s) { visit_disc(s, c.discriminator); });
    v.section("vocoder", [&](auto& s) { visit_vocoder(s, c.vocoder); });
    v.section("schedule", [&](auto& s) {
        s("acoustic_steps", c.acoustic_steps);
        s("phases", c.phases.phases);
        s.section("anneal", [&](auto& a) {
            a("ramp_start", c.anneal.ramp_start);
            a("ramp_end", c.anneal.ramp_end);
            a("period", c.anneal.period);
        });
    });
    v.section("optimizer", [&](auto& s) {
        s("lr", c.optimizer.lr);
        s("beta1", c.optimizer.beta1);
        s("beta2", c.optimizer.beta2);
        s("gan_beta1", c.optimizer.gan_beta1);
        s("teacher_lr_decay", c.optimizer.teacher_lr_decay);
    });
    v.section("train_acoustic", [&](auto& s) {
        s("batch_size", c.train_acoustic.batch_size);
        s("grad_clip", c.train_acoustic.grad_clip);
        s("checkpoint_every", c.train_acoustic.checkpoint_every);
        s("gan_window", c.train_acoustic.gan_window);
        s("gan_alpha", c.train_acoustic.gan_alpha);
    });
    v.section("train_teacher", [&](auto& s) {
        s("batch_size", c.train_teacher.batch_size);
        s("steps", c.train_teacher.steps);
        s("window_frames", c.train_teacher.window_frames);
        s("epoch_steps", c.train_teacher.epoch_steps);
        s("snapshots", c.train_teacher.snapshots);
        s("polyak_decay", c.train_teacher.polyak_decay);
        s("polyak_warmup", c.train_teacher.polyak_warmup);
        s("grad_clip", c.train_teacher.grad_clip);
    });
    v.section("distill", [&](auto& s) {
        s("batch_size", c.distill.batch_size);
        s("steps", c.distill.steps);
        s("window_frames", c.distill.window_frames);
        s("n_mc", c.distill.distill.n_mc);
        s("spectral_weight", c.distill.distill.spectral_weight);
        s("stft_fft", c.distill.distill.stft_fft);
        s("stft_hop", c.distill.distill.stft_hop);
        s("polyak_decay", c.distill.polyak_decay);
        s("polyak_warmup", c.distill.polyak_warmup);
        s("grad_clip", c.distill.grad_clip);
    });
    v.section("latent_bank", [&](auto& s) {
        s("statement_id", c.latent_bank.statement_id);
        s("question_id", c.latent_bank.question_id);
    });
    v.section("synthesis", [&](auto& s) {
        s("ops", c.synthesis.ops);
        s("max_steps", c.synthesis.max_steps);
        s("scheme", c.synthesis.scheme);
    });
}

}  // namespace

void RunConfig::propagate() {
    acoustic.n_mels = mel.n_mels;
    acoustic.latent_dim = latent_dim;
    acoustic.pad_value = mel.log_floor_value();
    acoustic.vocab_size = static_cast<std::int64_t>(signal::toy_token_table().size());
    discriminator.n_mels = mel.n_mels;
    discriminator.pad_value = mel.log_floor_value();
    vocoder.n_mels = mel.n_mels;
    vocoder.hop = mel.hop;
    vocoder.latent_dim = latent_dim;
}

void RunConfig::validate() const {
    mel.validate();
    acoustic.validate();
    discriminator.validate();
    vocoder.validate();
    phases.validate(static_cast<int>(acoustic.max_ops));
    anneal.validate();
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (acoustic_steps < 1) throw ConfigError("schedule.acoustic_steps must be >= 1");
    if (corpus.num_utterances < 1 && corpus.manifest.empty()) throw ConfigError("corpus.num_utterances must be >= 1");
    if (train_acoustic.batch_size < 1 || train_teacher.batch_size < 1 || distill.batch_size < 1) {
        throw ConfigError("batch sizes must be >= 1");
    }
    if (train_acoustic.gan_window < 1) throw ConfigError("train_acoustic.gan_window must be >= 1");
    if (train_teacher.steps < 1 || distill.steps < 1) throw ConfigError("vocoder step counts must be >= 1");
    if (train_teacher.snapshots < 1) throw ConfigError("train_teacher.snapshots must be >= 1");
    if (train_teacher.epoch_steps < 1) throw ConfigError("train_teacher.epoch_steps must be >= 1");
    if (train_teacher.window_frames < 1 || distill.window_frames < 1) throw ConfigError("window_frames must be >= 1");
    if (distill.window_frames * mel.hop < distill.distill.stft_fft) {
        throw ConfigError("distill.window_frames * mel.hop must cover distill.stft_fft");
    }
    if (distill.distill.n_mc < 1) throw ConfigError("distill.n_mc must be >= 1");
    for (double d : {train_teacher.polyak_decay, distill.polyak_decay}) {
        if (!(d > 0.0 && d < 1.0)) throw ConfigError("polyak_decay must lie in (0, 1)");
    }
    if (synthesis.ops < 1 || synthesis.ops > acoustic.max_ops) throw ConfigError("synthesis.ops outside [1, max_ops]");
    if (synthesis.max_steps < 1) throw ConfigError("synthesis.max_steps must be >= 1");
}

json to_json(const RunConfig& cfg) {
    json j = json::object();
    Writer w{j};
    auto copy = cfg;
    visit_run(w, copy);
    return j;
}

RunConfig from_json(const json& j) {
    RunConfig cfg;
    Reader r{j, ""};
    visit_run(r, cfg);
    cfg.propagate();
    return cfg;
}

void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError("config " + (path.empty() ? std::string("document") : path) + " must be an object");
    for (const auto& [key, value] : user.items()) {
        const auto dotted = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_strict(slot, value, dotted);
        } else {
            slot = value;
        }
    }
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const auto key = assignment.substr(0, eq);
    const auto text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("override '" + key + "' targets a section");
    *node = value;
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json doc = to_json(RunConfig{});
    if (!file.empty()) {
        json user;
        try {
            user = json::parse(util::read_text_file(file));
        } catch (const json::exception& e) {
            throw ConfigError(file.string() + ": " + e.what());
        }
        merge_strict(doc, user);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    auto cfg = from_json(doc);
    cfg.validate();
    return cfg;
}

std::string canonical_dump(const RunConfig& cfg) { return to_json(cfg).dump(); }

std::string config_hash(const RunConfig& cfg) { return util::fnv1a_hex(canonical_dump(cfg)); }

}  // namespace etts::cli
