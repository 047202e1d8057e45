#include "etts/inference/inference.hpp"

#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include "json.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstring>

namespace etts::inference {

namespace fs = std::filesystem;

std::string to_string(LatentKind kind) {
    switch (kind) {
        case LatentKind::prior_sample: return "prior_sample";
        case LatentKind::prior_mean: return "prior_mean";
        case LatentKind::train_centroid: return "train_centroid";
        case LatentKind::reference_utterance: return "reference_utterance";
    }
    return "?";
}

LatentKind parse_latent_kind(const std::string& s) {
    for (auto k : {LatentKind::prior_sample, LatentKind::prior_mean, LatentKind::train_centroid,
                   LatentKind::reference_utterance}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown latent scheme '" + s + "'");
}

void LatentScheme::validate() const {
    const bool is_ref = kind == LatentKind::reference_utterance;
    if (is_ref != reference_id.has_value()) {
        throw ConfigError("reference_id must be given exactly for the reference_utterance scheme");
    }
}

std::int64_t LatentBank::latent_dim() const { return statement_z.defined() ? statement_z.size(0) : 0; }

void LatentBank::validate() const {
    for (const auto* t : {&statement_z, &question_z, &vocoder_centroid_z}) {
        if (!t->defined() || t->dim() != 1) throw DataError("latent bank entry missing or not a vector");
        if (t->size(0) != latent_dim()) throw DataError("latent bank vectors differ in dimension");
    }
}

namespace {

constexpr char kBankMagic[4] = {'E', 'T', 'L', 'B'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("truncated latent bank");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

fs::path sidecar(const fs::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

}  // namespace

void save_latent_bank(const fs::path& path, const LatentBank& bank) {
    bank.validate();
    const std::vector<std::pair<std::string, const torch::Tensor*>> entries{
        {"statement_z", &bank.statement_z}, {"question_z", &bank.question_z},
        {"vocoder_centroid_z", &bank.vocoder_centroid_z}};
    std::string out(kBankMagic, 4);
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        auto v = t->detach().to(torch::kCPU, torch::kFloat32).contiguous();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v.numel()));
        out.append(static_cast<const char*>(v.data_ptr()), v.numel() * sizeof(float));
    }
    nlohmann::json side{{"latent_dim", bank.latent_dim()}, {"provenance", bank.provenance}};
    util::write_file_atomic(path, std::string_view(out));
    util::write_file_atomic(sidecar(path), side.dump(2) + "\n");
}

LatentBank load_latent_bank(const fs::path& path) {
    const auto bytes = util::read_text_file(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kBankMagic, 4) != 0) {
        throw FormatError(path.string() + ": not a latent bank");
    }
    std::size_t pos = 4;
    if (get<std::uint32_t>(bytes, pos) != 1) throw FormatError(path.string() + ": unsupported latent bank version");
    const auto count = get<std::uint32_t>(bytes, pos);
    LatentBank bank;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(bytes, pos);
        if (pos + len > bytes.size()) throw FormatError("truncated latent bank");
        auto name = bytes.substr(pos, len);
        pos += len;
        const auto dim = get<std::uint32_t>(bytes, pos);
        if (pos + dim * sizeof(float) > bytes.size()) throw FormatError("truncated latent bank");
        auto v = torch::empty({static_cast<std::int64_t>(dim)}, torch::kFloat32);
        std::memcpy(v.data_ptr(), bytes.data() + pos, dim * sizeof(float));
        pos += dim * sizeof(float);
        if (name == "statement_z") bank.statement_z = v;
        else if (name == "question_z") bank.question_z = v;
        else if (name == "vocoder_centroid_z") bank.vocoder_centroid_z = v;
        else throw FormatError("unknown latent bank entry " + name);
    }
    if (fs::exists(sidecar(path))) {
        auto side = nlohmann::json::parse(util::read_text_file(sidecar(path)));
        bank.provenance = side.at("provenance").get<std::map<std::string, std::string>>();
    }
    bank.validate();
    return bank;
}

torch::Tensor posterior_mean(acoustic::AcousticModel& model, const torch::Tensor& mel) {
    torch::NoGradGuard no_grad;
    if (mel.dim() != 2 || mel.size(0) < 1) throw DataError("reference spectrogram is empty");
    auto dtype = model->parameters().front().scalar_type();
    auto lengths = torch::full({1}, mel.size(0), torch::kInt64);
    return model->posterior(mel.unsqueeze(0).to(dtype), lengths).mu[0];
}

torch::Tensor extract_reference_latent(acoustic::AcousticModel& model, const signal::Waveform& audio,
                                       const signal::MelConfig& mel_cfg) {
    return posterior_mean(model, signal::wav_to_mel(audio, mel_cfg).frames);
}

torch::Tensor compute_centroid(acoustic::AcousticModel& model, const std::vector<torch::Tensor>& mels) {
    if (mels.empty()) throw DataError("centroid of an empty manifest");
    torch::Tensor sum;
    for (const auto& mel : mels) {
        auto mu = posterior_mean(model, mel);
        sum = sum.defined() ? sum + mu : mu;
    }
    return sum / static_cast<double>(mels.size());
}

torch::Tensor compute_centroid(acoustic::AcousticModel& model, const signal::Manifest& manifest,
                               const signal::MelConfig& mel_cfg) {
    if (manifest.empty()) throw DataError("centroid of an empty manifest");
    std::vector<torch::Tensor> mels;
    for (const auto& utt : manifest.utterances) {
        mels.push_back(signal::wav_to_mel(signal::load_wav(manifest.resolve_audio(utt)), mel_cfg).frames);
    }
    return compute_centroid(model, mels);
}

LatentBank build_latent_bank(acoustic::AcousticModel& model, const signal::Manifest& manifest,
                             const signal::MelConfig& mel_cfg, const std::string& statement_id,
                             const std::string& question_id) {
    auto reference = [&](const std::string& id) {
        const auto* utt = manifest.find(id);
        if (!utt) throw DataError("reference utterance '" + id + "' is not in the manifest");
        return extract_reference_latent(model, signal::load_wav(manifest.resolve_audio(*utt)), mel_cfg);
    };
    LatentBank bank;
    bank.statement_z = reference(statement_id);
    bank.question_z = reference(question_id);
    bank.vocoder_centroid_z = compute_centroid(model, manifest, mel_cfg);
    bank.provenance = {{"statement_z", statement_id}, {"question_z", question_id}, {"vocoder_centroid_z", "centroid"}};
    return bank;
}

torch::Tensor select_acoustic_latent(const LatentScheme& scheme, signal::IntonationTag tag, const LatentBank* bank,
                                     std::int64_t latent_dim, torch::Generator& generator) {
    scheme.validate();
    switch (scheme.kind) {
        case LatentKind::prior_mean: return torch::zeros({latent_dim});
        case LatentKind::prior_sample: return at::normal(0.0, 1.0, {latent_dim}, generator);
        case LatentKind::train_centroid:
            if (!bank || !bank->vocoder_centroid_z.defined()) throw DataError("latent bank has no centroid");
            return bank->vocoder_centroid_z;
        case LatentKind::reference_utterance: {
            const bool question = tag == signal::IntonationTag::yes_no_question;
            const std::string entry = question ? "question_z" : "statement_z";
            if (!bank) throw DataError("latent bank missing for entry " + entry);
            const auto& z = question ? bank->question_z : bank->statement_z;
            if (!z.defined()) throw DataError("latent bank missing entry " + entry);
            auto it = bank->provenance.find(entry);
            if (it != bank->provenance.end() && it->second != *scheme.reference_id) {
                throw DataError("latent bank entry " + entry + " comes from '" + it->second + "', not '" +
                                *scheme.reference_id + "'");
            }
            return z;
        }
    }
    throw ConfigError("unhandled latent scheme");
}

torch::Tensor vocode(vocoder::Teacher& teacher, vocoder::Student& student, const torch::Tensor& mel,
                     const torch::Tensor& z, torch::Generator& generator) {
    torch::NoGradGuard no_grad;
    teacher->eval();
    student->eval();
    auto dtype = teacher->parameters().front().scalar_type();
    auto cond = teacher->conditioning()->forward(mel.unsqueeze(0).to(dtype), z.reshape({1, -1}).to(dtype));
    auto noise = vocoder::logistic_noise({1, cond.size(1)}, cond.options(), generator);
    return student->forward(cond, noise).waveform[0].clamp(-1.0, 1.0);
}

SynthesisResult synthesize(const SynthesisRequest& request, acoustic::AcousticModel& acoustic,
                           vocoder::Teacher& teacher, vocoder::Student& student, const LatentBank& bank,
                           int sample_rate) {
    auto generator = at::make_generator<at::CPUGeneratorImpl>(request.seed);
    acoustic->eval();
    SynthesisResult out;
    out.acoustic_z =
        select_acoustic_latent(request.scheme, request.tag, &bank, acoustic->config().latent_dim, generator);
    auto tokens = torch::tensor(request.tokens, torch::kInt64);
    auto inferred = acoustic->infer(tokens, out.acoustic_z, request.ops, request.max_steps);
    out.mel = inferred.frames;
    out.alignments = inferred.alignments;
    out.stop_step = inferred.stop_step;
    out.hit_max_steps = inferred.hit_max_steps;
    out.frames = inferred.frames.size(0);

    auto wave = vocode(teacher, student, out.mel, bank.vocoder_centroid_z, generator).to(torch::kFloat32).contiguous();
    out.waveform.sample_rate = sample_rate;
    out.waveform.samples.assign(wave.data_ptr<float>(), wave.data_ptr<float>() + wave.numel());
    return out;
}

}  // namespace etts::inference
