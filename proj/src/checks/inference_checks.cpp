#include "etts/checks/checks.hpp"
#include "etts/checks/fixtures.hpp"
#include "etts/error.hpp"
#include "etts/inference/inference.hpp"
#include "etts/signal/corpus.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <random>

namespace etts::checks {

namespace {

using namespace etts::inference;

LatentBank random_bank(std::int64_t dim) {
    LatentBank bank;
    bank.statement_z = torch::randn({dim});
    bank.question_z = torch::randn({dim});
    bank.vocoder_centroid_z = torch::randn({dim});
    bank.provenance = {{"statement_z", "utt_s"}, {"question_z", "utt_q"}, {"vocoder_centroid_z", "centroid"}};
    return bank;
}

}  // namespace

std::vector<Check> inference_checks() {
    std::vector<Check> c;

    c.push_back({"inference.select_latent", [] {
        torch::manual_seed(1);
        auto bank = random_bank(8);
        auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
        using signal::IntonationTag;
        auto zero = select_acoustic_latent({LatentKind::prior_mean, std::nullopt}, IntonationTag::statement, &bank, 8, gen);
        expect(zero.size(0) == 8 && zero.abs().max().item<double>() == 0.0, "prior mean is zero");
        LatentScheme ref{LatentKind::reference_utterance, "utt_q"};
        auto q = select_acoustic_latent(ref, IntonationTag::yes_no_question, &bank, 8, gen);
        expect(torch::equal(q, bank.question_z), "questions use question_z");
        LatentScheme ref_s{LatentKind::reference_utterance, "utt_s"};
        auto s = select_acoustic_latent(ref_s, IntonationTag::statement, &bank, 8, gen);
        expect(torch::equal(s, bank.statement_z), "statements use statement_z");
        auto centroid = select_acoustic_latent({LatentKind::train_centroid, std::nullopt}, IntonationTag::statement, &bank, 8, gen);
        expect(torch::equal(centroid, bank.vocoder_centroid_z), "train_centroid uses the centroid");
        auto g1 = at::make_generator<at::CPUGeneratorImpl>(42);
        auto g2 = at::make_generator<at::CPUGeneratorImpl>(42);
        auto a = select_acoustic_latent({LatentKind::prior_sample, std::nullopt}, IntonationTag::statement, nullptr, 8, g1);
        auto b = select_acoustic_latent({LatentKind::prior_sample, std::nullopt}, IntonationTag::statement, nullptr, 8, g2);
        expect(torch::equal(a, b), "seeded prior samples must agree");
        bool threw = false;
        try {
            select_acoustic_latent(ref, IntonationTag::yes_no_question, nullptr, 8, gen);
        } catch (const DataError&) {
            threw = true;
        }
        expect(threw, "missing bank must be rejected");
        threw = false;
        try {
            LatentScheme{LatentKind::prior_mean, "utt"}.validate();
        } catch (const ConfigError&) {
            threw = true;
        }
        expect(threw, "reference_id without reference_utterance must be rejected");
        return std::string("ok");
    }});

    c.push_back({"inference.latent_bank_round_trip", [] {
        TempDir dir("bank");
        torch::manual_seed(2);
        auto bank = random_bank(16);
        save_latent_bank(dir.path() / "bank.bin", bank);
        auto loaded = load_latent_bank(dir.path() / "bank.bin");
        expect(torch::equal(loaded.statement_z, bank.statement_z) && torch::equal(loaded.question_z, bank.question_z) &&
                   torch::equal(loaded.vocoder_centroid_z, bank.vocoder_centroid_z),
               "vectors must round-trip");
        expect(loaded.provenance == bank.provenance, "provenance must round-trip");
        return std::string("ok");
    }});

    c.push_back({"inference.centroid", [] {
        torch::manual_seed(3);
        acoustic::AcousticModel model(small_acoustic_config(8));
        model->eval();
        std::vector<torch::Tensor> mels;
        for (int i = 0; i < 12; ++i) mels.push_back(torch::randn({10 + i, 8}) - 4.0);
        auto single = compute_centroid(model, {mels[0]});
        expect(torch::allclose(single, posterior_mean(model, mels[0]), 0.0, 1e-7), "single utterance");
        auto two = compute_centroid(model, {mels[0], mels[1]});
        auto expected = (posterior_mean(model, mels[0]) + posterior_mean(model, mels[1])) / 2;
        expect(torch::allclose(two, expected, 0.0, 1e-6), "two utterances");
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<torch::Tensor> subset;
            for (const auto& m : mels) {
                if (rng() % 2) subset.push_back(m);
            }
            if (subset.empty()) subset.push_back(mels[trial]);
            auto brute = torch::zeros({8}, torch::kFloat64);
            for (const auto& m : subset) brute += posterior_mean(model, m).to(torch::kFloat64);
            brute /= static_cast<double>(subset.size());
            auto got = compute_centroid(model, subset).to(torch::kFloat64);
            expect((got - brute).abs().max().item<double>() <= 1e-6, "random subset centroid");
        }
        bool threw = false;
        try {
            compute_centroid(model, std::vector<torch::Tensor>{});
        } catch (const DataError&) {
            threw = true;
        }
        expect(threw, "empty input must be rejected");
        return std::string("ok");
    }});

    c.push_back({"inference.reference_latent", [] {
        torch::manual_seed(4);
        signal::MelConfig mel_cfg;
        mel_cfg.n_mels = 8;
        acoustic::AcousticModel model(small_acoustic_config(8));
        auto audio = signal::render_tokens({"a", "m", "o"}, false, mel_cfg.sample_rate);
        auto a = extract_reference_latent(model, audio, mel_cfg);
        auto b = extract_reference_latent(model, audio, mel_cfg);
        expect(torch::equal(a, b), "posterior mean must be deterministic");
        expect(a.dim() == 1 && a.size(0) == model->config().latent_dim, "latent dimension");
        return std::string("ok");
    }});

    c.push_back({"inference.synthesize_contract", [] {
        torch::manual_seed(5);
        auto acfg = small_acoustic_config(8);
        auto vcfg = tiny_vocoder_config();
        vcfg.n_mels = 8;
        vcfg.latent_dim = acfg.latent_dim;
        vcfg.hop = 40;
        acoustic::AcousticModel model(acfg);
        vocoder::Teacher teacher(vcfg);
        vocoder::Student student(vcfg);
        auto bank = random_bank(acfg.latent_dim);
        SynthesisRequest req;
        req.tokens = {1, 4, 2};
        req.tag = signal::IntonationTag::yes_no_question;
        req.scheme = {LatentKind::reference_utterance, "utt_q"};
        req.max_steps = 6;
        req.seed = 17;
        auto a = synthesize(req, model, teacher, student, bank, 16000);
        auto b = synthesize(req, model, teacher, student, bank, 16000);
        expect(a.waveform.samples.size() == static_cast<std::size_t>(a.frames * vcfg.hop), "samples = frames * hop");
        expect(a.waveform.samples == b.waveform.samples, "same request must give an identical waveform");
        expect(torch::equal(a.acoustic_z, bank.question_z), "question routing");
        for (float s : a.waveform.samples) expect(s >= -1.0f && s <= 1.0f, "samples in [-1, 1]");
        return std::to_string(a.frames) + " frames";
    }});

    return c;
}

}  // namespace etts::checks
