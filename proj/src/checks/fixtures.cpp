#include "etts/checks/fixtures.hpp"

#include <atomic>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include <unistd.h>

namespace fs = std::filesystem;

namespace etts::checks {

acoustic::AcousticConfig tiny_acoustic_config() {
    acoustic::AcousticConfig c;
    c.vocab_size = 3;
    c.n_mels = 2;
    c.embedding_dim = 2;
    c.encoder_conv_layers = 1;
    c.encoder_conv_channels = 2;
    c.encoder_kernel = 3;
    c.encoder_lstm_hidden = 1;
    c.attention_dim = 2;
    c.location_filters = 1;
    c.location_kernel = 3;
    c.prenet_dim = 2;
    c.decoder_lstm_dim = 2;
    c.latent_dim = 2;
    c.vae_conv_layers = 1;
    c.vae_conv_channels = 2;
    c.vae_lstm_hidden = 1;
    c.prenet_dropout = 0.0;
    return c;
}

acoustic::AcousticConfig small_acoustic_config(std::int64_t n_mels) {
    acoustic::AcousticConfig c;
    c.n_mels = n_mels;
    c.embedding_dim = 32;
    c.encoder_conv_layers = 1;
    c.encoder_conv_channels = 32;
    c.encoder_lstm_hidden = 16;
    c.attention_dim = 16;
    c.location_filters = 8;
    c.location_kernel = 7;
    c.prenet_dim = 32;
    c.decoder_lstm_dim = 32;
    c.latent_dim = 8;
    c.vae_conv_layers = 2;
    c.vae_conv_channels = 16;
    c.vae_lstm_hidden = 8;
    return c;
}

adversarial::DiscriminatorConfig tiny_discriminator_config() {
    adversarial::DiscriminatorConfig c;
    c.n_mels = 4;
    c.channels = {3, 2};
    c.kernel = 3;
    c.attention_after = 0;
    return c;
}

vocoder::VocoderConfig tiny_vocoder_config() {
    vocoder::VocoderConfig c;
    c.n_mels = 3;
    c.latent_dim = 2;
    c.hop = 4;
    c.cond_lstm_hidden = 2;
    c.cond_lstm_layers = 1;
    c.cond_channels = 2;
    c.mixtures = 2;
    c.teacher_residual = 2;
    c.teacher_gate = 2;
    c.teacher_skip = 2;
    c.teacher_blocks = 1;
    c.teacher_layers_per_block = 2;
    c.flow_layers = {1, 1, 1, 2};
    c.flow_channels = 2;
    c.flow_dilation_cycle = 2;
    return c;
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("etts_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" +
             std::to_string(rd() % 100000));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

namespace {

std::set<fs::path> relative_files(const fs::path& root) {
    std::set<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out.insert(fs::relative(e.path(), root));
    }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string compare_trees(const fs::path& a, const fs::path& b) {
    const auto fa = relative_files(a);
    const auto fb = relative_files(b);
    if (fa != fb) return "file lists differ (" + std::to_string(fa.size()) + " vs " + std::to_string(fb.size()) + ")";
    for (const auto& rel : fa) {
        if (slurp(a / rel) != slurp(b / rel)) return "content differs: " + rel.string();
    }
    return "";
}

std::vector<std::pair<std::string, torch::Tensor>> named_parameters(torch::nn::Module& module,
                                                                    const std::string& prefix) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : module.named_parameters()) out.emplace_back(prefix + item.key(), item.value());
    return out;
}

}  // namespace etts::checks
