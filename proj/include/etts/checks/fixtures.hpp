#pragma once

#include "etts/acoustic/model.hpp"
#include "etts/adversarial/adversarial.hpp"
#include "etts/vocoder/vocoder.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace etts::checks {

/// Acoustic model small enough for finite differences (a few hundred parameters).
acoustic::AcousticConfig tiny_acoustic_config();
/// Small acoustic model that still trains in seconds.
acoustic::AcousticConfig small_acoustic_config(std::int64_t n_mels = 80);

adversarial::DiscriminatorConfig tiny_discriminator_config();
vocoder::VocoderConfig tiny_vocoder_config();

/// Fresh temporary directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

/// Byte-exact comparison of two directory trees; returns the first difference or "".
std::string compare_trees(const std::filesystem::path& a, const std::filesystem::path& b);

/// Named float64 parameter list of a module (for gradient checks).
std::vector<std::pair<std::string, torch::Tensor>> named_parameters(torch::nn::Module& module,
                                                                    const std::string& prefix = "");

}  // namespace etts::checks
