#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace etts::signal {

/// Mono audio with amplitudes in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;

    std::size_t size() const noexcept { return samples.size(); }
    double duration() const noexcept {
        return static_cast<double>(samples.size()) / sample_rate;
    }
    /// Throws DataError if a sample lies outside [-1, 1] or the rate is not positive.
    void validate() const;
};

/// Reads a RIFF/WAVE file holding mono 16-bit PCM. Samples are divided by 32768.
Waveform load_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM. Samples are scaled by 32768, rounded and clipped to
/// the int16 range. The file is written to a temporary name and renamed.
void save_wav(const std::filesystem::path& path, const Waveform& wave);

/// PCM16 conversions used by the reader and the writer.
std::int16_t to_pcm16(float sample) noexcept;
float from_pcm16(std::int16_t value) noexcept;

}  // namespace etts::signal
