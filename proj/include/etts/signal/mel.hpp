#pragma once

#include "etts/signal/wav.hpp"

#include <torch/torch.h>

namespace etts::signal {

struct MelConfig {
    int sample_rate = 16000;
    int fft_size = 1024;
    int hop = 200;
    int win = 800;
    int n_mels = 80;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-5;

    /// Throws ConfigError unless hop <= win <= fft_size, 0 <= fmin < fmax <= sr/2, n_mels >= 1.
    void validate() const;
    double log_floor_value() const;  // log(log_floor)
    int num_frames(std::int64_t num_samples) const;  // 1 + floor((len - win) / hop)
};

/// Log-mel frames, shape (M, n_mels), float32.
struct MelSpectrogram {
    torch::Tensor frames;
    MelConfig config;

    std::int64_t num_frames() const { return frames.size(0); }
};

/// Slaney-scale conversions (linear below 1 kHz, logarithmic above).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filterbank, shape (n_mels, fft_size / 2 + 1), float64, peak 1.
torch::Tensor mel_filterbank(const MelConfig& cfg);

/// Center frequency (Hz) of every band of `mel_filterbank(cfg)`.
std::vector<double> mel_band_centers(const MelConfig& cfg);

/// Differentiable log-mel of a batch of signals (B, T) -> (B, M, n_mels) in the
/// dtype of `samples`. Frames are `win` samples long, Hann-windowed and zero
/// padded to `fft_size`; entries are log(max(fb · |STFT|, log_floor)).
torch::Tensor log_mel(const torch::Tensor& samples, const MelConfig& cfg);

/// Log-mel of a waveform. Throws DataError if shorter than one window.
MelSpectrogram wav_to_mel(const Waveform& wave, const MelConfig& cfg);

}  // namespace etts::signal
