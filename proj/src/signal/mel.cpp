#include "etts/signal/mel.hpp"

#include "etts/error.hpp"

#include <cmath>
#include <numbers>

namespace etts::signal {

namespace {

constexpr double kLinearHzPerMel = 200.0 / 3.0;
constexpr double kLogBreakHz = 1000.0;
constexpr double kLogBreakMel = kLogBreakHz / kLinearHzPerMel;
const double kLogStep = std::log(6.4) / 27.0;

}  // namespace

void MelConfig::validate() const {
    auto bad = [](const std::string& what) { return ConfigError("mel config: " + what); };
    if (sample_rate <= 0) throw bad("sample_rate must be positive");
    if (!(hop >= 1 && hop <= win && win <= fft_size)) throw bad("need 1 <= hop <= win <= fft_size");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
        throw bad("need 0 <= fmin < fmax <= sample_rate/2");
    }
    if (n_mels < 1) throw bad("n_mels must be >= 1");
    if (!(log_floor > 0.0)) throw bad("log_floor must be positive");
}

double MelConfig::log_floor_value() const { return std::log(log_floor); }

int MelConfig::num_frames(std::int64_t num_samples) const {
    if (num_samples < win) return 0;
    return static_cast<int>(1 + (num_samples - win) / hop);
}

double hz_to_mel(double hz) {
    if (hz < kLogBreakHz) return hz / kLinearHzPerMel;
    return kLogBreakMel + std::log(hz / kLogBreakHz) / kLogStep;
}

double mel_to_hz(double mel) {
    if (mel < kLogBreakMel) return mel * kLinearHzPerMel;
    return kLogBreakHz * std::exp(kLogStep * (mel - kLogBreakMel));
}

std::vector<double> mel_band_centers(const MelConfig& cfg) {
    const double lo = hz_to_mel(cfg.fmin);
    const double hi = hz_to_mel(cfg.fmax);
    std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
    for (int m = 0; m < cfg.n_mels; ++m) {
        centers[static_cast<std::size_t>(m)] = mel_to_hz(lo + (hi - lo) * (m + 1) / (cfg.n_mels + 1));
    }
    return centers;
}

torch::Tensor mel_filterbank(const MelConfig& cfg) {
    cfg.validate();
    const int bins = cfg.fft_size / 2 + 1;
    const double lo = hz_to_mel(cfg.fmin);
    const double hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
    for (int i = 0; i < cfg.n_mels + 2; ++i) {
        edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
    }
    auto fb = torch::zeros({cfg.n_mels, bins}, torch::kFloat64);
    auto acc = fb.accessor<double, 2>();
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[static_cast<std::size_t>(m)];
        const double center = edges[static_cast<std::size_t>(m + 1)];
        const double right = edges[static_cast<std::size_t>(m + 2)];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            const double up = (f - left) / (center - left);
            const double down = (right - f) / (right - center);
            acc[m][k] = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

torch::Tensor log_mel(const torch::Tensor& samples, const MelConfig& cfg) {
    cfg.validate();
    TORCH_CHECK(samples.dim() == 2, "log_mel expects (B, T) samples");
    if (samples.size(1) < cfg.win) {
        throw DataError("signal of " + std::to_string(samples.size(1)) +
                        " samples is shorter than one window (" + std::to_string(cfg.win) + ")");
    }
    const auto opts = samples.options();
    auto window = torch::hann_window(cfg.win, torch::TensorOptions().dtype(torch::kFloat64).requires_grad(false))
                      .to(opts.dtype());
    auto frames = samples.unfold(1, cfg.win, cfg.hop) * window;  // (B, M, win)
    auto spectrum = torch::fft::rfft(frames, cfg.fft_size, -1);
    auto magnitude = spectrum.abs();                                         // (B, M, bins)
    auto fb = mel_filterbank(cfg).to(opts.dtype());
    auto mel = torch::matmul(magnitude, fb.transpose(0, 1));                 // (B, M, n_mels)
    return torch::log(torch::clamp_min(mel, cfg.log_floor));
}

MelSpectrogram wav_to_mel(const Waveform& wave, const MelConfig& cfg) {
    cfg.validate();
    if (static_cast<std::int64_t>(wave.size()) < cfg.win) {
        throw DataError("waveform of " + std::to_string(wave.size()) +
                        " samples is shorter than one window (" + std::to_string(cfg.win) + ")");
    }
    // Analysis runs in float64 so that identical samples give identical frames
    // regardless of batch composition.
    auto samples = torch::from_blob(const_cast<float*>(wave.samples.data()),
                                    {1, static_cast<std::int64_t>(wave.size())}, torch::kFloat32)
                       .to(torch::kFloat64);
    auto frames = log_mel(samples, cfg).squeeze(0).to(torch::kFloat32).contiguous();
    return MelSpectrogram{frames, cfg};
}

}  // namespace etts::signal
