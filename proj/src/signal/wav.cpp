#include "etts/signal/wav.hpp"

#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace etts::signal {

namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

}  // namespace

void Waveform::validate() const {
    if (sample_rate <= 0) {
        throw DataError("waveform sample_rate must be positive, got " + std::to_string(sample_rate));
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!(samples[i] >= -1.0f && samples[i] <= 1.0f)) {
            throw DataError("waveform sample " + std::to_string(i) + " outside [-1, 1]");
        }
    }
}

std::int16_t to_pcm16(float sample) noexcept {
    const double scaled = std::nearbyint(static_cast<double>(sample) * 32768.0);
    if (scaled > 32767.0) return 32767;
    if (scaled < -32768.0) return -32768;
    if (std::isnan(scaled)) return 0;
    return static_cast<std::int16_t>(scaled);
}

float from_pcm16(std::int16_t value) noexcept {
    return static_cast<float>(value) / 32768.0f;
}

Waveform load_wav(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingPathError(path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    const auto fail = [&](const std::string& what) {
        return FormatError(path.string() + ": " + what);
    };
    if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
        std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE") {
        throw fail("not a RIFF/WAVE file");
    }

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::string id(bytes.begin() + pos, bytes.begin() + pos + 4);
        const std::uint32_t size = read_u32(&bytes[pos + 4]);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) throw fail("truncated chunk '" + id + "'");
        if (id == "fmt ") {
            if (size < 16) throw fail("fmt chunk too small");
            format = read_u16(&bytes[body]);
            channels = read_u16(&bytes[body + 2]);
            rate = read_u32(&bytes[body + 4]);
            bits = read_u16(&bytes[body + 14]);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw fail("data chunk before fmt chunk");
            if (format != 1) throw fail("audio_format=" + std::to_string(format) + " (expected PCM=1)");
            if (channels != 1) throw fail("channels=" + std::to_string(channels) + " (expected mono)");
            if (bits != 16) throw fail("bits_per_sample=" + std::to_string(bits) + " (expected 16)");
            if (rate == 0) throw fail("sample_rate=0");
            Waveform wave;
            wave.sample_rate = static_cast<int>(rate);
            wave.samples.resize(size / 2);
            for (std::size_t i = 0; i < wave.samples.size(); ++i) {
                const auto raw = static_cast<std::int16_t>(read_u16(&bytes[body + 2 * i]));
                wave.samples[i] = from_pcm16(raw);
            }
            return wave;
        }
        pos = body + size + (size & 1u);
    }
    throw fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

void save_wav(const std::filesystem::path& path, const Waveform& wave) {
    if (wave.sample_rate <= 0) throw DataError("cannot save waveform with non-positive sample rate");
    const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_bytes);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    put_tag(out, "data");
    put_u32(out, data_bytes);
    for (float s : wave.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(s)));
    util::write_file_atomic(path, std::span<const std::uint8_t>(out));
}

}  // namespace etts::signal
