#include "etts/checkpoint/checkpoint.hpp"

#include "etts/error.hpp"
#include "etts/util/atomic_file.hpp"

#include <cstring>
#include <fstream>

namespace etts::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kBlobMagic[4] = {'E', 'T', 'P', 'B'};

std::uint8_t dtype_code(torch::Dtype d) {
    switch (d) {
        case torch::kFloat32: return 0;
        case torch::kFloat64: return 1;
        case torch::kInt64: return 2;
        default: throw FormatError(std::string("unsupported checkpoint dtype ") + c10::toString(d));
    }
}

torch::Dtype dtype_from_code(std::uint8_t c) {
    switch (c) {
        case 0: return torch::kFloat32;
        case 1: return torch::kFloat64;
        case 2: return torch::kInt64;
        default: throw FormatError("unknown dtype code " + std::to_string(c));
    }
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("truncated checkpoint blob");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::string blob_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%05zu.bin", i);
    return buf;
}

void write_plain(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

const torch::Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw FormatError("checkpoint has no tensor " + name);
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& entry : tensors) {
        if (entry.first == name) return true;
    }
    return false;
}

std::string encode_blob(const std::string& name, const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    std::string out(kBlobMagic, 4);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, dtype_code(c.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dim()));
    for (auto s : c.sizes()) put<std::int64_t>(out, s);
    out.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
    return out;
}

std::pair<std::string, torch::Tensor> decode_blob(const std::string& bytes) {
    Reader r(bytes);
    if (r.take(4) != std::string(kBlobMagic, 4)) throw FormatError("bad tensor blob magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) throw FormatError("tensor blob version " + std::to_string(version));
    auto name = r.take(r.get<std::uint32_t>());
    const auto dtype = dtype_from_code(r.get<std::uint8_t>());
    const auto ndim = r.get<std::uint32_t>();
    std::vector<std::int64_t> shape;
    for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(r.get<std::int64_t>());
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    auto data = r.take(t.numel() * t.element_size());
    std::memcpy(t.data_ptr(), data.data(), data.size());
    if (!r.done()) throw FormatError("trailing bytes in tensor blob " + name);
    return {name, t};
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
    auto tmp = dir;
    tmp += ".tmp";
    auto old = dir;
    old += ".old";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    json manifest = ckpt.meta;
    manifest["format_version"] = kFormatVersion;
    json entries = json::array();
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        const auto& [name, t] = ckpt.tensors[i];
        write_plain(tmp / blob_file(i), encode_blob(name, t));
        entries.push_back({{"name", name}, {"file", blob_file(i)}, {"shape", t.sizes().vec()}});
    }
    manifest["tensors"] = entries;
    write_plain(tmp / "manifest.json", manifest.dump(2) + "\n");

    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
}

Checkpoint load_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw MissingPathError(dir.string());
    const auto manifest_path = dir / "manifest.json";
    json manifest;
    try {
        manifest = json::parse(util::read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format_version", -1) != kFormatVersion) {
        throw FormatError(manifest_path.string() + ": unsupported format_version");
    }
    Checkpoint ckpt;
    for (const auto& entry : manifest.at("tensors")) {
        auto [name, t] = decode_blob(util::read_text_file(dir / entry.at("file").get<std::string>()));
        if (name != entry.at("name").get<std::string>()) throw FormatError("blob name mismatch for " + name);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    manifest.erase("tensors");
    ckpt.meta = std::move(manifest);
    return ckpt;
}

NamedTensors module_tensors(torch::nn::Module& module, const std::string& prefix) {
    NamedTensors out;
    for (auto& p : module.named_parameters()) out.emplace_back(prefix + p.key(), p.value());
    for (auto& b : module.named_buffers()) out.emplace_back(prefix + b.key(), b.value());
    return out;
}

void restore_module(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt) {
    torch::NoGradGuard no_grad;
    for (auto& [name, target] : module_tensors(module, prefix)) {
        const auto& src = ckpt.get(name);
        if (!src.sizes().equals(target.sizes())) {
            std::ostringstream msg;
            msg << "checkpoint tensor " << name << " has shape " << src.sizes() << ", model expects "
                << target.sizes();
            throw ShapeError(msg.str());
        }
        target.copy_(src);
    }
}

NamedTensors adam_state_tensors(torch::optim::Adam& optimizer, const NamedTensors& params, const std::string& prefix) {
    NamedTensors out;
    auto& state = optimizer.state();
    for (const auto& [name, p] : params) {
        auto it = state.find(p.unsafeGetTensorImpl());
        if (it == state.end()) continue;
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        out.emplace_back(prefix + name + "/step", torch::tensor(s.step(), torch::kInt64));
        out.emplace_back(prefix + name + "/exp_avg", s.exp_avg());
        out.emplace_back(prefix + name + "/exp_avg_sq", s.exp_avg_sq());
    }
    return out;
}

void restore_adam_state(torch::optim::Adam& optimizer, const NamedTensors& params, const std::string& prefix,
                        const Checkpoint& ckpt) {
    auto& state = optimizer.state();
    for (const auto& [name, p] : params) {
        const auto key = prefix + name + "/step";
        if (!ckpt.contains(key)) continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(ckpt.get(key).item<std::int64_t>());
        auto avg = ckpt.get(prefix + name + "/exp_avg");
        auto avg_sq = ckpt.get(prefix + name + "/exp_avg_sq");
        if (!avg.sizes().equals(p.sizes())) throw ShapeError("optimizer state shape mismatch for " + name);
        s->exp_avg(avg.to(p.dtype()).clone());
        s->exp_avg_sq(avg_sq.to(p.dtype()).clone());
        state[p.unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace etts::checkpoint
