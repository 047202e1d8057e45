#pragma once

#include "json.hpp"
#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace etts::checkpoint {

inline constexpr int kFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// A checkpoint directory: manifest.json plus one blob per named tensor.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();  // kind, step, ops, phase, config, config_hash, ...
    NamedTensors tensors;

    const torch::Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

/// Writes the directory to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
/// Throws MissingPathError when `dir` or its manifest is absent, FormatError on
/// malformed content.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Single-tensor blob encoding (magic "ETPB").
std::string encode_blob(const std::string& name, const torch::Tensor& t);
std::pair<std::string, torch::Tensor> decode_blob(const std::string& bytes);

/// Parameters then buffers of `module`, names prefixed with `prefix`.
NamedTensors module_tensors(torch::nn::Module& module, const std::string& prefix);
/// Copies matching tensors into `module`; ShapeError on shape mismatch, FormatError when one is missing.
void restore_module(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt);

/// Adam moments and step counters, keyed by parameter name.
NamedTensors adam_state_tensors(torch::optim::Adam& optimizer, const NamedTensors& params, const std::string& prefix);
void restore_adam_state(torch::optim::Adam& optimizer, const NamedTensors& params, const std::string& prefix,
                        const Checkpoint& ckpt);

}  // namespace etts::checkpoint
