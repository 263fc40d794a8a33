#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsr/nn.hpp"

namespace vsr {

// Named tensors plus JSON metadata. On disk: "VSRC", u32 version, u64 header
// length, UTF-8 JSON header (meta, tensor names and shapes, optimizer length),
// then every tensor as little-endian f64, then the optimizer moments.
struct Checkpoint {
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<double> values;
    };
    std::vector<Entry> tensors;
    std::vector<double> optimizer;  // may be empty
    nlohmann::json meta = nlohmann::json::object();

    static Checkpoint from_module(const nn::Module& module);
    // Copies values into a module of the same structure; names must match.
    void apply(nn::Module& module) const;
    const Entry* find(const std::string& name) const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

// Element-wise mean of the parameters. Metadata comes from the last input,
// with "averaged_from" listing each source's step. Optimizer state is dropped.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& inputs);

// Maximum absolute element difference over matching tensors.
double max_abs_difference(const Checkpoint& a, const Checkpoint& b);

}  // namespace vsr
