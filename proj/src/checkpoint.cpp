#include "vsr/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "vsr/errors.hpp"

namespace vsr {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is, const std::string& what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint truncated reading " + what);
    return v;
}

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

}  // namespace

Checkpoint Checkpoint::from_module(const nn::Module& module) {
    Checkpoint c;
    for (const auto& [name, t] : module.named_state()) {
        auto d = t.data();
        c.tensors.push_back({name, t.shape(), std::vector<double>(d.begin(), d.end())});
    }
    return c;
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : tensors)
        if (e.name == name) return &e;
    return nullptr;
}

void Checkpoint::apply(nn::Module& module) const {
    nn::NamedTensors state;
    for (const auto& [name, t] : module.named_state()) {
        const Entry* e = find(name);
        if (!e) throw DataError("checkpoint has no tensor '" + name + "'");
        if (e->shape != t.shape()) {
            throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(e->shape) + ", model expects " +
                            shape_str(t.shape()));
        }
        state.emplace_back(name, Tensor::from_data(e->shape, std::vector<Scalar>(e->values.begin(), e->values.end())));
    }
    module.load_state(state);
}

void Checkpoint::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& e : tensors) header["tensors"].push_back({{"name", e.name}, {"shape", e.shape}});
    header["optimizer"] = optimizer.size();
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("cannot write checkpoint " + tmp);
        os.write(kMagic, 4);
        put<std::uint32_t>(os, kVersion);
        put<std::uint64_t>(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& e : tensors)
            os.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 8));
        os.write(reinterpret_cast<const char*>(optimizer.data()), static_cast<std::streamsize>(optimizer.size() * 8));
        if (!os) throw DataError("failed writing checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + " is not a checkpoint");
    const auto version = take<std::uint32_t>(is, "version");
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto len = take<std::uint64_t>(is, "header length");
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint truncated in header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    Checkpoint c;
    c.meta = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
        Entry e{t.at("name").get<std::string>(), t.at("shape").get<Shape>(), {}};
        e.values.resize(static_cast<std::size_t>(numel(e.shape)));
        if (!is.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 8)))
            throw DataError("checkpoint truncated in tensor '" + e.name + "'");
        c.tensors.push_back(std::move(e));
    }
    c.optimizer.resize(header.value("optimizer", std::size_t{0}));
    if (!is.read(reinterpret_cast<char*>(c.optimizer.data()), static_cast<std::streamsize>(c.optimizer.size() * 8)))
        throw DataError("checkpoint truncated in optimizer state");
    if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in checkpoint " + path.string());
    return c;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& inputs) {
    if (inputs.empty()) throw ContractError("averaging needs at least one checkpoint");
    Checkpoint out;
    out.meta = inputs.back().meta;
    out.tensors = inputs.front().tensors;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& c : inputs) steps.push_back(c.meta.value("step", std::int64_t{-1}));
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        const auto& c = inputs[i];
        if (c.tensors.size() != out.tensors.size()) throw DataError("checkpoints differ in tensor count");
        for (std::size_t j = 0; j < out.tensors.size(); ++j) {
            auto& acc = out.tensors[j];
            const auto& e = c.tensors[j];
            if (e.name != acc.name || e.shape != acc.shape) {
                throw DataError("cannot average checkpoints: parameter '" + acc.name + "' " + shape_str(acc.shape) +
                                " vs '" + e.name + "' " + shape_str(e.shape));
            }
            for (std::size_t k = 0; k < acc.values.size(); ++k) acc.values[k] += e.values[k];
        }
    }
    const double n = static_cast<double>(inputs.size());
    for (auto& e : out.tensors)
        for (auto& v : e.values) v /= n;
    out.meta["averaged_from"] = steps;
    return out;
}

double max_abs_difference(const Checkpoint& a, const Checkpoint& b) {
    if (a.tensors.size() != b.tensors.size()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& x = a.tensors[i];
        const auto& y = b.tensors[i];
        if (x.name != y.name || x.shape != y.shape) return INFINITY;
        for (std::size_t k = 0; k < x.values.size(); ++k) m = std::max(m, std::abs(x.values[k] - y.values[k]));
    }
    return m;
}

}  // namespace vsr
