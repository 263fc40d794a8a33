#include "vsr/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "vsr/errors.hpp"
#include "vsr/random.hpp"

namespace vsr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    throw ConfigError("'" + key + "' expects on/off, got '" + v + "'");
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
    return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(static_cast<T>(parse_int(key, item)));
    }
    return out;
}

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class M>
Field int_field(std::string key, M member) {
    return {key, [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
            [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_int(key, v); }};
}

template <class M>
Field real_field(std::string key, M member) {
    return {key, [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); },
            [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <class M>
Field bool_field(std::string key, M member) {
    return {key, [member](const ExperimentConfig& c) { return std::string(member(const_cast<ExperimentConfig&>(c)) ? "on" : "off"); },
            [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <class M>
Field string_field(std::string key, M member) {
    return {key, [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = v; }};
}

#define REF(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& registry() {
    static const std::vector<Field> fields = {
        string_field("experiment.preset", REF(preset)),
        int_field("experiment.seed", REF(seed)),
        {"experiment.seeds", [](const ExperimentConfig& c) { return join(c.seeds); },
         [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>("experiment.seeds", v); }},
        string_field("model.frontend", REF(model.frontend)),
        real_field("model.width_multiplier", REF(model.width_multiplier)),
        int_field("model.crop", REF(model.crop)),
        int_field("encoder.blocks", REF(model.encoder.num_blocks)),
        int_field("encoder.model_dim", REF(model.encoder.model_dim)),
        int_field("encoder.ff_dim", REF(model.encoder.ff_dim)),
        int_field("encoder.head_dim", REF(model.encoder.head_dim)),
        real_field("encoder.dropout", REF(model.encoder.dropout)),
        int_field("encoder.conv_kernel", REF(model.encoder.conv_kernel)),
        int_field("encoder.rel_clip", REF(model.encoder.rel_clip)),
        int_field("encoder.tap_layer", REF(model.encoder.tap_layer)),
        int_field("decoder.blocks", REF(model.decoder.num_blocks)),
        int_field("decoder.model_dim", REF(model.decoder.model_dim)),
        int_field("decoder.ff_dim", REF(model.decoder.ff_dim)),
        int_field("decoder.head_dim", REF(model.decoder.head_dim)),
        real_field("decoder.dropout", REF(model.decoder.dropout)),
        real_field("loss.ctc_weight", REF(loss.ctc)),
        real_field("loss.audio_aux", REF(loss.audio_aux)),
        real_field("loss.visual_aux", REF(loss.visual_aux)),
        real_field("loss.label_smoothing", REF(train.label_smoothing)),
        int_field("train.epochs", REF(train.epochs)),
        int_field("train.batch_size", REF(train.batch_size)),
        int_field("train.halve_threshold", REF(train.halve_threshold)),
        int_field("train.average_last", REF(train.average_last)),
        real_field("train.peak_lr", REF(train.schedule.peak_lr)),
        int_field("train.warmup", REF(train.schedule.warmup)),
        real_field("train.adam_beta1", REF(train.adam.beta1)),
        real_field("train.adam_beta2", REF(train.adam.beta2)),
        real_field("train.adam_eps", REF(train.adam.eps)),
        real_field("train.grad_clip", REF(train.adam.grad_clip)),
        int_field("train.teacher_epochs", REF(train.teacher_epochs)),
        int_field("train.log_every", REF(train.log_every)),
        {"curriculum.caps", [](const ExperimentConfig& c) { return join(c.curriculum.caps); },
         [](ExperimentConfig& c, const std::string& v) { c.curriculum.caps = parse_list<std::int64_t>("curriculum.caps", v); }},
        {"curriculum.stage_epochs", [](const ExperimentConfig& c) { return join(c.train.stage_epochs); },
         [](ExperimentConfig& c, const std::string& v) {
             c.train.stage_epochs = parse_list<std::int64_t>("curriculum.stage_epochs", v);
         }},
        bool_field("augment.time_masking", REF(augment.time_masking)),
        real_field("augment.mask_max_seconds", REF(augment.mask.max_seconds)),
        real_field("augment.mask_max_fraction", REF(augment.mask.max_fraction)),
        real_field("augment.masks_per_second", REF(augment.mask.masks_per_second)),
        real_field("augment.frame_rate", REF(augment.mask.frame_rate)),
        bool_field("augment.spatial", REF(augment.spatial)),
        bool_field("ablation.audio_aux", REF(ablation.audio_aux)),
        bool_field("ablation.visual_aux", REF(ablation.visual_aux)),
        bool_field("ablation.time_masking", REF(ablation.time_masking)),
        string_field("decode.language", REF(decode.language)),
        int_field("decode.beam_size", REF(decode.beam_size)),
        real_field("decode.ctc_weight", REF(decode.ctc_weight)),
        real_field("decode.lm_weight", REF(decode.lm_weight)),
        real_field("decode.max_len_ratio", REF(decode.max_len_ratio)),
        int_field("decode.max_len", REF(decode.max_len)),
        bool_field("decode.use_lm", REF(use_lm)),
        int_field("lm.blocks", REF(lm.model.num_blocks)),
        int_field("lm.model_dim", REF(lm.model.model_dim)),
        int_field("lm.ff_dim", REF(lm.model.ff_dim)),
        int_field("lm.head_dim", REF(lm.model.head_dim)),
        real_field("lm.dropout", REF(lm.model.dropout)),
        int_field("lm.epochs", REF(lm.epochs)),
        int_field("lm.batch_size", REF(lm.batch_size)),
        real_field("lm.peak_lr", REF(lm.peak_lr)),
        int_field("lm.warmup", REF(lm.warmup)),
    };
    return fields;
}

#undef REF

const Field& find_field(const std::string& key) {
    for (const auto& f : registry())
        if (f.key == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

LossWeights ExperimentConfig::effective_loss() const {
    LossWeights w = loss;
    if (!ablation.audio_aux) w.audio_aux = 0;
    if (!ablation.visual_aux) w.visual_aux = 0;
    return w;
}

void ExperimentConfig::validate() const {
    model.encoder.validate();
    model.decoder.validate();
    if (model.decoder.model_dim != model.encoder.model_dim) throw ConfigError("decoder.model_dim must equal encoder.model_dim");
    if (!(model.width_multiplier > 0)) throw ConfigError("model.width_multiplier must be > 0");
    if (model.frontend != "auto") parse_frontend_kind(model.frontend);
    loss.validate();
    if (!(train.label_smoothing >= 0 && train.label_smoothing < 1)) throw ConfigError("loss.label_smoothing must be in [0, 1)");
    if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (train.average_last < 1) throw ConfigError("train.average_last must be >= 1");
    if (train.teacher_epochs < 1) throw ConfigError("train.teacher_epochs must be >= 1");
    if (!(train.schedule.peak_lr > 0) || train.schedule.warmup < 1) throw ConfigError("bad learning-rate schedule");
    curriculum.validate();
    for (auto e : train.stage_epochs)
        if (e < 0) throw ConfigError("curriculum.stage_epochs must be >= 0");
    decode.validate();
    if (seeds.empty()) throw ConfigError("experiment.seeds is empty");
    if (lm.model.model_dim % lm.model.head_dim != 0) throw ConfigError("lm.model_dim must be a multiple of lm.head_dim");
}

std::vector<std::string> ExperimentConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : registry()) out.push_back(f.key);
    return out;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : registry()) out.emplace_back(f.key, f.get(*this));
    return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, trim(value)); }

std::string ExperimentConfig::get(const std::string& key) const { return find_field(key).get(*this); }

std::string ExperimentConfig::hash() const {
    std::string canon;
    for (const auto& [k, v] : entries()) canon += k + "=" + v + "\n";
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
    return buf;
}

std::string ExperimentConfig::to_ini() const {
    std::string out, section;
    for (const auto& [k, v] : entries()) {
        const auto dot = k.find('.');
        const std::string s = k.substr(0, dot);
        if (s != section) {
            out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
            section = s;
        }
        out += k.substr(dot + 1) + " = " + v + "\n";
    }
    return out;
}

ExperimentConfig make_preset(const std::string& name) {
    ExperimentConfig c;
    if (name == "large") {
        c.preset = "large";
        return c;
    }
    if (name != "desk") throw ConfigError("unknown preset '" + name + "' (large, desk)");
    c.preset = "desk";
    c.model.encoder.num_blocks = 3;
    c.model.encoder.model_dim = 64;
    c.model.encoder.ff_dim = 256;
    c.model.encoder.head_dim = 16;
    c.model.encoder.conv_kernel = 7;
    c.model.encoder.rel_clip = 16;
    c.model.encoder.tap_layer = 2;
    c.model.decoder.num_blocks = 2;
    c.model.decoder.model_dim = 64;
    c.model.decoder.ff_dim = 256;
    c.model.decoder.head_dim = 16;
    c.model.crop = 20;
    c.train.epochs = 20;
    c.train.batch_size = 8;
    c.train.average_last = 5;
    c.train.schedule.peak_lr = 2e-3;
    c.train.schedule.warmup = 500;
    c.train.teacher_epochs = 20;
    c.curriculum.caps = {40, 100};
    c.train.stage_epochs = {4};
    c.decode.beam_size = 10;
    c.lm.model = {2, 64, 256, 16, 0.1};
    c.lm.epochs = 10;
    c.seeds = {1, 2, 3, 4, 5};
    return c;
}

std::vector<std::pair<std::string, std::string>> parse_ini(const std::string& text, const std::string& origin) {
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream ss(text);
    std::string line, section = "experiment";
    int n = 0;
    while (std::getline(ss, line)) {
        ++n;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(n) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
        out.emplace_back(key.find('.') == std::string::npos ? section + "." + key : key, trim(line.substr(eq + 1)));
    }
    return out;
}

ExperimentConfig config_from_entries(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string preset = "large";
    for (const auto& [k, v] : entries)
        if (k == "experiment.preset") preset = v;
    ExperimentConfig c = make_preset(preset);
    bool language_set = false, beam_set = false, beta_set = false;
    for (const auto& [k, v] : entries) {
        c.set(k, v);
        language_set |= k == "decode.language";
        beam_set |= k == "decode.beam_size";
        beta_set |= k == "decode.lm_weight";
    }
    // A language choice brings its preset beam size and LM weight unless
    // those were given explicitly.
    if (language_set) {
        const DecodeConfig p = beam_preset(c.decode.language);
        if (!beam_set) c.decode.beam_size = p.beam_size;
        if (!beta_set) c.decode.lm_weight = p.lm_weight;
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::vector<std::pair<std::string, std::string>> entries;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path.string());
        std::stringstream ss;
        ss << is.rdbuf();
        entries = parse_ini(ss.str(), path.string());
    }
    entries.insert(entries.end(), overrides.begin(), overrides.end());
    return config_from_entries(entries);
}

}  // namespace vsr
