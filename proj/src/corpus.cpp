#include "vsr/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"
#include "vsr/errors.hpp"

namespace vsr {

using nlohmann::json;

// ---- feature files ----

namespace {

constexpr char kFeatureMagic[4] = {'V', 'S', 'R', 'F'};
constexpr std::uint16_t kFeatureVersion = 1;
constexpr std::uint16_t kDtypeF32 = 1;

template <class T>
void put_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const fs::path& path) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("truncated feature file " + path.string());
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace

void write_feature_file(const fs::path& path, const Shape& shape, std::span<const Scalar> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) throw ShapeError("feature data does not match its shape");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(kFeatureMagic, 4);
    put_le<std::uint16_t>(os, kFeatureVersion);
    put_le<std::uint16_t>(os, kDtypeF32);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (Scalar v : data) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!os) throw DataError("failed writing " + path.string());
}

FeatureArray read_feature_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) throw DataError("bad magic in " + path.string());
    const auto version = get_le<std::uint16_t>(is, path);
    if (version != kFeatureVersion) throw DataError("unsupported feature file version " + std::to_string(version));
    const auto dtype = get_le<std::uint16_t>(is, path);
    if (dtype != kDtypeF32) throw DataError("unsupported dtype code " + std::to_string(dtype) + " in " + path.string());
    const auto rank = get_le<std::uint32_t>(is, path);
    if (rank == 0 || rank > 8) throw DataError("bad rank in " + path.string());
    FeatureArray out;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto e = get_le<std::uint64_t>(is, path);
        if (e == 0 || e > (1ull << 32)) throw DataError("bad extent in " + path.string());
        out.shape.push_back(static_cast<std::int64_t>(e));
    }
    out.data.resize(static_cast<std::size_t>(shape_numel(out.shape)));
    for (auto& v : out.data) v = static_cast<Scalar>(std::bit_cast<float>(get_le<std::uint32_t>(is, path)));
    if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
    return out;
}

// ---- manifests ----

Manifest Manifest::load(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest " + path.string());
    Manifest m;
    m.directory = path.parent_path();
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.language = j.value("language", "en");
            e.transcript = j.at("transcript").get<std::string>();
            e.frames = j.at("frames").get<std::int64_t>();
            e.visual_path = j.at("visual_path").get<std::string>();
            e.audio_path = j.value("audio_path", "");
            m.entries.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return m;
}

void Manifest::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw DataError("cannot write manifest " + path.string());
    for (const auto& e : entries) {
        json j;
        j["id"] = e.id;
        j["language"] = e.language;
        j["transcript"] = e.transcript;
        j["frames"] = e.frames;
        j["visual_path"] = e.visual_path;
        j["audio_path"] = e.audio_path;
        os << j.dump() << '\n';
    }
}

// ---- ambiguity ----

AmbiguityMap::AmbiguityMap(std::string alphabet, const std::vector<std::string>& groups, Scalar sigma)
    : alphabet_(std::move(alphabet)), groups_(groups), sigma_(sigma) {
    if (sigma < 0) throw ConfigError("visual noise sigma must be >= 0");
    std::set<char> seen;
    for (const auto& g : groups_) {
        for (char c : g) {
            if (alphabet_.find(c) == std::string::npos) throw ConfigError(std::string("merge group character '") + c + "' not in alphabet");
            if (!seen.insert(c).second) throw ConfigError(std::string("character '") + c + "' appears in two merge groups");
        }
        for (char c : g) class_[c] = num_classes_;
        ++num_classes_;
    }
    for (char c : alphabet_)
        if (!class_.count(c)) class_[c] = num_classes_++;
}

std::vector<std::string> AmbiguityMap::parse_groups(const std::string& spec) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : spec) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::int64_t AmbiguityMap::class_of(char c) const {
    auto it = class_.find(c);
    if (it == class_.end()) throw DataError(std::string("character '") + c + "' has no viseme class");
    return it->second;
}

std::int64_t AmbiguityMap::merged_classes() const {
    std::map<std::int64_t, int> count;
    for (const auto& [c, k] : class_) ++count[k];
    std::int64_t n = 0;
    for (const auto& [k, v] : count) n += v >= 2;
    return n;
}

CorpusMode parse_corpus_mode(const std::string& name) {
    if (name == "feature") return CorpusMode::Feature;
    if (name == "image") return CorpusMode::Image;
    throw ConfigError("unknown corpus mode '" + name + "' (feature, image)");
}

std::string to_string(CorpusMode mode) { return mode == CorpusMode::Feature ? "feature" : "image"; }

AmbiguityMap CorpusOptions::ambiguity() const { return {alphabet, AmbiguityMap::parse_groups(merge_groups), visual_sigma}; }

void CorpusOptions::validate() const {
    if (size < 1) throw ConfigError("corpus size must be >= 1");
    if (alphabet.empty()) throw ConfigError("alphabet is empty");
    if (std::set<char>(alphabet.begin(), alphabet.end()).size() != alphabet.size()) throw ConfigError("alphabet repeats a character");
    if (alphabet.find_first_not_of(' ') == std::string::npos) throw ConfigError("alphabet needs a non-space character");
    if (min_chars < 1 || max_chars < min_chars) throw ConfigError("bad transcript length range");
    if (min_frames_per_char < 1 || max_frames_per_char < min_frames_per_char) throw ConfigError("bad frames-per-character range");
    if (visual_dim < 2 || audio_dim < 2) throw ConfigError("feature dims must be >= 2");
    if (visual_sigma < 0 || audio_sigma < 0) throw ConfigError("noise sigma must be >= 0");
    if (mode == CorpusMode::Image && canvas < kGlyphCanvas) throw ConfigError("image canvas must be >= 16");
    if (dev_fraction < 0 || test_fraction < 0 || dev_fraction + test_fraction >= 1) throw ConfigError("bad split fractions");
}

// ---- generator ----

CorpusGenerator::CorpusGenerator(CorpusOptions options) : opt_(std::move(options)) {
    opt_.validate();
    amb_ = opt_.ambiguity();
    const std::size_t n = opt_.alphabet.size();
    Rng text = make_rng(opt_.seed, "bigram");
    std::normal_distribution<double> normal(0, 1);
    bigram_.assign(n + 1, std::vector<double>(n, 0));
    for (std::size_t r = 0; r <= n; ++r) {
        const bool after_space = r == 0 || opt_.alphabet[r - 1] == ' ';
        for (std::size_t c = 0; c < n; ++c) {
            const double w = std::exp(2.5 * normal(text));
            bigram_[r][c] = (after_space && opt_.alphabet[c] == ' ') ? 0 : w;
        }
    }
    Rng protos = make_rng(opt_.seed, "prototypes");
    visual_protos_.resize(static_cast<std::size_t>(amb_.num_classes()));
    for (auto& p : visual_protos_) {
        p.resize(static_cast<std::size_t>(opt_.visual_dim - 1));
        for (auto& v : p) v = static_cast<Scalar>(normal(protos));
    }
    audio_protos_.resize(n);
    for (auto& p : audio_protos_) {
        p.resize(static_cast<std::size_t>(opt_.audio_dim - 1));
        for (auto& v : p) v = static_cast<Scalar>(normal(protos));
    }
    std::bernoulli_distribution bit(0.5);
    glyphs_.resize(static_cast<std::size_t>(amb_.num_classes()));
    for (auto& g : glyphs_) {
        g.resize(64);
        for (auto& v : g) v = bit(protos);
    }
}

std::vector<Scalar> CorpusGenerator::visual_prototype(char c, bool onset) const {
    auto v = visual_protos_.at(static_cast<std::size_t>(amb_.class_of(c)));
    v.push_back(onset ? 1 : 0);
    return v;
}

std::vector<Scalar> CorpusGenerator::audio_prototype(char c, bool onset) const {
    const auto pos = opt_.alphabet.find(c);
    if (pos == std::string::npos) throw DataError(std::string("character '") + c + "' not in alphabet");
    auto v = audio_protos_[pos];
    v.push_back(onset ? 1 : 0);
    return v;
}

std::string CorpusGenerator::sample_text(Rng& rng) const {
    std::uniform_int_distribution<std::int64_t> len_dist(opt_.min_chars, opt_.max_chars);
    const std::int64_t len = len_dist(rng);
    std::string text;
    std::size_t state = 0;
    for (std::int64_t i = 0; i < len; ++i) {
        std::vector<double> w = bigram_[state];
        if (i + 1 == len)  // never end on a space
            for (std::size_t c = 0; c < w.size(); ++c)
                if (opt_.alphabet[c] == ' ') w[c] = 0;
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        const std::size_t c = pick(rng);
        text += opt_.alphabet[c];
        state = c + 1;
    }
    return text;
}

SyntheticUtterance CorpusGenerator::make(std::int64_t index) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "utt%05lld", static_cast<long long>(index));
    SyntheticUtterance u;
    u.id = buf;
    Rng rng = make_rng(opt_.seed, "utt:" + u.id);
    u.transcript = sample_text(rng);
    std::uniform_int_distribution<std::int64_t> frames_dist(opt_.min_frames_per_char, opt_.max_frames_per_char);
    std::int64_t T = 0;
    for (std::size_t i = 0; i < u.transcript.size(); ++i) {
        u.char_frames.push_back(frames_dist(rng));
        T += u.char_frames.back();
    }
    std::normal_distribution<double> noise(0, 1);
    const Scalar vs = opt_.visual_sigma, as = opt_.audio_sigma;

    if (opt_.mode == CorpusMode::Feature) {
        const std::int64_t D = opt_.visual_dim;
        u.visual.shape = {D, T};
        u.visual.data.assign(static_cast<std::size_t>(D * T), 0);
        std::int64_t t = 0;
        for (std::size_t i = 0; i < u.transcript.size(); ++i)
            for (std::int64_t f = 0; f < u.char_frames[i]; ++f, ++t) {
                const auto p = visual_prototype(u.transcript[i], f == 0);
                for (std::int64_t d = 0; d < D; ++d)
                    u.visual.data[d * T + t] = p[d] + (vs > 0 ? static_cast<Scalar>(vs * noise(rng)) : Scalar(0));
            }
    } else {
        const std::int64_t H = opt_.canvas, off = (H - kGlyphCanvas) / 2;
        u.visual.shape = {1, T, H, H};
        u.visual.data.assign(static_cast<std::size_t>(T * H * H), 0);
        std::int64_t t = 0;
        for (std::size_t i = 0; i < u.transcript.size(); ++i) {
            const auto& g = glyphs_[static_cast<std::size_t>(amb_.class_of(u.transcript[i]))];
            for (std::int64_t f = 0; f < u.char_frames[i]; ++f, ++t) {
                const Scalar level = f == 0 ? Scalar(1) : Scalar(0.7);
                Scalar* frame = u.visual.data.data() + t * H * H;
                for (std::int64_t y = 0; y < kGlyphCanvas; ++y)
                    for (std::int64_t x = 0; x < kGlyphCanvas; ++x)
                        if (g[(y / 2) * 8 + x / 2]) frame[(y + off) * H + x + off] = level;
                if (vs > 0)
                    for (std::int64_t p = 0; p < H * H; ++p)
                        frame[p] = std::clamp(frame[p] + static_cast<Scalar>(vs * noise(rng)), Scalar(0), Scalar(1));
            }
        }
    }
    if (opt_.with_audio) {
        const std::int64_t Ta = std::max<std::int64_t>(1, T - static_cast<std::int64_t>(rng() & 1));
        const std::int64_t D = opt_.audio_dim;
        u.audio.shape = {D, Ta};
        u.audio.data.assign(static_cast<std::size_t>(D * Ta), 0);
        std::int64_t t = 0;
        for (std::size_t i = 0; i < u.transcript.size(); ++i)
            for (std::int64_t f = 0; f < u.char_frames[i]; ++f, ++t) {
                if (t >= Ta) break;
                const auto p = audio_prototype(u.transcript[i], f == 0);
                for (std::int64_t d = 0; d < D; ++d)
                    u.audio.data[d * Ta + t] = p[d] + (as > 0 ? static_cast<Scalar>(as * noise(rng)) : Scalar(0));
            }
    }
    return u;
}

namespace {

json options_to_json(const CorpusOptions& o) {
    return {{"seed", o.seed},
            {"size", o.size},
            {"mode", to_string(o.mode)},
            {"language", o.language},
            {"alphabet", o.alphabet},
            {"merge_groups", o.merge_groups},
            {"visual_sigma", o.visual_sigma},
            {"audio_sigma", o.audio_sigma},
            {"visual_dim", o.visual_dim},
            {"audio_dim", o.audio_dim},
            {"min_chars", o.min_chars},
            {"max_chars", o.max_chars},
            {"min_frames_per_char", o.min_frames_per_char},
            {"max_frames_per_char", o.max_frames_per_char},
            {"canvas", o.canvas},
            {"dev_fraction", o.dev_fraction},
            {"test_fraction", o.test_fraction},
            {"with_audio", o.with_audio}};
}

}  // namespace

CorpusOptions load_corpus_options(const fs::path& corpus_json) {
    std::ifstream is(corpus_json);
    if (!is) throw DataError("cannot open " + corpus_json.string());
    try {
        const json j = json::parse(is);
        CorpusOptions o;
        o.seed = j.at("seed").get<std::uint64_t>();
        o.size = j.at("size").get<std::int64_t>();
        o.mode = parse_corpus_mode(j.at("mode").get<std::string>());
        o.language = j.at("language").get<std::string>();
        o.alphabet = j.at("alphabet").get<std::string>();
        o.merge_groups = j.at("merge_groups").get<std::string>();
        o.visual_sigma = j.at("visual_sigma").get<Scalar>();
        o.audio_sigma = j.at("audio_sigma").get<Scalar>();
        o.visual_dim = j.at("visual_dim").get<std::int64_t>();
        o.audio_dim = j.at("audio_dim").get<std::int64_t>();
        o.min_chars = j.at("min_chars").get<std::int64_t>();
        o.max_chars = j.at("max_chars").get<std::int64_t>();
        o.min_frames_per_char = j.at("min_frames_per_char").get<std::int64_t>();
        o.max_frames_per_char = j.at("max_frames_per_char").get<std::int64_t>();
        o.canvas = j.at("canvas").get<std::int64_t>();
        o.dev_fraction = j.at("dev_fraction").get<double>();
        o.test_fraction = j.at("test_fraction").get<double>();
        o.with_audio = j.at("with_audio").get<bool>();
        return o;
    } catch (const json::exception& e) {
        throw DataError(corpus_json.string() + ": " + e.what());
    }
}

CorpusSummary generate_corpus(const CorpusOptions& options, const fs::path& out_dir) {
    CorpusGenerator gen(options);
    CorpusSummary summary;
    summary.directory = out_dir;
    if (gen.ambiguity().degenerate()) summary.warnings.push_back("ambiguity map merges every character into one class");
    fs::create_directories(out_dir / "feats");
    gen.vocabulary().save(out_dir / "vocab.txt");
    {
        std::ofstream os(out_dir / "corpus.json");
        os << options_to_json(options).dump(2) << '\n';
    }
    Manifest all, train, dev, test;
    all.directory = train.directory = dev.directory = test.directory = out_dir;
    std::vector<SyntheticUtterance> made(static_cast<std::size_t>(options.size));
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < options.size; ++i) made[static_cast<std::size_t>(i)] = gen.make(i);
    for (const auto& u : made) {
        ManifestEntry e;
        e.id = u.id;
        e.language = options.language;
        e.transcript = u.transcript;
        e.frames = u.visual.shape[1];
        e.visual_path = "feats/" + u.id + ".visual.vsrf";
        write_feature_file(out_dir / e.visual_path, u.visual.shape, u.visual.data);
        if (options.with_audio) {
            e.audio_path = "feats/" + u.id + ".audio.vsrf";
            write_feature_file(out_dir / e.audio_path, u.audio.shape, u.audio.data);
        }
        all.entries.push_back(e);
        const double r = static_cast<double>(derive_seed(options.seed, "split:" + u.id) >> 11) * 0x1.0p-53;
        if (r < options.test_fraction) test.entries.push_back(e);
        else if (r < options.test_fraction + options.dev_fraction) dev.entries.push_back(e);
        else train.entries.push_back(e);
    }
    all.save(out_dir / "all.jsonl");
    train.save(out_dir / "train.jsonl");
    dev.save(out_dir / "dev.jsonl");
    test.save(out_dir / "test.jsonl");
    summary.train = static_cast<std::int64_t>(train.entries.size());
    summary.dev = static_cast<std::int64_t>(dev.entries.size());
    summary.test = static_cast<std::int64_t>(test.entries.size());
    return summary;
}

std::vector<Utterance> load_utterances(const Manifest& manifest, const Vocabulary& vocab) {
    std::vector<Utterance> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        Utterance u;
        u.meta = e;
        if (e.transcript.empty()) throw DataError("utterance " + e.id + " has an empty transcript");
        u.transcript_ids = vocab.encode(e.transcript);
        auto v = read_feature_file(manifest.resolve(e.visual_path));
        const std::int64_t T = v.shape.size() == 2 ? v.shape[1] : v.shape.size() == 4 ? v.shape[1] : -1;
        if (T != e.frames) throw DataError("utterance " + e.id + ": manifest says " + std::to_string(e.frames) +
                                           " frames, visual file has shape " + shape_str(v.shape));
        u.visual = Tensor::from_data(v.shape, std::move(v.data));
        if (!e.audio_path.empty()) {
            auto a = read_feature_file(manifest.resolve(e.audio_path));
            if (a.shape.size() != 2) throw DataError("utterance " + e.id + ": audio features must be [D, T]");
            if (std::abs(a.shape[1] - T) > 1) {
                throw DataError("utterance " + e.id + ": audio has " + std::to_string(a.shape[1]) + " frames, visual " +
                                std::to_string(T));
            }
            u.audio = Tensor::from_data(a.shape, std::move(a.data));
        }
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace vsr
