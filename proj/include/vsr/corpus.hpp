#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsr/random.hpp"
#include "vsr/tensor.hpp"
#include "vsr/vocab.hpp"

namespace vsr {

namespace fs = std::filesystem;

// ---- feature files ----

// Dense float array as stored on disk.
struct FeatureArray {
    Shape shape;
    std::vector<Scalar> data;
};

// "VSRF", u16 version, u16 dtype (1 = f32), u32 rank, u64 extents, f32 LE data.
void write_feature_file(const fs::path& path, const Shape& shape, std::span<const Scalar> data);
FeatureArray read_feature_file(const fs::path& path);

// ---- manifests ----

struct ManifestEntry {
    std::string id;
    std::string language;
    std::string transcript;
    std::int64_t frames = 0;
    std::string visual_path;  // relative to the manifest directory
    std::string audio_path;   // empty when there is no audio channel
};

struct Manifest {
    fs::path directory;
    std::vector<ManifestEntry> entries;

    static Manifest load(const fs::path& path);
    void save(const fs::path& path) const;
    fs::path resolve(const std::string& relative) const { return directory / relative; }
};

// ---- synthetic corpus ----

// Character -> viseme class. Characters in one group share a visual prototype.
class AmbiguityMap {
public:
    AmbiguityMap() = default;
    // groups like "bpm,fv": each listed group becomes one class.
    AmbiguityMap(std::string alphabet, const std::vector<std::string>& groups, Scalar sigma);
    static AmbiguityMap injective(std::string alphabet, Scalar sigma = 0) { return {std::move(alphabet), {}, sigma}; }
    static std::vector<std::string> parse_groups(const std::string& spec);

    std::int64_t class_of(char c) const;
    std::int64_t num_classes() const { return num_classes_; }
    Scalar sigma() const { return sigma_; }
    const std::string& alphabet() const { return alphabet_; }
    const std::vector<std::string>& groups() const { return groups_; }
    // Classes holding two or more characters.
    std::int64_t merged_classes() const;
    bool degenerate() const { return num_classes_ <= 1 && alphabet_.size() > 1; }

private:
    std::string alphabet_;
    std::vector<std::string> groups_;
    std::map<char, std::int64_t> class_;
    std::int64_t num_classes_ = 0;
    Scalar sigma_ = 0;
};

enum class CorpusMode { Feature, Image };

// Glyphs are 8x8 patterns drawn at 2x in the middle of the canvas.
inline constexpr std::int64_t kGlyphCanvas = 16;
CorpusMode parse_corpus_mode(const std::string& name);
std::string to_string(CorpusMode mode);

struct CorpusOptions {
    std::uint64_t seed = 1;
    std::int64_t size = 500;
    CorpusMode mode = CorpusMode::Feature;
    std::string language = "en";
    std::string alphabet = "abdefgikmnoprstuv ";
    std::string merge_groups;   // "" is injective
    Scalar visual_sigma = 0;
    Scalar audio_sigma = 0;
    std::int64_t visual_dim = 32;
    std::int64_t audio_dim = 32;
    std::int64_t min_chars = 6;
    std::int64_t max_chars = 16;
    std::int64_t min_frames_per_char = 2;
    std::int64_t max_frames_per_char = 4;
    std::int64_t canvas = 24;  // image mode
    double dev_fraction = 0.1;
    double test_fraction = 0.1;
    bool with_audio = true;

    AmbiguityMap ambiguity() const;
    void validate() const;
};

// One synthesized sample, before it is written to disk.
struct SyntheticUtterance {
    std::string id;
    std::string transcript;
    std::vector<std::int64_t> char_frames;  // frames emitted per character
    FeatureArray visual;  // [D_v, T] or [1, T, H, W]
    FeatureArray audio;   // [D_a, T_a], T_a in {T - 1, T}
};

// Fixed per-corpus sources: bigram text model and frame prototypes.
class CorpusGenerator {
public:
    explicit CorpusGenerator(CorpusOptions options);
    SyntheticUtterance make(std::int64_t index) const;
    const CorpusOptions& options() const { return opt_; }
    const AmbiguityMap& ambiguity() const { return amb_; }
    Vocabulary vocabulary() const { return {opt_.alphabet, opt_.language}; }
    // Noise-free frames for character `c`; `onset` marks its first frame.
    std::vector<Scalar> visual_prototype(char c, bool onset) const;
    std::vector<Scalar> audio_prototype(char c, bool onset) const;

private:
    std::string sample_text(Rng& rng) const;

    CorpusOptions opt_;
    AmbiguityMap amb_;
    std::vector<std::vector<double>> bigram_;           // [chars + 1][chars], row 0 is the start state
    std::vector<std::vector<Scalar>> visual_protos_;    // per viseme class
    std::vector<std::vector<Scalar>> audio_protos_;     // per character
    std::vector<std::vector<std::uint8_t>> glyphs_;     // per viseme class, 8x8
};

struct CorpusSummary {
    fs::path directory;
    std::int64_t train = 0, dev = 0, test = 0;
    std::vector<std::string> warnings;
};

// Writes vocab.txt, corpus.json, feats/*.vsrf and manifests all/train/dev/test.jsonl.
CorpusSummary generate_corpus(const CorpusOptions& options, const fs::path& out_dir);

CorpusOptions load_corpus_options(const fs::path& corpus_json);

// ---- in-memory dataset ----

struct Utterance {
    ManifestEntry meta;
    std::vector<std::int64_t> transcript_ids;  // vocabulary ids
    Tensor visual;  // [D_v, T] or [1, T, H, W]
    Tensor audio;   // [D_a, T_a] or undefined
    std::int64_t frames() const { return meta.frames; }
};

std::vector<Utterance> load_utterances(const Manifest& manifest, const Vocabulary& vocab);

}  // namespace vsr
