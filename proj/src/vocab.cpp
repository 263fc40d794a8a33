#include "vsr/vocab.hpp"

#include <fstream>

#include "vsr/errors.hpp"

namespace vsr {

namespace {
const char* const kSpecials[] = {"<blank>", "<unk>", "<sos>", "<eos>"};
constexpr const char* kSpaceToken = "<space>";
constexpr const char* kLanguagePrefix = "#language ";
}  // namespace

Vocabulary::Vocabulary(const std::string& characters, std::string language) : language_(std::move(language)) {
    for (const char* s : kSpecials) tokens_.emplace_back(s);
    for (char c : characters) {
        const std::string tok(1, c);
        for (const auto& t : tokens_)
            if (t == tok) throw ConfigError(std::string("duplicate vocabulary character '") + c + "'");
        tokens_.push_back(tok);
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path.string());
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind(kLanguagePrefix, 0) == 0) {
            v.language_ = line.substr(std::char_traits<char>::length(kLanguagePrefix));
            continue;
        }
        if (line.empty()) continue;
        v.tokens_.push_back(line == kSpaceToken ? std::string(" ") : line);
    }
    if (v.tokens_.size() < static_cast<std::size_t>(kFirstChar)) throw DataError("vocabulary file lacks specials");
    for (std::size_t i = 0; i < 4; ++i) {
        if (v.tokens_[i] != kSpecials[i]) throw DataError("vocabulary specials out of order in " + path.string());
    }
    for (std::size_t i = kFirstChar; i < v.tokens_.size(); ++i) {
        if (v.tokens_[i].size() != 1) throw DataError("vocabulary token '" + v.tokens_[i] + "' is not a character");
    }
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file " + path.string());
    for (const auto& t : tokens_) out << (t == " " ? kSpaceToken : t) << '\n';
    out << kLanguagePrefix << language_ << '\n';
}

std::int64_t Vocabulary::id_of(char c) const {
    for (std::size_t i = kFirstChar; i < tokens_.size(); ++i)
        if (tokens_[i][0] == c) return static_cast<std::int64_t>(i);
    return kUnk;
}

std::vector<std::int64_t> Vocabulary::encode(const std::string& text) const {
    std::vector<std::int64_t> ids;
    ids.reserve(text.size());
    for (char c : text) {
        const std::int64_t id = id_of(c);
        if (id == kUnk) ++unknown_;
        ids.push_back(id);
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<std::int64_t>& ids) const {
    std::string out;
    for (auto id : ids) {
        if (id >= kFirstChar && id < size()) out += tokens_[static_cast<std::size_t>(id)];
        else if (id == kUnk) out += '?';
    }
    return out;
}

std::int64_t Vocabulary::to_ctc(std::int64_t id) const {
    if (id == kBlank) return 0;
    if (id == kUnk) return 1;
    if (id >= kFirstChar && id < size()) return id - 2;
    throw ContractError("token " + std::to_string(id) + " has no CTC class");
}

std::int64_t Vocabulary::from_ctc(std::int64_t cls) const {
    if (cls == 0) return kBlank;
    if (cls == 1) return kUnk;
    if (cls >= 2 && cls < ctc_size()) return cls + 2;
    throw ContractError("CTC class " + std::to_string(cls) + " out of range");
}

std::int64_t Vocabulary::to_decoder(std::int64_t id) const {
    if (id <= kBlank || id >= size()) throw ContractError("token " + std::to_string(id) + " has no decoder class");
    return id - 1;
}

std::int64_t Vocabulary::from_decoder(std::int64_t cls) const {
    if (cls < 0 || cls >= decoder_size()) throw ContractError("decoder class out of range");
    return cls + 1;
}

std::vector<std::int64_t> Vocabulary::char_ids() const {
    std::vector<std::int64_t> out;
    for (std::int64_t id = kFirstChar; id < size(); ++id) out.push_back(id);
    return out;
}

}  // namespace vsr
