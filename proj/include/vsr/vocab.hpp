#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vsr {

// Character vocabulary. Ids 0..3 are the specials <blank>, <unk>, <sos>,
// <eos>; characters follow in file order. Three index spaces are in use:
//   vocabulary ids  - everything;
//   CTC classes     - blank, unk, characters (no sos/eos);
//   decoder classes - unk, sos, eos, characters (no blank).
class Vocabulary {
public:
    static constexpr std::int64_t kBlank = 0;
    static constexpr std::int64_t kUnk = 1;
    static constexpr std::int64_t kSos = 2;
    static constexpr std::int64_t kEos = 3;
    static constexpr std::int64_t kFirstChar = 4;

    Vocabulary() = default;
    Vocabulary(const std::string& characters, std::string language);

    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
    std::int64_t num_chars() const { return size() - kFirstChar; }
    const std::string& language() const { return language_; }
    const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    // Unknown characters map to <unk> and bump unknown_count().
    std::vector<std::int64_t> encode(const std::string& text) const;
    std::string decode(const std::vector<std::int64_t>& ids) const;
    std::int64_t id_of(char c) const;
    std::int64_t unknown_count() const { return unknown_; }

    std::int64_t ctc_size() const { return size() - 2; }
    std::int64_t decoder_size() const { return size() - 1; }
    std::int64_t to_ctc(std::int64_t id) const;
    std::int64_t from_ctc(std::int64_t cls) const;
    std::int64_t to_decoder(std::int64_t id) const;
    std::int64_t from_decoder(std::int64_t cls) const;

    // Vocabulary ids of every character, ascending.
    std::vector<std::int64_t> char_ids() const;

    bool operator==(const Vocabulary& other) const {
        return tokens_ == other.tokens_ && language_ == other.language_;
    }

private:
    std::vector<std::string> tokens_;
    std::string language_ = "en";
    mutable std::int64_t unknown_ = 0;
};

}  // namespace vsr
