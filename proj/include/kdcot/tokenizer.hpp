#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdcot/common.hpp"

namespace kdcot {

// Word-level shared vocabulary. Ids are dense 0..N-1 with the special tokens
// at fixed reserved positions. Teacher and student must reference the same
// spec, checked by content hash.
class TokenizerSpec {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kSep = 4;
    static constexpr int kNumSpecials = 5;

    static const std::vector<std::string>& special_strings();

    // Whitespace/punctuation-aware word-level vocabulary truncated to
    // `vocab_budget` (specials included) by frequency, ties broken
    // lexicographically.
    static TokenizerSpec build(const std::vector<std::string>& corpus_lines, size_t vocab_budget);

    std::vector<int> encode(const std::string& text, bool add_bos = false) const;
    std::string decode(const std::vector<int>& ids, bool keep_specials = false) const;

    int token_id(const std::string& token) const;  // kUnk when absent
    const std::string& token(int id) const;
    size_t size() const { return vocab_.size(); }
    uint64_t content_hash() const;

    std::string to_json() const;
    static TokenizerSpec from_json(const std::string& json_text);

    void save(const std::string& path) const;
    static TokenizerSpec load(const std::string& path);

    // Splits text into word/punctuation pieces; exposed for tests.
    static std::vector<std::string> split_words(const std::string& text);

private:
    explicit TokenizerSpec(std::vector<std::string> vocab);

    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> lookup_;
};

}  // namespace kdcot
