#include "kdcot/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace kdcot {

using nlohmann::json;

const std::vector<std::string>& TokenizerSpec::special_strings() {
    static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
    return specials;
}

TokenizerSpec::TokenizerSpec(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    lookup_.reserve(vocab_.size());
    for (size_t i = 0; i < vocab_.size(); ++i) {
        if (!lookup_.emplace(vocab_[i], static_cast<int>(i)).second)
            throw ValidationError("TokenizerSpec: duplicate token '" + vocab_[i] + "'");
    }
}

std::vector<std::string> TokenizerSpec::split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (size_t i = 0; i < text.size(); ++i) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        // Special-token markers like "<sep>" pass through as single words.
        if (c == '<') {
            const size_t close = text.find('>', i);
            if (close != std::string::npos && close - i <= 8) {
                flush();
                out.push_back(text.substr(i, close - i + 1));
                i = close;
                continue;
            }
        }
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c) && c != '_' && c != '-') {
            flush();
            out.push_back(std::string(1, static_cast<char>(c)));
        } else {
            cur.push_back(static_cast<char>(c));
        }
    }
    flush();
    return out;
}

TokenizerSpec TokenizerSpec::build(const std::vector<std::string>& corpus_lines,
                                   size_t vocab_budget) {
    if (corpus_lines.empty()) throw ValidationError("build_tokenizer: empty corpus");
    std::map<std::string, int64_t> freq;
    for (const auto& line : corpus_lines)
        for (auto& w : split_words(line)) ++freq[w];

    const auto& specials = special_strings();
    if (vocab_budget < specials.size())
        throw ValidationError("build_tokenizer: vocab budget below special-token count");

    std::vector<std::pair<std::string, int64_t>> ranked;
    ranked.reserve(freq.size());
    for (auto& [w, c] : freq) {
        if (std::find(specials.begin(), specials.end(), w) == specials.end())
            ranked.emplace_back(w, c);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> vocab = specials;
    for (const auto& [w, c] : ranked) {
        if (vocab.size() >= vocab_budget) break;
        vocab.push_back(w);
    }
    return TokenizerSpec(std::move(vocab));
}

int TokenizerSpec::token_id(const std::string& token) const {
    auto it = lookup_.find(token);
    return it == lookup_.end() ? kUnk : it->second;
}

const std::string& TokenizerSpec::token(int id) const {
    if (id < 0 || id >= static_cast<int>(vocab_.size()))
        throw ValidationError("token: id " + std::to_string(id) + " out of range");
    return vocab_[static_cast<size_t>(id)];
}

std::vector<int> TokenizerSpec::encode(const std::string& text, bool add_bos) const {
    std::vector<int> ids;
    if (add_bos) ids.push_back(kBos);
    for (const auto& w : split_words(text)) ids.push_back(token_id(w));
    return ids;
}

std::string TokenizerSpec::decode(const std::vector<int>& ids, bool keep_specials) const {
    std::string out;
    for (int id : ids) {
        const std::string& t = token(id);
        if (!keep_specials && id < kNumSpecials) continue;
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

uint64_t TokenizerSpec::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : vocab_) {
        h = fnv1a(t, h);
        h = fnv1a("\x1f", 1, h);
    }
    return h;
}

std::string TokenizerSpec::to_json() const {
    json j;
    j["vocab"] = vocab_;
    j["size_N"] = vocab_.size();
    j["special_tokens"] = {{"pad", kPad}, {"bos", kBos}, {"eos", kEos}, {"unk", kUnk}, {"sep", kSep}};
    return j.dump(2);
}

TokenizerSpec TokenizerSpec::from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    std::vector<std::string> vocab = j.at("vocab").get<std::vector<std::string>>();
    if (vocab.size() < static_cast<size_t>(kNumSpecials) ||
        !std::equal(special_strings().begin(), special_strings().end(), vocab.begin()))
        throw ValidationError("TokenizerSpec: special tokens must occupy the reserved ids");
    return TokenizerSpec(std::move(vocab));
}

void TokenizerSpec::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write tokenizer to " + path);
    f << to_json();
}

TokenizerSpec TokenizerSpec::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot read tokenizer from " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

}  // namespace kdcot
