#include "promptaug/vocab.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

#include "promptaug/errors.hpp"
#include "promptaug/text.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus_texts, int min_freq) {
    if (corpus_texts.empty()) throw ConfigError("build_vocab: empty corpus");
    std::unordered_map<std::string, int64_t> freq;
    bool any_token = false;
    for (const std::string& text : corpus_texts) {
        for (std::string& tok : analyze(text)) {
            ++freq[tok];
            any_token = true;
        }
    }
    if (!any_token) throw ConfigError("build_vocab: corpus has no tokens");

    // Frequency descending, then lexicographic; drop below min_freq.
    std::vector<std::pair<std::string, int64_t>> ordered(freq.begin(), freq.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.id_to_token_ = kSpecials;
    for (const auto& [tok, count] : ordered) {
        if (count < min_freq) continue;
        v.id_to_token_.push_back(tok);
    }
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
        v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int tid) const {
    if (tid < 0 || tid >= size()) {
        throw IndexError("vocabulary: id " + std::to_string(tid) + " outside " +
                         std::to_string(size()) + " entries");
    }
    return id_to_token_[static_cast<size_t>(tid)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const std::string& tok : analyze(text)) ids.push_back(id(tok));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    for (int tid : ids) {
        if (tid < kNumSpecials) continue;
        if (!out.empty()) out.push_back(' ');
        out += token(tid);
    }
    return out;
}

uint64_t Vocabulary::fingerprint() const {
    Fnv1a h;
    for (const std::string& tok : id_to_token_) {
        h.update(tok);
        h.update("\x1f");
    }
    return h.digest();
}

nlohmann::json Vocabulary::to_json() const {
    return nlohmann::json{{"analyzer", kAnalyzerVersion}, {"tokens", id_to_token_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (j.at("analyzer").get<std::string>() != kAnalyzerVersion) {
        throw ConfigError("vocabulary: analyzer mismatch");
    }
    Vocabulary v;
    v.id_to_token_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.id_to_token_.size() < kNumSpecials ||
        !std::equal(kSpecials.begin(), kSpecials.end(), v.id_to_token_.begin())) {
        throw ConfigError("vocabulary: malformed specials block");
    }
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
        v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
    }
    return v;
}

}  // namespace promptaug
