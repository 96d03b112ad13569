#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace promptaug {

// Word-level vocabulary over the shared analyzer. Ids 0..3 are the fixed
// specials; real tokens follow in (frequency desc, token asc) order so two
// builds over the same corpus assign identical ids.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumSpecials = 4;

    Vocabulary() = default;

    static Vocabulary build(std::span<const std::string> corpus_texts, int min_freq);

    int id(const std::string& token) const;

    const std::string& token(int id) const;

    // Analyzer tokens of `text` mapped to ids; no specials added.
    std::vector<int> encode(std::string_view text) const;

    // Words joined by spaces; special ids are skipped.
    std::string decode(std::span<const int> ids) const;

    int size() const { return static_cast<int>(id_to_token_.size()); }

    uint64_t fingerprint() const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

  private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

}  // namespace promptaug
