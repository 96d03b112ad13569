#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace promptaug {

// One generated (document, weak query) pair plus enough provenance to
// regenerate it: the soft prompt and example group that produced it and the
// seed of the sampling retry (0 when greedy succeeded).
struct WeakPair {
    std::string doc_id;
    std::string doc_text;
    std::string query;
    std::string prompt_fingerprint;
    std::string group_id;
    uint64_t seed = 0;
    bool used_sampling_retry = false;
};

struct WeakDataset {
    std::vector<WeakPair> pairs;
    nlohmann::json provenance;

    void save_jsonl(const std::string& path) const;
    static WeakDataset load_jsonl(const std::string& path);
};

}  // namespace promptaug
