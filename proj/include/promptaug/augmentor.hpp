#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptaug/prompt_filter.hpp"
#include "promptaug/soft_prompt.hpp"
#include "promptaug/weak_data.hpp"

namespace promptaug {

// One weak query for one document: soft prompt + rendered example pairs +
// "Document: {doc} Query:" and an autoregressive continuation. Greedy output
// that comes back empty is retried once with seeded sampling; a still-empty
// result reports failure (the pair is dropped and counted by the caller).
struct WeakQueryResult {
    std::string query;
    bool used_sampling_retry = false;
};

std::optional<WeakQueryResult> generate_weak_query(const std::string& doc_text,
                                                   const SoftPrompt& sp,
                                                   std::span<const PairRef> example_pairs,
                                                   const GenerationConfig& cfg,
                                                   const DecoderLM& lm, const Vocabulary& vocab,
                                                   const PromptTemplate& tmpl,
                                                   uint64_t retry_seed);

struct AugmentorConfig {
    GenerationConfig generation;
    size_t large_cap = 100000;
    size_t small_size = 5000;
    uint64_t seed = 0;
    int threads = 1;
};

struct WeakDataBuild {
    WeakDataset w_large;
    WeakDataset w_small;
    size_t sampled_docs = 0;
    size_t failures = 0;
};

// Samples min(large_cap, |unlabeled|) documents without replacement,
// generates a weak query for each, and subsamples W_small from W_large.
// Output order is canonicalized by doc_id so worker parallelism never changes
// the artifact.
WeakDataBuild build_weak_dataset(std::span<const std::pair<std::string, std::string>> unlabeled,
                                 const SoftPrompt& sp, std::span<const PairRef> example_pairs,
                                 const std::string& group_id, const AugmentorConfig& cfg,
                                 const DecoderLM& lm, const Vocabulary& vocab,
                                 const PromptTemplate& tmpl);

}  // namespace promptaug
