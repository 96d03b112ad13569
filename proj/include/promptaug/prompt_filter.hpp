#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/soft_prompt.hpp"

namespace promptaug {

// A candidate set of M example pairs, identified by its indices into
// S_train^X. sampling_index is the draw order and doubles as the tie-breaker.
struct ExampleGroup {
    std::vector<size_t> pair_indices;
    int sampling_index = 0;

    std::vector<PairRef> pairs(const SplitSample& s_train) const;
};

struct GroupScore {
    int group_index = 0;
    double mean_loss = 0.0;
    int num_eval_instances = 0;  // NumPair(Y)
    int skipped = 0;             // instances that overflowed the context
    bool disqualified = false;   // more than 10% skipped
};

// num_groups distinct M-subsets of S_train^X, de-duplicated as sets with
// bounded resampling.
std::vector<ExampleGroup> sample_groups(const SplitSample& s_train, int m, int num_groups,
                                        uint64_t seed);

// Mean instance loss of this group over the whole eval split, theta* and the
// LM both frozen. Side-effect free.
GroupScore score_group(const ExampleGroup& group, const SplitSample& s_train,
                       const SplitSample& s_eval, const SoftPrompt& sp, const DecoderLM& lm,
                       const Vocabulary& vocab, const PromptTemplate& tmpl, int threads = 1);

// Argmin (argmax for worst) of mean loss over qualified groups; ties go to the
// lowest sampling index.
size_t select_best(std::span<const GroupScore> scores);
size_t select_worst(std::span<const GroupScore> scores);

struct FilterReport {
    std::vector<ExampleGroup> groups;
    std::vector<GroupScore> scores;
    size_t chosen = 0;
    std::string mode;  // "best" or "worst"

    nlohmann::json to_json(const SplitSample& s_train) const;
};

}  // namespace promptaug
