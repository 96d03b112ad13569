#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/lm.hpp"
#include "promptaug/splits.hpp"

namespace promptaug {

// The canonical pair template. The serialized form of one pair is
// "Document: {text}\nQuery: {text}\n"; under the word analyzer the keywords
// reduce to single "document"/"query" tokens that delimit the blocks.
struct PromptTemplate {
    std::string doc_keyword = "Document:";
    std::string query_keyword = "Query:";

    std::string render_pair(const std::string& doc, const std::string& query) const {
        return doc_keyword + " " + doc + "\n" + query_keyword + " " + query + "\n";
    }
};

// Learnable prefix: l_s virtual-token embeddings plus the record of how they
// were initialized and which frozen LM they belong to.
struct SoftPrompt {
    Tensor theta;  // [l_s x d_model]
    int l_s = 0;
    std::string init_hard_prompt;
    std::vector<int> init_token_ids;
    uint64_t lm_fingerprint = 0;

    uint64_t fingerprint() const;

    void save(const std::string& path) const;
    static SoftPrompt load(const std::string& path);
};

// Hard prompt tokens repeated cyclically to exactly l_s positions; theta rows
// are copies of the LM's embedding rows for those ids.
SoftPrompt init_soft_prompt(const std::string& hard_prompt, int l_s, const DecoderLM& lm,
                            const Vocabulary& vocab);

// One training instance t_j: example pairs then the target pair, serialized
// through the template; the loss mask covers exactly the target-query tokens
// plus the final <eos>.
struct TuningInstance {
    MaskedSequence seq;
    std::string target_query_id;
    std::string target_doc_id;
    std::vector<std::string> example_query_ids;
};

// max_tokens is the token budget after the soft prompt is accounted for.
// Documents are right-truncated (longest first) until the instance fits;
// queries are never truncated.
TuningInstance build_instance(std::span<const PairRef> examples, const PairRef& target,
                              const Vocabulary& vocab, const PromptTemplate& tmpl,
                              int max_tokens);

struct TuningConfig {
    int x = 50;
    int m = 2;
    float learning_rate = 3e-2f;
    float weight_decay = 0.01f;
    int batch_size = 1;
    int max_epochs = 100;
    int patience = 5;
    uint64_t seed = 0;
    int threads = 1;

    nlohmann::json to_json() const;
    static TuningConfig from_json(const nlohmann::json& j);
};

struct TuningReport {
    std::vector<double> train_loss;       // one entry per trained epoch
    std::vector<double> eval_perplexity;  // index 0 is the pre-tuning evaluation
    int best_epoch = 0;                   // index into eval_perplexity
    bool stopped_early = false;

    nlohmann::json to_json() const;
};

// The tuning loop of the prompt stage: per epoch, sample M example pairs,
// take one optimizer step on theta per remaining training pair, then evaluate
// perplexity on the eval split with per-instance example sampling seeded by
// (epoch, instance). Returns theta from the best epoch.
std::pair<SoftPrompt, TuningReport> tune(const DecoderLM& lm, const SoftPrompt& initial,
                                         const SplitSample& s_train, const SplitSample& s_eval,
                                         const Vocabulary& vocab, const PromptTemplate& tmpl,
                                         const TuningConfig& cfg);

void export_prompt_embeddings(const SoftPrompt& sp, const std::string& path);

}  // namespace promptaug
