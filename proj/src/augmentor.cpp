#include "promptaug/augmentor.hpp"

#include <algorithm>

#include "promptaug/errors.hpp"
#include "promptaug/rng.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

namespace {

// Prompt ids: example pairs rendered in full, then the target document block
// up to and including the query keyword. The document is right-truncated so
// prompt + generation budget fits the context.
std::vector<int> generation_prompt(const std::string& doc_text,
                                   std::span<const PairRef> example_pairs, int l_s,
                                   int max_new_tokens, const DecoderLM& lm,
                                   const Vocabulary& vocab, const PromptTemplate& tmpl) {
    const std::vector<int> doc_kw = vocab.encode(tmpl.doc_keyword);
    const std::vector<int> query_kw = vocab.encode(tmpl.query_keyword);

    // Mirror the tuning-instance serialization exactly: contiguous
    // "document ... query ..." blocks with no separators.
    std::vector<int> fixed;
    for (const PairRef& ex : example_pairs) {
        const auto ids = vocab.encode(tmpl.render_pair(ex.doc_text, ex.query_text));
        fixed.insert(fixed.end(), ids.begin(), ids.end());
    }
    fixed.insert(fixed.end(), doc_kw.begin(), doc_kw.end());

    std::vector<int> doc_ids = vocab.encode(doc_text);
    const size_t budget = static_cast<size_t>(lm.config().context_length);
    const size_t reserved =
        static_cast<size_t>(l_s) + fixed.size() + query_kw.size() +
        static_cast<size_t>(max_new_tokens) + 1;
    if (reserved >= budget) {
        throw LengthError("generate_weak_query: prompt skeleton of " + std::to_string(reserved) +
                          " tokens leaves no room for the document in context " +
                          std::to_string(budget));
    }
    const size_t doc_room = budget - reserved;
    if (doc_ids.size() > doc_room) doc_ids.resize(doc_room);

    std::vector<int> prompt = std::move(fixed);
    prompt.insert(prompt.end(), doc_ids.begin(), doc_ids.end());
    prompt.insert(prompt.end(), query_kw.begin(), query_kw.end());
    return prompt;
}

// Mirror of the one-line "Query: ..." row: the continuation ends at <eos> or
// wherever the next template keyword would start a new block.
std::string decode_weak_query(std::span<const int> emitted, const Vocabulary& vocab,
                              const PromptTemplate& tmpl) {
    const std::vector<int> doc_kw = vocab.encode(tmpl.doc_keyword);
    const std::vector<int> query_kw = vocab.encode(tmpl.query_keyword);
    std::vector<int> cut;
    for (int id : emitted) {
        if (std::find(doc_kw.begin(), doc_kw.end(), id) != doc_kw.end()) break;
        if (std::find(query_kw.begin(), query_kw.end(), id) != query_kw.end()) break;
        cut.push_back(id);
    }
    return vocab.decode(cut);
}

}  // namespace

std::optional<WeakQueryResult> generate_weak_query(const std::string& doc_text,
                                                   const SoftPrompt& sp,
                                                   std::span<const PairRef> example_pairs,
                                                   const GenerationConfig& cfg,
                                                   const DecoderLM& lm, const Vocabulary& vocab,
                                                   const PromptTemplate& tmpl,
                                                   uint64_t retry_seed) {
    const std::vector<int> prompt = generation_prompt(doc_text, example_pairs, sp.l_s,
                                                      cfg.max_new_tokens, lm, vocab, tmpl);

    const auto ids = lm.generate(&sp.theta, prompt, cfg);
    std::string query = decode_weak_query(ids, vocab, tmpl);
    if (!query.empty()) return WeakQueryResult{query, false};

    // One seeded sampling retry for empty output.
    GenerationConfig retry = cfg;
    retry.mode = GenerationConfig::Mode::kSample;
    retry.temperature = 1.0f;
    retry.top_k = 16;
    retry.seed = retry_seed;
    query = decode_weak_query(lm.generate(&sp.theta, prompt, retry), vocab, tmpl);
    if (!query.empty()) return WeakQueryResult{query, true};
    return std::nullopt;
}

WeakDataBuild build_weak_dataset(std::span<const std::pair<std::string, std::string>> unlabeled,
                                 const SoftPrompt& sp, std::span<const PairRef> example_pairs,
                                 const std::string& group_id, const AugmentorConfig& cfg,
                                 const DecoderLM& lm, const Vocabulary& vocab,
                                 const PromptTemplate& tmpl) {
    if (unlabeled.empty()) throw ConfigError("build_weak_dataset: empty unlabeled pool");

    Rng rng(mix_seed(cfg.seed, 0x7765616bULL));
    const size_t take = std::min(cfg.large_cap, unlabeled.size());
    auto chosen = rng.sample_without_replacement(unlabeled.size(), take);
    std::sort(chosen.begin(), chosen.end());

    const std::string prompt_fp = hex64(sp.fingerprint());
    std::vector<std::optional<WeakPair>> slots(take);
    parallel_for(take, cfg.threads, [&](size_t i) {
        const auto& [doc_id, doc_text] = unlabeled[chosen[i]];
        const uint64_t retry_seed = mix_seed(cfg.seed, 0x7265747279ULL, i);
        const auto result = generate_weak_query(doc_text, sp, example_pairs, cfg.generation, lm,
                                                vocab, tmpl, retry_seed);
        if (!result.has_value()) return;
        WeakPair pair;
        pair.doc_id = doc_id;
        pair.doc_text = doc_text;
        pair.query = result->query;
        pair.prompt_fingerprint = prompt_fp;
        pair.group_id = group_id;
        pair.seed = result->used_sampling_retry ? retry_seed : 0;
        pair.used_sampling_retry = result->used_sampling_retry;
        slots[i] = std::move(pair);
    });

    WeakDataBuild build;
    build.sampled_docs = take;
    for (auto& slot : slots) {
        if (slot.has_value()) {
            build.w_large.pairs.push_back(std::move(*slot));
        } else {
            ++build.failures;
        }
    }
    if (build.w_large.pairs.empty()) {
        throw Error("build_weak_dataset: every generation failed");
    }
    std::sort(build.w_large.pairs.begin(), build.w_large.pairs.end(),
              [](const WeakPair& a, const WeakPair& b) { return a.doc_id < b.doc_id; });

    // W_small: uniform subsample of W_large, same canonical order.
    Rng small_rng(mix_seed(cfg.seed, 0x736d616c6cULL));
    const size_t small_take = std::min(cfg.small_size, build.w_large.pairs.size());
    auto small_idx =
        small_rng.sample_without_replacement(build.w_large.pairs.size(), small_take);
    std::sort(small_idx.begin(), small_idx.end());
    for (size_t idx : small_idx) build.w_small.pairs.push_back(build.w_large.pairs[idx]);

    nlohmann::json prov{{"prompt_fingerprint", prompt_fp},
                        {"group_id", group_id},
                        {"generation", cfg.generation.to_json()},
                        {"seed", cfg.seed},
                        {"large_cap", cfg.large_cap},
                        {"small_size", cfg.small_size},
                        {"sampled_docs", build.sampled_docs},
                        {"failures", build.failures},
                        {"w_large_size", build.w_large.pairs.size()},
                        {"w_small_size", build.w_small.pairs.size()}};
    build.w_large.provenance = prov;
    build.w_small.provenance = std::move(prov);
    return build;
}

}  // namespace promptaug
