#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "promptaug/augmentor.hpp"
#include "promptaug/errors.hpp"
#include "promptaug/util.hpp"

using namespace promptaug;

namespace {

struct Fixture {
    Vocabulary vocab;
    DecoderLM lm;
    PromptTemplate tmpl;
    SoftPrompt sp;
    std::vector<PairRef> group;

    // A degenerate LM whose head always emits `forced_token` (or <eos> when
    // the token is "<eos>"), built by pinning the final layer norm to a
    // constant.
    static Fixture make(const std::string& forced_token) {
        std::vector<std::string> corpus = {
            "Document: Query: please generate query for document",
            "alpha beta gamma delta epsilon zeta kappa sigma"};
        Vocabulary v = Vocabulary::build(corpus, 1);
        LMConfig cfg;
        cfg.num_layers = 1;
        cfg.d_model = 16;
        cfg.num_heads = 4;
        cfg.context_length = 96;
        cfg.vocab_size = v.size();
        DecoderLM lm(cfg, 5);
        const int target =
            forced_token == "<eos>" ? Vocabulary::kEos : v.id(forced_token);
        for (Parameter& p : lm.parameters()) {
            if (p.name == "lnf.gain") {
                std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
            } else if (p.name == "lnf.bias") {
                std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
                p.tensor.data()[0] = 1.0f;
            } else if (p.name == "out_proj") {
                std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
                p.tensor.data()[static_cast<size_t>(target)] = 10.0f;
            }
        }
        lm.set_trainable(false);
        Fixture f{v, std::move(lm), PromptTemplate{}, {}, {}};
        f.sp = init_soft_prompt("please generate query for document", 4, f.lm, f.vocab);
        f.group = {{"q0", "d0", "beta gamma", "alpha beta gamma"}};
        return f;
    }
};

std::vector<std::pair<std::string, std::string>> pool(size_t n) {
    std::vector<std::pair<std::string, std::string>> docs;
    for (size_t i = 0; i < n; ++i) {
        docs.emplace_back("doc" + std::to_string(100 + i), "alpha beta gamma delta epsilon");
    }
    return docs;
}

}  // namespace

TEST_CASE("generate_weak_query: deterministic greedy output and empty-output path") {
    // Degenerate LM that always emits "gamma".
    Fixture f = Fixture::make("gamma");
    GenerationConfig cfg;
    cfg.max_new_tokens = 4;

    auto r1 = generate_weak_query("alpha beta", f.sp, f.group, cfg, f.lm, f.vocab, f.tmpl, 1);
    REQUIRE(r1.has_value());
    CHECK(r1->query == "gamma gamma gamma gamma");
    CHECK_FALSE(r1->used_sampling_retry);

    // Greedy determinism: same document twice, identical queries.
    auto r2 = generate_weak_query("alpha beta", f.sp, f.group, cfg, f.lm, f.vocab, f.tmpl, 2);
    REQUIRE(r2.has_value());
    CHECK(r1->query == r2->query);

    // Degenerate LM that always emits <eos>: greedy comes back empty, the
    // sampling retry also ends at <eos> immediately, so generation fails.
    Fixture eos = Fixture::make("<eos>");
    auto r3 = generate_weak_query("alpha beta", eos.sp, eos.group, cfg, eos.lm, eos.vocab,
                                  eos.tmpl, 3);
    CHECK_FALSE(r3.has_value());
}

TEST_CASE("template keyword in the continuation truncates the weak query") {
    // Force the head to emit the "document" keyword: the continuation is cut
    // before it, leaving an empty query, so generation falls back to retry.
    Fixture fd = Fixture::make("document");
    GenerationConfig cfg;
    cfg.max_new_tokens = 3;
    auto r = generate_weak_query("alpha beta", fd.sp, fd.group, cfg, fd.lm, fd.vocab, fd.tmpl,
                                 11);
    // retry samples from the same degenerate distribution (all mass on the
    // keyword), so the pair is dropped
    CHECK_FALSE(r.has_value());
}

TEST_CASE("build_weak_dataset: caps, subsets, failure accounting, determinism") {
    Fixture f = Fixture::make("delta");
    AugmentorConfig ac;
    ac.generation.max_new_tokens = 3;
    ac.large_cap = 100000;
    ac.small_size = 4;
    ac.seed = 77;

    // Pool smaller than the cap: every document is attempted.
    const auto docs = pool(10);
    WeakDataBuild build = build_weak_dataset(docs, f.sp, f.group, "g0", ac, f.lm, f.vocab,
                                             f.tmpl);
    CHECK(build.sampled_docs == 10);
    CHECK(build.w_large.pairs.size() == 10);
    CHECK(build.failures == 0);
    CHECK(build.w_small.pairs.size() == 4);

    // W_small is a subset of W_large by doc_id and content.
    std::set<std::string> large_ids;
    for (const WeakPair& p : build.w_large.pairs) large_ids.insert(p.doc_id);
    for (const WeakPair& p : build.w_small.pairs) {
        CHECK(large_ids.count(p.doc_id) == 1);
        const auto it = std::find_if(build.w_large.pairs.begin(), build.w_large.pairs.end(),
                                     [&](const WeakPair& lp) { return lp.doc_id == p.doc_id; });
        REQUIRE(it != build.w_large.pairs.end());
        CHECK(it->query == p.query);
    }

    // Canonical doc_id order regardless of worker count.
    CHECK(std::is_sorted(build.w_large.pairs.begin(), build.w_large.pairs.end(),
                         [](const WeakPair& a, const WeakPair& b) {
                             return a.doc_id < b.doc_id;
                         }));
    AugmentorConfig ac4 = ac;
    ac4.threads = 4;
    WeakDataBuild build4 = build_weak_dataset(docs, f.sp, f.group, "g0", ac4, f.lm, f.vocab,
                                              f.tmpl);
    REQUIRE(build4.w_large.pairs.size() == build.w_large.pairs.size());
    for (size_t i = 0; i < build.w_large.pairs.size(); ++i) {
        CHECK(build4.w_large.pairs[i].doc_id == build.w_large.pairs[i].doc_id);
        CHECK(build4.w_large.pairs[i].query == build.w_large.pairs[i].query);
    }

    // Cap smaller than the pool.
    AugmentorConfig capped = ac;
    capped.large_cap = 6;
    WeakDataBuild small = build_weak_dataset(docs, f.sp, f.group, "g0", capped, f.lm, f.vocab,
                                             f.tmpl);
    CHECK(small.sampled_docs == 6);
    CHECK(small.w_large.pairs.size() + small.failures == 6);

    // Every pair carries the provenance fingerprints.
    for (const WeakPair& p : build.w_large.pairs) {
        CHECK(p.prompt_fingerprint == hex64(f.sp.fingerprint()));
        CHECK(p.group_id == "g0");
    }

    // All-eos degenerate model: every generation fails.
    Fixture eos = Fixture::make("<eos>");
    CHECK_THROWS_AS(build_weak_dataset(docs, eos.sp, eos.group, "g0", ac, eos.lm, eos.vocab,
                                       eos.tmpl),
                    Error);
}

TEST_CASE("weak dataset jsonl round-trip") {
    Fixture f = Fixture::make("epsilon");
    AugmentorConfig ac;
    ac.generation.max_new_tokens = 2;
    ac.small_size = 3;
    ac.seed = 5;
    WeakDataBuild build = build_weak_dataset(pool(5), f.sp, f.group, "g1", ac, f.lm, f.vocab,
                                             f.tmpl);

    const auto tmp = std::filesystem::temp_directory_path() / "promptaug_weak.jsonl";
    build.w_large.save_jsonl(tmp.string());
    const WeakDataset loaded = WeakDataset::load_jsonl(tmp.string());
    REQUIRE(loaded.pairs.size() == build.w_large.pairs.size());
    for (size_t i = 0; i < loaded.pairs.size(); ++i) {
        CHECK(loaded.pairs[i].doc_id == build.w_large.pairs[i].doc_id);
        CHECK(loaded.pairs[i].query == build.w_large.pairs[i].query);
        CHECK(loaded.pairs[i].group_id == build.w_large.pairs[i].group_id);
    }
    CHECK(loaded.provenance.at("group_id") == "g1");
    std::filesystem::remove(tmp);
    std::filesystem::remove(tmp.string() + ".provenance.json");
}
