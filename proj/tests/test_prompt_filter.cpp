#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "promptaug/errors.hpp"
#include "promptaug/prompt_filter.hpp"

using namespace promptaug;

namespace {

struct Fixture {
    Vocabulary vocab;
    DecoderLM lm;
    PromptTemplate tmpl;
    SplitSample s_train;
    SplitSample s_eval;
    SoftPrompt sp;

    static Fixture make(size_t train_pairs = 8, size_t eval_pairs = 3) {
        std::vector<std::string> colors = {"red",  "blue", "green", "black", "white",
                                           "gray", "pink", "tan",   "gold",  "teal"};
        std::vector<std::string> nouns = {"box", "cup", "pot", "pan", "jar",
                                          "urn", "bin", "tub", "mug", "keg"};
        std::vector<std::string> corpus = {"Document: Query: please generate query for document"};
        auto doc_of = [&](size_t i) {
            return "the " + colors[i % 10] + " " + nouns[(i * 3 + 1) % 10] + " is in the hall";
        };
        auto query_of = [&](size_t i) {
            return "where is the " + colors[i % 10] + " " + nouns[(i * 3 + 1) % 10];
        };
        for (size_t i = 0; i < train_pairs + eval_pairs; ++i) {
            corpus.push_back(doc_of(i));
            corpus.push_back(query_of(i));
        }
        Vocabulary v = Vocabulary::build(corpus, 1);
        LMConfig cfg;
        cfg.num_layers = 1;
        cfg.d_model = 16;
        cfg.num_heads = 4;
        cfg.context_length = 160;
        cfg.vocab_size = v.size();
        DecoderLM lm(cfg, 21);
        lm.set_trainable(false);

        Fixture f{v, std::move(lm), PromptTemplate{}, {}, {}, {}};
        for (size_t i = 0; i < train_pairs; ++i) {
            f.s_train.pairs.push_back(
                {"q" + std::to_string(i), "d" + std::to_string(i), query_of(i), doc_of(i)});
        }
        f.s_train.distinct_queries = static_cast<int>(train_pairs);
        for (size_t i = train_pairs; i < train_pairs + eval_pairs; ++i) {
            f.s_eval.pairs.push_back(
                {"q" + std::to_string(i), "d" + std::to_string(i), query_of(i), doc_of(i)});
        }
        f.s_eval.distinct_queries = static_cast<int>(eval_pairs);
        f.sp = init_soft_prompt("please generate query for document", 4, f.lm, f.vocab);
        return f;
    }
};

}  // namespace

TEST_CASE("sample_groups: distinctness, exhaustive small case, feasibility error") {
    Fixture f = Fixture::make(8, 2);

    // 50 requested from C(8,2)=28 is infeasible.
    CHECK_THROWS_AS(sample_groups(f.s_train, 2, 50, 1), ConfigError);

    auto groups = sample_groups(f.s_train, 2, 20, 7);
    CHECK(groups.size() == 20);
    std::set<std::vector<size_t>> seen;
    for (const auto& g : groups) {
        CHECK(g.pair_indices.size() == 2);
        CHECK(g.pair_indices[0] != g.pair_indices[1]);
        auto key = g.pair_indices;
        std::sort(key.begin(), key.end());
        CHECK(seen.insert(key).second);  // distinct as sets
    }
    for (size_t i = 0; i < groups.size(); ++i) {
        CHECK(groups[i].sampling_index == static_cast<int>(i));
    }

    // M=1 over 3 pairs with num_groups=3: exactly the three singletons.
    SplitSample three;
    three.pairs = {f.s_train.pairs[0], f.s_train.pairs[1], f.s_train.pairs[2]};
    three.distinct_queries = 3;
    auto singles = sample_groups(three, 1, 3, 9);
    std::set<size_t> indices;
    for (const auto& g : singles) indices.insert(g.pair_indices[0]);
    CHECK(indices == std::set<size_t>{0, 1, 2});
}

TEST_CASE("score_group: single-instance mean, purity, hand-summed oracle") {
    Fixture f = Fixture::make(8, 3);
    auto groups = sample_groups(f.s_train, 2, 4, 3);
    const int max_tokens = f.lm.config().context_length - f.sp.l_s;

    // Eval set of one pair: mean equals that instance's loss.
    SplitSample one;
    one.pairs = {f.s_eval.pairs[0]};
    one.distinct_queries = 1;
    GroupScore s1 = score_group(groups[0], f.s_train, one, f.sp, f.lm, f.vocab, f.tmpl);
    const TuningInstance inst = build_instance(groups[0].pairs(f.s_train), f.s_eval.pairs[0],
                                               f.vocab, f.tmpl, max_tokens);
    const double direct = f.lm.loss(&f.sp.theta, inst.seq.ids, inst.seq.loss_mask, nullptr).item();
    CHECK(s1.mean_loss == doctest::Approx(direct).epsilon(1e-6));
    CHECK(s1.num_eval_instances == 1);

    // Purity: identical groups score identically; theta and phi untouched.
    const auto phi_before = f.lm.snapshot();
    const std::vector<float> theta_before(f.sp.theta.values().begin(),
                                          f.sp.theta.values().end());
    GroupScore a = score_group(groups[1], f.s_train, f.s_eval, f.sp, f.lm, f.vocab, f.tmpl);
    GroupScore b = score_group(groups[1], f.s_train, f.s_eval, f.sp, f.lm, f.vocab, f.tmpl, 2);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(f.lm.snapshot() == phi_before);
    CHECK(std::equal(theta_before.begin(), theta_before.end(), f.sp.theta.values().begin()));

    // Hand-summed oracle over 3 eval pairs.
    double total = 0.0;
    for (const PairRef& target : f.s_eval.pairs) {
        const TuningInstance ti = build_instance(groups[2].pairs(f.s_train), target, f.vocab,
                                                 f.tmpl, max_tokens);
        total += f.lm.loss(&f.sp.theta, ti.seq.ids, ti.seq.loss_mask, nullptr).item();
    }
    GroupScore c = score_group(groups[2], f.s_train, f.s_eval, f.sp, f.lm, f.vocab, f.tmpl);
    CHECK(c.mean_loss == doctest::Approx(total / 3.0).epsilon(1e-6));
}

TEST_CASE("select_best/select_worst: argmin, tie-break, brute-force equality") {
    auto score = [](int idx, double loss) {
        GroupScore s;
        s.group_index = idx;
        s.mean_loss = loss;
        s.num_eval_instances = 3;
        return s;
    };
    {
        std::vector<GroupScore> scores = {score(0, 2.0), score(1, 1.5), score(2, 3.0)};
        CHECK(select_best(scores) == 1);
        CHECK(select_worst(scores) == 2);
    }
    {
        std::vector<GroupScore> scores = {score(0, 1.0), score(1, 1.0)};
        CHECK(select_best(scores) == 0);  // tie goes to the lower sampling index
        CHECK(select_worst(scores) == 0);
    }
    {
        std::vector<GroupScore> scores;
        CHECK_THROWS_AS(select_best(scores), ContractError);
    }
    {
        std::vector<GroupScore> scores = {score(0, 1.0), score(1, 0.5)};
        scores[1].disqualified = true;
        CHECK(select_best(scores) == 0);  // disqualified groups never win
    }

    // Permutation invariance: scoring order never changes the winner because
    // the tie-break rides on the sampling index carried with each group.
    {
        std::vector<GroupScore> scores = {score(3, 2.0), score(0, 1.25), score(2, 1.25),
                                          score(1, 4.0)};
        const size_t chosen = select_best(scores);
        CHECK(scores[chosen].group_index == 0);
        std::vector<GroupScore> shuffled = {scores[2], scores[0], scores[3], scores[1]};
        CHECK(shuffled[select_best(shuffled)].group_index == 0);
    }
}

TEST_CASE("selection equals exhaustive rescoring over the sampled candidates") {
    Fixture f = Fixture::make(7, 3);
    auto groups = sample_groups(f.s_train, 2, 10, 17);
    std::vector<GroupScore> scores;
    for (const auto& g : groups) {
        scores.push_back(score_group(g, f.s_train, f.s_eval, f.sp, f.lm, f.vocab, f.tmpl));
    }
    const size_t chosen = select_best(scores);
    const size_t worst = select_worst(scores);

    // Brute-force oracle: direct scan of all candidate means.
    size_t oracle_best = 0, oracle_worst = 0;
    for (size_t i = 1; i < scores.size(); ++i) {
        if (scores[i].mean_loss < scores[oracle_best].mean_loss) oracle_best = i;
        if (scores[i].mean_loss > scores[oracle_worst].mean_loss) oracle_worst = i;
    }
    CHECK(chosen == oracle_best);
    CHECK(worst == oracle_worst);
    CHECK(scores[chosen].mean_loss ==
          std::min_element(scores.begin(), scores.end(),
                           [](const GroupScore& a, const GroupScore& b) {
                               return a.mean_loss < b.mean_loss;
                           })
              ->mean_loss);
}
