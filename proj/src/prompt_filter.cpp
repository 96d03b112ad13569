#include "promptaug/prompt_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "promptaug/errors.hpp"
#include "promptaug/rng.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

std::vector<PairRef> ExampleGroup::pairs(const SplitSample& s_train) const {
    std::vector<PairRef> out;
    out.reserve(pair_indices.size());
    for (size_t idx : pair_indices) out.push_back(s_train.pairs.at(idx));
    return out;
}

namespace {

// C(n, m) saturating at a large cap; only used to validate feasibility.
uint64_t binomial_capped(uint64_t n, uint64_t m, uint64_t cap) {
    if (m > n) return 0;
    m = std::min(m, n - m);
    uint64_t result = 1;
    for (uint64_t i = 1; i <= m; ++i) {
        if (result > cap) return cap;
        result = result * (n - m + i) / i;
    }
    return std::min(result, cap);
}

}  // namespace

std::vector<ExampleGroup> sample_groups(const SplitSample& s_train, int m, int num_groups,
                                        uint64_t seed) {
    const size_t num_pairs = s_train.pairs.size();
    if (m < 1 || static_cast<size_t>(m) > num_pairs) {
        throw ConfigError("sample_groups: need 1 <= M <= NumPair, got M=" + std::to_string(m));
    }
    if (num_groups < 1) throw ConfigError("sample_groups: num_groups must be >= 1");
    const uint64_t distinct =
        binomial_capped(num_pairs, static_cast<uint64_t>(m), 1ULL << 62);
    if (static_cast<uint64_t>(num_groups) > distinct) {
        throw ConfigError("sample_groups: " + std::to_string(num_groups) +
                          " distinct groups requested but only " + std::to_string(distinct) +
                          " exist");
    }

    Rng rng(mix_seed(seed, 0x67726f7570ULL));
    std::vector<ExampleGroup> groups;
    std::set<std::vector<size_t>> seen;
    const uint64_t max_attempts = 1000 + 64ULL * static_cast<uint64_t>(num_groups);
    uint64_t attempts = 0;
    while (groups.size() < static_cast<size_t>(num_groups)) {
        if (++attempts > max_attempts) {
            throw ConfigError("sample_groups: could not draw " + std::to_string(num_groups) +
                              " distinct groups after " + std::to_string(attempts) +
                              " attempts");
        }
        auto idx = rng.sample_without_replacement(num_pairs, static_cast<size_t>(m));
        std::vector<size_t> key = idx;
        std::sort(key.begin(), key.end());
        if (!seen.insert(key).second) continue;  // set-level duplicate, resample
        ExampleGroup g;
        g.pair_indices = std::move(idx);
        g.sampling_index = static_cast<int>(groups.size());
        groups.push_back(std::move(g));
    }
    return groups;
}

GroupScore score_group(const ExampleGroup& group, const SplitSample& s_train,
                       const SplitSample& s_eval, const SoftPrompt& sp, const DecoderLM& lm,
                       const Vocabulary& vocab, const PromptTemplate& tmpl, int threads) {
    if (!lm.all_frozen()) throw ContractError("score_group: LM must be frozen");
    const std::vector<PairRef> examples = group.pairs(s_train);
    const int max_tokens = lm.config().context_length - sp.l_s;

    std::vector<double> nll(s_eval.pairs.size(), 0.0);
    std::vector<uint8_t> skipped(s_eval.pairs.size(), 0);
    parallel_for(s_eval.pairs.size(), threads, [&](size_t j) {
        try {
            const TuningInstance inst =
                build_instance(examples, s_eval.pairs[j], vocab, tmpl, max_tokens);
            nll[j] = lm.loss(&sp.theta, inst.seq.ids, inst.seq.loss_mask, nullptr).item();
        } catch (const LengthError&) {
            skipped[j] = 1;
        }
    });

    GroupScore score;
    score.group_index = group.sampling_index;
    score.num_eval_instances = static_cast<int>(s_eval.pairs.size());
    double total = 0.0;
    int scored = 0;
    for (size_t j = 0; j < s_eval.pairs.size(); ++j) {
        if (skipped[j]) {
            ++score.skipped;
            std::fprintf(stderr, "[prompt-filter] warning: group %d skipped eval pair %s\n",
                         group.sampling_index, s_eval.pairs[j].query_id.c_str());
        } else {
            total += nll[j];
            ++scored;
        }
    }
    score.disqualified = score.skipped * 10 > score.num_eval_instances;
    score.mean_loss = scored > 0 ? total / static_cast<double>(scored)
                                 : std::numeric_limits<double>::infinity();
    return score;
}

namespace {

size_t select_extreme(std::span<const GroupScore> scores, bool want_max) {
    if (scores.empty()) throw ContractError("select: empty score list");
    size_t chosen = scores.size();
    for (size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].disqualified) continue;
        if (chosen == scores.size()) {
            chosen = i;
            continue;
        }
        const bool better = want_max ? scores[i].mean_loss > scores[chosen].mean_loss
                                     : scores[i].mean_loss < scores[chosen].mean_loss;
        const bool tie = scores[i].mean_loss == scores[chosen].mean_loss;
        if (better ||
            (tie && scores[i].group_index < scores[chosen].group_index)) {
            chosen = i;
        }
    }
    if (chosen == scores.size()) throw ContractError("select: every group was disqualified");
    return chosen;
}

}  // namespace

size_t select_best(std::span<const GroupScore> scores) { return select_extreme(scores, false); }

size_t select_worst(std::span<const GroupScore> scores) { return select_extreme(scores, true); }

nlohmann::json FilterReport::to_json(const SplitSample& s_train) const {
    nlohmann::json jgroups = nlohmann::json::array();
    for (size_t i = 0; i < groups.size(); ++i) {
        nlohmann::json pair_ids = nlohmann::json::array();
        for (const PairRef& p : groups[i].pairs(s_train)) {
            pair_ids.push_back({{"query_id", p.query_id}, {"doc_id", p.doc_id}});
        }
        jgroups.push_back({{"sampling_index", groups[i].sampling_index},
                           {"pair_indices", groups[i].pair_indices},
                           {"pairs", pair_ids},
                           {"mean_loss", scores[i].mean_loss},
                           {"num_eval_instances", scores[i].num_eval_instances},
                           {"skipped", scores[i].skipped},
                           {"disqualified", scores[i].disqualified}});
    }
    return {{"mode", mode}, {"chosen", chosen}, {"groups", jgroups}};
}

}  // namespace promptaug
