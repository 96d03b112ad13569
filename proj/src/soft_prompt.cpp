#include "promptaug/soft_prompt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "promptaug/checkpoint.hpp"
#include "promptaug/errors.hpp"
#include "promptaug/kernels.hpp"
#include "promptaug/rng.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

namespace {

constexpr uint64_t kTrainStream = 0x74756e65ULL;
constexpr uint64_t kEvalStream = 0x6576616cULL;

}  // namespace

uint64_t SoftPrompt::fingerprint() const {
    Fnv1a h;
    h.update_value(l_s);
    h.update(init_hard_prompt);
    h.update_value(lm_fingerprint);
    h.update(theta.data(), theta.numel() * sizeof(float));
    return h.digest();
}

void SoftPrompt::save(const std::string& path) const {
    nlohmann::json meta{{"kind", "soft_prompt"},
                        {"version", 1},
                        {"l_s", l_s},
                        {"hard_prompt", init_hard_prompt},
                        {"init_token_ids", init_token_ids},
                        {"lm_fingerprint", hex64(lm_fingerprint)}};
    const Parameter param{theta, true, "theta"};
    save_checkpoint(path, std::move(meta), std::span<const Parameter>(&param, 1));
}

SoftPrompt SoftPrompt::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "soft_prompt") {
        throw IoError("checkpoint kind mismatch in " + path);
    }
    SoftPrompt sp;
    sp.l_s = ck.meta.at("l_s").get<int>();
    sp.init_hard_prompt = ck.meta.at("hard_prompt").get<std::string>();
    sp.init_token_ids = ck.meta.at("init_token_ids").get<std::vector<int>>();
    sp.lm_fingerprint =
        std::stoull(ck.meta.at("lm_fingerprint").get<std::string>(), nullptr, 16);
    if (ck.buffers.size() != 1) throw IoError("soft prompt checkpoint expects one buffer");
    sp.theta = std::move(ck.buffers[0].second);
    return sp;
}

SoftPrompt init_soft_prompt(const std::string& hard_prompt, int l_s, const DecoderLM& lm,
                            const Vocabulary& vocab) {
    if (l_s < 1) throw ConfigError("init_soft_prompt: l_s must be >= 1");
    const std::vector<int> ids = vocab.encode(hard_prompt);
    if (ids.empty()) throw ConfigError("init_soft_prompt: hard prompt tokenizes to nothing");
    const bool all_unk =
        std::all_of(ids.begin(), ids.end(), [](int id) { return id == Vocabulary::kUnk; });
    if (all_unk) {
        throw ConfigError("init_soft_prompt: hard prompt '" + hard_prompt +
                          "' tokenizes entirely to <unk>");
    }

    SoftPrompt sp;
    sp.l_s = l_s;
    sp.init_hard_prompt = hard_prompt;
    sp.lm_fingerprint = lm.fingerprint();
    sp.init_token_ids.resize(static_cast<size_t>(l_s));
    for (int i = 0; i < l_s; ++i) {
        sp.init_token_ids[static_cast<size_t>(i)] = ids[static_cast<size_t>(i) % ids.size()];
    }
    // Deep copy of the embedding rows; theta must not alias the frozen table.
    sp.theta = ops::embedding_lookup(lm.token_embeddings(), sp.init_token_ids, nullptr).clone();
    return sp;
}

TuningInstance build_instance(std::span<const PairRef> examples, const PairRef& target,
                              const Vocabulary& vocab, const PromptTemplate& tmpl,
                              int max_tokens) {
    if (vocab.encode(target.query_text).empty()) {
        throw ContractError("build_instance: target query '" + target.query_id +
                            "' tokenizes to nothing");
    }

    const std::vector<int> doc_kw = vocab.encode(tmpl.doc_keyword);
    const std::vector<int> query_kw = vocab.encode(tmpl.query_keyword);

    struct Block {
        std::vector<int> doc;
        std::vector<int> query;
    };
    std::vector<Block> blocks;
    blocks.reserve(examples.size() + 1);
    for (const PairRef& ex : examples) {
        blocks.push_back({vocab.encode(ex.doc_text), vocab.encode(ex.query_text)});
    }
    blocks.push_back({vocab.encode(target.doc_text), vocab.encode(target.query_text)});

    auto total_len = [&]() {
        size_t n = 1;  // final <eos>
        for (const Block& b : blocks) {
            n += doc_kw.size() + b.doc.size() + query_kw.size() + b.query.size();
        }
        return n;
    };

    // Right-truncate documents, longest first, until the instance fits.
    while (total_len() > static_cast<size_t>(max_tokens)) {
        size_t victim = blocks.size();
        size_t longest = 1;  // every document keeps at least one token
        for (size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i].doc.size() > longest) {
                longest = blocks[i].doc.size();
                victim = i;
            }
        }
        if (victim == blocks.size()) {
            throw LengthError("build_instance: instance cannot fit in " +
                              std::to_string(max_tokens) + " tokens even with documents " +
                              "truncated to one token");
        }
        blocks[victim].doc.resize(blocks[victim].doc.size() - 1);
    }

    TuningInstance inst;
    inst.target_query_id = target.query_id;
    inst.target_doc_id = target.doc_id;
    for (const PairRef& ex : examples) inst.example_query_ids.push_back(ex.query_id);

    auto& ids = inst.seq.ids;
    auto& mask = inst.seq.loss_mask;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const bool is_target = (i + 1 == blocks.size());
        ids.insert(ids.end(), doc_kw.begin(), doc_kw.end());
        ids.insert(ids.end(), blocks[i].doc.begin(), blocks[i].doc.end());
        ids.insert(ids.end(), query_kw.begin(), query_kw.end());
        mask.resize(ids.size(), 0);
        ids.insert(ids.end(), blocks[i].query.begin(), blocks[i].query.end());
        mask.resize(ids.size(), is_target ? 1 : 0);
    }
    ids.push_back(Vocabulary::kEos);
    mask.push_back(1);
    return inst;
}

nlohmann::json TuningConfig::to_json() const {
    return {{"x", x},
            {"m", m},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed},
            {"threads", threads}};
}

TuningConfig TuningConfig::from_json(const nlohmann::json& j) {
    TuningConfig c;
    c.x = j.value("x", 50);
    c.m = j.value("m", 2);
    c.learning_rate = j.value("learning_rate", 3e-2f);
    c.weight_decay = j.value("weight_decay", 0.01f);
    c.batch_size = j.value("batch_size", 1);
    c.max_epochs = j.value("max_epochs", 100);
    c.patience = j.value("patience", 5);
    c.seed = j.value("seed", uint64_t{0});
    c.threads = j.value("threads", 1);
    return c;
}

nlohmann::json TuningReport::to_json() const {
    return {{"train_loss", train_loss},
            {"eval_perplexity", eval_perplexity},
            {"best_epoch", best_epoch},
            {"stopped_early", stopped_early}};
}

namespace {

// Example pairs for one eval instance, re-sampled per (epoch, index) so every
// epoch sees a fresh but reproducible draw.
std::vector<PairRef> eval_examples(const SplitSample& s_train, int m, uint64_t seed, int epoch,
                                   size_t index) {
    Rng rng(mix_seed(seed, kEvalStream, static_cast<uint64_t>(epoch), index));
    std::vector<PairRef> out;
    for (size_t idx : rng.sample_without_replacement(s_train.pairs.size(),
                                                     static_cast<size_t>(m))) {
        out.push_back(s_train.pairs[idx]);
    }
    return out;
}

}  // namespace

std::pair<SoftPrompt, TuningReport> tune(const DecoderLM& lm, const SoftPrompt& initial,
                                         const SplitSample& s_train, const SplitSample& s_eval,
                                         const Vocabulary& vocab, const PromptTemplate& tmpl,
                                         const TuningConfig& cfg) {
    if (!lm.all_frozen()) {
        throw ContractError("tune: the language model must be fully frozen");
    }
    if (initial.lm_fingerprint != lm.fingerprint()) {
        throw StalenessError("tune: soft prompt was initialized from a different model");
    }
    const size_t num_pairs = s_train.pairs.size();
    if (cfg.m < 0 || static_cast<size_t>(cfg.m) >= num_pairs) {
        throw ConfigError("tune: need 0 <= M < NumPair(X), got M=" + std::to_string(cfg.m) +
                          " with " + std::to_string(num_pairs) + " pairs");
    }
    if (s_eval.pairs.empty()) throw ConfigError("tune: empty eval split");

    SoftPrompt sp = initial;
    sp.theta = initial.theta.clone();
    Parameter theta_param{sp.theta, true, "soft_prompt.theta"};
    const int max_tokens = lm.config().context_length - sp.l_s;
    if (max_tokens < 8) throw ConfigError("tune: context leaves no room after the soft prompt");

    // Frozen LM gradients are discarded, never stepped; only theta is handed
    // to the optimizer.
    AdamW opt({.lr = cfg.learning_rate, .weight_decay = cfg.weight_decay});

    auto evaluate = [&](int epoch) {
        std::vector<MaskedSequence> seqs(s_eval.pairs.size());
        std::vector<uint8_t> usable(s_eval.pairs.size(), 1);
        parallel_for(s_eval.pairs.size(), cfg.threads, [&](size_t j) {
            const auto examples = eval_examples(s_train, cfg.m, cfg.seed, epoch, j);
            seqs[j] =
                build_instance(examples, s_eval.pairs[j], vocab, tmpl, max_tokens).seq;
        });
        std::vector<double> nll(seqs.size());
        std::vector<size_t> counts(seqs.size());
        parallel_for(seqs.size(), cfg.threads, [&](size_t j) {
            const auto [sum, count] = lm.masked_nll(&sp.theta, seqs[j]);
            nll[j] = sum;
            counts[j] = count;
        });
        double total = 0.0;
        size_t tokens = 0;
        for (size_t j = 0; j < seqs.size(); ++j) {
            total += nll[j];
            tokens += counts[j];
        }
        return std::exp(total / static_cast<double>(tokens));
    };

    TuningReport report;
    report.eval_perplexity.push_back(evaluate(0));
    int best_epoch = 0;
    double best_ppl = report.eval_perplexity[0];
    std::vector<float> best_theta(sp.theta.values().begin(), sp.theta.values().end());

    const int batch = std::max(1, cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, kTrainStream, static_cast<uint64_t>(epoch)));
        const auto example_idx =
            rng.sample_without_replacement(num_pairs, static_cast<size_t>(cfg.m));
        std::vector<uint8_t> is_example(num_pairs, 0);
        for (size_t idx : example_idx) is_example[idx] = 1;
        std::vector<PairRef> examples;
        for (size_t idx : example_idx) examples.push_back(s_train.pairs[idx]);

        std::vector<size_t> targets;
        for (size_t i = 0; i < num_pairs; ++i) {
            if (!is_example[i]) targets.push_back(i);
        }
        rng.shuffle(targets);

        double epoch_loss = 0.0;
        size_t steps = 0;
        for (size_t off = 0; off < targets.size(); off += static_cast<size_t>(batch)) {
            const size_t end = std::min(targets.size(), off + static_cast<size_t>(batch));
            sp.theta.zero_grad();
            float batch_loss = 0.0f;
            for (size_t bi = off; bi < end; ++bi) {
                const TuningInstance inst = build_instance(
                    examples, s_train.pairs[targets[bi]], vocab, tmpl, max_tokens);
                Tape tape;
                Tensor loss = lm.loss(&sp.theta, inst.seq.ids, inst.seq.loss_mask, &tape);
                batch_loss += loss.item();
                ops::backward(loss, tape);
            }
            const float inv = 1.0f / static_cast<float>(end - off);
            kernels::active().scale(inv, sp.theta.grad().data(), sp.theta.numel());
            opt.step(std::span<Parameter>(&theta_param, 1));
            epoch_loss += static_cast<double>(batch_loss) * inv;
            ++steps;
        }
        report.train_loss.push_back(epoch_loss / static_cast<double>(std::max<size_t>(1, steps)));

        const double ppl = evaluate(epoch);
        report.eval_perplexity.push_back(ppl);
        if (ppl < best_ppl) {
            best_ppl = ppl;
            best_epoch = epoch;
            best_theta.assign(sp.theta.values().begin(), sp.theta.values().end());
        } else if (epoch - best_epoch >= cfg.patience) {
            report.stopped_early = true;
            break;
        }
    }

    report.best_epoch = best_epoch;
    std::copy(best_theta.begin(), best_theta.end(), sp.theta.data());
    sp.theta.drop_grad();
    return {std::move(sp), std::move(report)};
}

void export_prompt_embeddings(const SoftPrompt& sp, const std::string& path) {
    std::string csv;
    const size_t d = sp.theta.dim(1);
    for (size_t row = 0; row < sp.theta.dim(0); ++row) {
        csv += std::to_string(row);
        for (size_t c = 0; c < d; ++c) {
            csv.push_back(',');
            csv += format_float(sp.theta.data()[row * d + c]);
        }
        csv.push_back('\n');
    }
    write_text_file(path, csv);
}

}  // namespace promptaug
