#include "promptaug/lm.hpp"

#include <algorithm>
#include <cmath>

#include "promptaug/checkpoint.hpp"
#include "promptaug/errors.hpp"
#include "promptaug/kernels.hpp"
#include "promptaug/rng.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

nlohmann::json LMConfig::to_json() const {
    return {{"num_layers", num_layers},   {"d_model", d_model},
            {"num_heads", num_heads},     {"context_length", context_length},
            {"vocab_size", vocab_size},   {"tied_output", tied_output}};
}

LMConfig LMConfig::from_json(const nlohmann::json& j) {
    LMConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.tied_output = j.value("tied_output", false);
    return c;
}

nlohmann::json GenerationConfig::to_json() const {
    return {{"mode", mode == Mode::kGreedy ? "greedy" : "sample"},
            {"temperature", temperature},
            {"top_k", top_k},
            {"max_new_tokens", max_new_tokens},
            {"stop_ids", stop_ids},
            {"seed", seed}};
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
    GenerationConfig c;
    const std::string mode = j.value("mode", "greedy");
    if (mode == "greedy") {
        c.mode = Mode::kGreedy;
    } else if (mode == "sample") {
        c.mode = Mode::kSample;
    } else {
        throw ConfigError("generation mode must be 'greedy' or 'sample', got '" + mode + "'");
    }
    c.temperature = j.value("temperature", 1.0f);
    c.top_k = j.value("top_k", 0);
    c.max_new_tokens = j.value("max_new_tokens", 32);
    c.stop_ids = j.value("stop_ids", std::vector<int>{Vocabulary::kEos});
    c.seed = j.value("seed", uint64_t{0});
    if (c.temperature <= 0.0f) throw ConfigError("generation temperature must be > 0");
    if (c.top_k < 0) throw ConfigError("generation top_k must be >= 0");
    if (c.max_new_tokens < 0) throw ConfigError("generation max_new_tokens must be >= 0");
    return c;
}

DecoderLM::DecoderLM(LMConfig cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.vocab_size < 1) throw ConfigError("decoder lm: vocab_size must be set");
    trunk_ = TransformerTrunk(cfg.num_layers, cfg.d_model, cfg.num_heads, cfg.context_length,
                              cfg.vocab_size, /*causal=*/true, seed, "");
    for (const Parameter& p : trunk_.parameters()) all_params_.push_back(p);
    if (!cfg.tied_output) {
        Rng rng(mix_seed(seed, 0x6f757470726fULL));
        out_proj_ = Tensor({static_cast<size_t>(cfg.d_model), static_cast<size_t>(cfg.vocab_size)});
        for (float& v : out_proj_.values()) v = 0.02f * rng.next_normal();
        all_params_.push_back({out_proj_, true, "out_proj"});
    }
}

Tensor DecoderLM::output_logits(const Tensor& hidden, Tape* tape) const {
    if (cfg_.tied_output) {
        return ops::matmul(hidden, ops::transpose(trunk_.token_embeddings(), tape), tape);
    }
    return ops::matmul(hidden, out_proj_, tape);
}

Tensor DecoderLM::forward(const Tensor* prefix_embeddings, std::span<const int> ids,
                          Tape* tape) const {
    for (int id : ids) {
        if (id < 0 || id >= cfg_.vocab_size) {
            throw IndexError("decoder lm: token id " + std::to_string(id) +
                             " outside vocabulary of " + std::to_string(cfg_.vocab_size));
        }
    }
    Tensor hidden = trunk_.forward(prefix_embeddings, ids, tape);
    return output_logits(hidden, tape);
}

Tensor DecoderLM::loss(const Tensor* prefix_embeddings, std::span<const int> ids,
                       std::span<const uint8_t> loss_mask, Tape* tape) const {
    if (loss_mask.size() != ids.size()) {
        throw ContractError("lm loss: mask length " + std::to_string(loss_mask.size()) +
                            " != ids length " + std::to_string(ids.size()));
    }
    size_t n_masked = 0;
    for (uint8_t m : loss_mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw ContractError("lm loss: mask selects no positions");
    if (!loss_mask.empty() && loss_mask[0]) {
        throw ContractError("lm loss: position 0 has no preceding context to condition on");
    }

    const size_t p = prefix_embeddings != nullptr ? prefix_embeddings->dim(0) : 0;
    Tensor hidden = trunk_.forward(prefix_embeddings, ids, tape);

    // Only the rows that actually predict a masked token go through the
    // vocabulary projection; row p+i-1 predicts ids[i].
    std::vector<int> rows;
    std::vector<int> targets;
    rows.reserve(n_masked);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (!loss_mask[i]) continue;
        rows.push_back(static_cast<int>(p + i - 1));
        targets.push_back(ids[i]);
    }
    Tensor picked = ops::embedding_lookup(hidden, rows, tape);
    Tensor logits = output_logits(picked, tape);
    const std::vector<uint8_t> all(targets.size(), 1);
    return ops::cross_entropy_rows(logits, targets, all, tape);
}

std::pair<double, size_t> DecoderLM::masked_nll(const Tensor* prefix_embeddings,
                                                const MaskedSequence& seq) const {
    size_t n_masked = 0;
    for (uint8_t m : seq.loss_mask) n_masked += m ? 1 : 0;
    const Tensor l = loss(prefix_embeddings, seq.ids, seq.loss_mask, nullptr);
    return {static_cast<double>(l.item()) * static_cast<double>(n_masked), n_masked};
}

std::vector<int> DecoderLM::generate(const Tensor* prefix_embeddings,
                                     std::span<const int> prompt_ids,
                                     const GenerationConfig& cfg) const {
    const size_t p = prefix_embeddings != nullptr ? prefix_embeddings->dim(0) : 0;
    if (p + prompt_ids.size() + 1 > static_cast<size_t>(cfg_.context_length)) {
        throw LengthError("generate: prompt of " + std::to_string(prompt_ids.size()) +
                          " tokens plus prefix " + std::to_string(p) +
                          " leaves no room in context " + std::to_string(cfg_.context_length));
    }
    Rng rng(mix_seed(cfg.seed, 0x67656eULL));
    std::vector<int> sequence(prompt_ids.begin(), prompt_ids.end());
    std::vector<int> emitted;
    const size_t v = static_cast<size_t>(cfg_.vocab_size);

    for (int step = 0; step < cfg.max_new_tokens; ++step) {
        if (p + sequence.size() >= static_cast<size_t>(cfg_.context_length)) break;
        Tensor hidden = trunk_.forward(prefix_embeddings, sequence, nullptr);
        // Project only the last position.
        Tensor last({1, static_cast<size_t>(cfg_.d_model)});
        const float* src = hidden.data() + (hidden.dim(0) - 1) * hidden.dim(1);
        std::copy(src, src + hidden.dim(1), last.data());
        Tensor logits = output_logits(last, nullptr);
        if (!ops::all_finite(logits)) throw NumericError("generate: non-finite logits");

        int chosen;
        if (cfg.mode == GenerationConfig::Mode::kGreedy) {
            chosen = 0;
            float best = logits.values()[0];
            for (size_t i = 1; i < v; ++i) {
                if (logits.values()[i] > best) {
                    best = logits.values()[i];
                    chosen = static_cast<int>(i);
                }
            }
        } else {
            std::vector<float> probs(logits.values().begin(), logits.values().end());
            kernels::active().scale(1.0f / cfg.temperature, probs.data(), v);
            kernels::softmax_inplace(probs.data(), v);
            if (cfg.top_k > 0 && static_cast<size_t>(cfg.top_k) < v) {
                std::vector<size_t> order(v);
                for (size_t i = 0; i < v; ++i) order[i] = i;
                std::nth_element(order.begin(), order.begin() + cfg.top_k - 1, order.end(),
                                 [&](size_t a, size_t b) {
                                     if (probs[a] != probs[b]) return probs[a] > probs[b];
                                     return a < b;
                                 });
                const float cut = probs[order[static_cast<size_t>(cfg.top_k) - 1]];
                float mass = 0.0f;
                for (size_t i = 0; i < v; ++i) {
                    if (probs[i] < cut) probs[i] = 0.0f;
                    mass += probs[i];
                }
                kernels::active().scale(1.0f / mass, probs.data(), v);
            }
            const double draw = rng.next_double();
            double acc = 0.0;
            chosen = static_cast<int>(v) - 1;
            for (size_t i = 0; i < v; ++i) {
                acc += probs[i];
                if (draw < acc) {
                    chosen = static_cast<int>(i);
                    break;
                }
            }
        }

        if (std::find(cfg.stop_ids.begin(), cfg.stop_ids.end(), chosen) != cfg.stop_ids.end()) {
            break;
        }
        sequence.push_back(chosen);
        emitted.push_back(chosen);
    }
    return emitted;
}

double DecoderLM::perplexity(const Tensor* prefix_embeddings,
                             std::span<const MaskedSequence> dataset, int threads) const {
    if (dataset.empty()) throw ContractError("perplexity: empty dataset");
    std::vector<double> nll(dataset.size());
    std::vector<size_t> counts(dataset.size());
    parallel_for(dataset.size(), threads, [&](size_t i) {
        const auto [sum, count] = masked_nll(prefix_embeddings, dataset[i]);
        nll[i] = sum;
        counts[i] = count;
    });
    double total = 0.0;
    size_t tokens = 0;
    for (size_t i = 0; i < dataset.size(); ++i) {
        total += nll[i];
        tokens += counts[i];
    }
    if (tokens == 0) throw ContractError("perplexity: no masked tokens in dataset");
    return std::exp(total / static_cast<double>(tokens));
}

void DecoderLM::set_trainable(bool trainable) {
    for (Parameter& p : all_params_) p.trainable = trainable;
}

bool DecoderLM::all_frozen() const {
    for (const Parameter& p : all_params_) {
        if (p.trainable) return false;
    }
    return true;
}

void DecoderLM::zero_grads() {
    for (Parameter& p : all_params_) p.tensor.zero_grad();
}

uint64_t DecoderLM::fingerprint() const {
    Fnv1a h;
    h.update(cfg_.to_json().dump());
    h.update_value(fingerprint_params(all_params_));
    return h.digest();
}

std::vector<std::vector<float>> DecoderLM::snapshot() const {
    std::vector<std::vector<float>> snap;
    snap.reserve(all_params_.size());
    for (const Parameter& p : all_params_) {
        snap.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    }
    return snap;
}

void DecoderLM::restore(const std::vector<std::vector<float>>& snap) {
    if (snap.size() != all_params_.size()) throw ContractError("lm restore: size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) {
        std::copy(snap[i].begin(), snap[i].end(), all_params_[i].tensor.data());
    }
}

void DecoderLM::save(const std::string& path, const Vocabulary& vocab) const {
    nlohmann::json meta{{"kind", "decoder_lm"},
                        {"version", 1},
                        {"config", cfg_.to_json()},
                        {"vocab", vocab.to_json()}};
    save_checkpoint(path, std::move(meta), all_params_);
}

std::pair<DecoderLM, Vocabulary> DecoderLM::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "decoder_lm") {
        throw IoError("checkpoint kind mismatch in " + path);
    }
    DecoderLM lm(LMConfig::from_json(ck.meta.at("config")), /*seed=*/0);
    if (ck.buffers.size() != lm.all_params_.size()) {
        throw IoError("checkpoint parameter count mismatch in " + path);
    }
    for (size_t i = 0; i < ck.buffers.size(); ++i) {
        auto& [name, tensor] = ck.buffers[i];
        Parameter& p = lm.all_params_[i];
        if (p.name != name || !p.tensor.same_shape(tensor)) {
            throw IoError("checkpoint layout mismatch at '" + name + "' in " + path);
        }
        std::copy(tensor.values().begin(), tensor.values().end(), p.tensor.data());
    }
    return {std::move(lm), Vocabulary::from_json(ck.meta.at("vocab"))};
}

PretrainReport pretrain(DecoderLM& lm, std::span<const std::string> corpus_texts,
                        const Vocabulary& vocab, const PretrainConfig& cfg) {
    for (const Parameter& p : lm.parameters()) {
        if (!p.trainable) throw ContractError("pretrain: all parameters must be trainable");
    }
    if (corpus_texts.empty()) throw ConfigError("pretrain: empty corpus");

    // One stream: document tokens separated by <eos>.
    std::vector<int> stream;
    for (const std::string& text : corpus_texts) {
        for (int id : vocab.encode(text)) stream.push_back(id);
        stream.push_back(Vocabulary::kEos);
    }
    const int chunk = std::min(cfg.chunk_length, lm.config().context_length);
    if (chunk < 2) throw ConfigError("pretrain: chunk_length must be at least 2");
    std::vector<std::pair<size_t, size_t>> chunks;  // offset, length
    for (size_t off = 0; off + 2 <= stream.size(); off += static_cast<size_t>(chunk)) {
        chunks.emplace_back(off, std::min(static_cast<size_t>(chunk), stream.size() - off));
    }
    if (chunks.empty()) throw ConfigError("pretrain: corpus shorter than one chunk");

    PretrainReport report;
    AdamW opt({.lr = cfg.learning_rate});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 0x707265ULL, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(chunks.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        for (size_t ci : order) {
            const auto [off, len] = chunks[ci];
            std::span<const int> ids(stream.data() + off, len);
            std::vector<uint8_t> mask(len, 1);
            mask[0] = 0;

            lm.zero_grads();
            Tape tape;
            Tensor l = lm.loss(nullptr, ids, mask, &tape);
            const float value = l.item();
            if (!std::isfinite(value)) {
                throw NumericError("pretrain: loss diverged (non-finite) at step " +
                                   std::to_string(report.steps));
            }
            ops::backward(l, tape);
            opt.step(lm.parameters());
            epoch_loss += value;
            ++report.steps;
        }
        report.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(chunks.size()));
        report.final_loss = report.epoch_mean_loss.back();
    }
    return report;
}

}  // namespace promptaug
