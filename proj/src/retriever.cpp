#include "promptaug/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "promptaug/checkpoint.hpp"
#include "promptaug/errors.hpp"
#include "promptaug/kernels.hpp"
#include "promptaug/rng.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

nlohmann::json EncoderConfig::to_json() const {
    return {{"num_layers", num_layers},
            {"d_model", d_model},
            {"num_heads", num_heads},
            {"context_length", context_length},
            {"vocab_size", vocab_size}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.num_layers = j.value("num_layers", 2);
    c.d_model = j.value("d_model", 128);
    c.num_heads = j.value("num_heads", 4);
    c.context_length = j.value("context_length", 128);
    c.vocab_size = j.at("vocab_size").get<int>();
    return c;
}

BiEncoder::BiEncoder(EncoderConfig cfg, bool shared_towers, Vocabulary vocab, uint64_t seed)
    : cfg_(cfg), shared_(shared_towers), vocab_(std::move(vocab)) {
    if (cfg_.vocab_size != vocab_.size()) {
        throw ConfigError("bi-encoder: config vocab_size " + std::to_string(cfg_.vocab_size) +
                          " != vocabulary size " + std::to_string(vocab_.size()));
    }
    const std::string qprefix = shared_ ? "enc." : "q.";
    query_trunk_ = TransformerTrunk(cfg_.num_layers, cfg_.d_model, cfg_.num_heads,
                                    cfg_.context_length, cfg_.vocab_size, /*causal=*/false,
                                    mix_seed(seed, 0x71ULL), qprefix);
    for (const Parameter& p : query_trunk_.parameters()) all_params_.push_back(p);
    if (!shared_) {
        doc_trunk_ = TransformerTrunk(cfg_.num_layers, cfg_.d_model, cfg_.num_heads,
                                      cfg_.context_length, cfg_.vocab_size, /*causal=*/false,
                                      mix_seed(seed, 0x64ULL), "d.");
        for (const Parameter& p : doc_trunk_.parameters()) all_params_.push_back(p);
    }
}

Tensor BiEncoder::encode(const TransformerTrunk& trunk, const std::string& text,
                         Tape* tape) const {
    std::vector<int> ids = vocab_.encode(text);
    if (ids.empty()) {
        std::fprintf(stderr, "[bi-encoder] warning: empty text encoded as <eos>\n");
        ids.push_back(Vocabulary::kEos);
    }
    if (ids.size() > static_cast<size_t>(cfg_.context_length)) {
        ids.resize(static_cast<size_t>(cfg_.context_length));
    }
    Tensor hidden = trunk.forward(nullptr, ids, tape);
    return ops::mean_rows(hidden, tape);
}

Tensor BiEncoder::encode_query(const std::string& text, Tape* tape) const {
    return encode(query_trunk_, text, tape);
}

Tensor BiEncoder::encode_doc(const std::string& text, Tape* tape) const {
    return encode(shared_ ? query_trunk_ : doc_trunk_, text, tape);
}

std::vector<float> BiEncoder::encode_docs(std::span<const std::string> texts,
                                          int threads) const {
    const size_t d = static_cast<size_t>(cfg_.d_model);
    std::vector<float> matrix(texts.size() * d);
    parallel_for(texts.size(), threads, [&](size_t i) {
        Tensor v = encode_doc(texts[i], nullptr);
        std::copy(v.data(), v.data() + d, matrix.data() + i * d);
    });
    return matrix;
}

void BiEncoder::zero_grads() {
    for (Parameter& p : all_params_) p.tensor.zero_grad();
}

uint64_t BiEncoder::fingerprint() const {
    Fnv1a h;
    h.update(cfg_.to_json().dump());
    h.update_value(shared_);
    h.update_value(vocab_.fingerprint());
    h.update_value(fingerprint_params(all_params_));
    return h.digest();
}

std::vector<std::vector<float>> BiEncoder::snapshot() const {
    std::vector<std::vector<float>> snap;
    for (const Parameter& p : all_params_) {
        snap.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    }
    return snap;
}

void BiEncoder::restore(const std::vector<std::vector<float>>& snap) {
    if (snap.size() != all_params_.size()) throw ContractError("bi-encoder restore: mismatch");
    for (size_t i = 0; i < snap.size(); ++i) {
        std::copy(snap[i].begin(), snap[i].end(), all_params_[i].tensor.data());
    }
}

void BiEncoder::save(const std::string& path) const {
    nlohmann::json meta{{"kind", "bi_encoder"},
                        {"version", 1},
                        {"config", cfg_.to_json()},
                        {"shared_towers", shared_},
                        {"vocab", vocab_.to_json()}};
    save_checkpoint(path, std::move(meta), all_params_);
}

BiEncoder BiEncoder::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "bi_encoder") {
        throw IoError("checkpoint kind mismatch in " + path);
    }
    BiEncoder enc(EncoderConfig::from_json(ck.meta.at("config")),
                  ck.meta.at("shared_towers").get<bool>(),
                  Vocabulary::from_json(ck.meta.at("vocab")), /*seed=*/0);
    if (ck.buffers.size() != enc.all_params_.size()) {
        throw IoError("checkpoint parameter count mismatch in " + path);
    }
    for (size_t i = 0; i < ck.buffers.size(); ++i) {
        auto& [name, tensor] = ck.buffers[i];
        if (enc.all_params_[i].name != name ||
            !enc.all_params_[i].tensor.same_shape(tensor)) {
            throw IoError("checkpoint layout mismatch at '" + name + "' in " + path);
        }
        std::copy(tensor.values().begin(), tensor.values().end(),
                  enc.all_params_[i].tensor.data());
    }
    return enc;
}

Tensor in_batch_loss(const Tensor& queries, const Tensor& docs, Tape* tape) {
    if (queries.rank() != 2 || !queries.same_shape(docs)) {
        throw DimensionError("in_batch_loss: need matching [B x d] matrices, got " +
                             queries.shape_string() + " vs " + docs.shape_string());
    }
    const size_t batch = queries.dim(0);
    Tensor scores = ops::matmul(queries, ops::transpose(docs, tape), tape);
    std::vector<int> targets(batch);
    for (size_t i = 0; i < batch; ++i) targets[i] = static_cast<int>(i);
    const std::vector<uint8_t> all(batch, 1);
    return ops::cross_entropy_rows(scores, targets, all, tape);
}

void CorpusEmbeddings::save(const std::string& path) const {
    nlohmann::json meta{{"kind", "corpus_embeddings"},
                        {"version", 1},
                        {"dim", dim},
                        {"doc_ids", doc_ids},
                        {"encoder_fingerprint", hex64(encoder_fingerprint)}};
    Tensor m({doc_ids.size(), dim});
    std::copy(matrix.begin(), matrix.end(), m.data());
    const Parameter param{m, false, "matrix"};
    save_checkpoint(path, std::move(meta), std::span<const Parameter>(&param, 1));
}

CorpusEmbeddings CorpusEmbeddings::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "corpus_embeddings") {
        throw IoError("checkpoint kind mismatch in " + path);
    }
    CorpusEmbeddings emb;
    emb.dim = ck.meta.at("dim").get<size_t>();
    emb.doc_ids = ck.meta.at("doc_ids").get<std::vector<std::string>>();
    emb.encoder_fingerprint =
        std::stoull(ck.meta.at("encoder_fingerprint").get<std::string>(), nullptr, 16);
    const Tensor& m = ck.buffers.at(0).second;
    emb.matrix.assign(m.values().begin(), m.values().end());
    return emb;
}

CorpusEmbeddings index_corpus(const BiEncoder& encoder,
                              std::span<const std::pair<std::string, std::string>> docs,
                              int threads) {
    if (docs.empty()) throw ConfigError("index_corpus: empty corpus");
    CorpusEmbeddings emb;
    emb.dim = static_cast<size_t>(encoder.config().d_model);
    emb.encoder_fingerprint = encoder.fingerprint();
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& [id, text] : docs) {
        emb.doc_ids.push_back(id);
        texts.push_back(text);
    }
    emb.matrix = encoder.encode_docs(texts, threads);
    return emb;
}

namespace {

ScoredList top_k_by_dot(const CorpusEmbeddings& emb, const Tensor& query_vec, size_t k) {
    const auto& kn = kernels::active();
    ScoredList scored;
    scored.reserve(emb.doc_ids.size());
    for (size_t i = 0; i < emb.doc_ids.size(); ++i) {
        const double s = kn.dot_double(emb.matrix.data() + i * emb.dim, query_vec.data(), emb.dim);
        scored.push_back({emb.doc_ids[i], s});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

}  // namespace

ScoredList retrieve(const BiEncoder& encoder, const CorpusEmbeddings& emb,
                    const std::string& query_text, size_t k) {
    if (k < 1) throw ContractError("retrieve: k must be >= 1");
    if (emb.encoder_fingerprint != encoder.fingerprint()) {
        throw StalenessError("retrieve: corpus embeddings were built by a different encoder");
    }
    return top_k_by_dot(emb, encoder.encode_query(query_text), k);
}

ScoredList rerank_bm25(const BiEncoder& encoder, const InvertedIndex& index,
                       const std::map<std::string, std::string>& corpus_texts,
                       const std::string& query_text, size_t n, int threads) {
    if (n < 1) throw ContractError("rerank_bm25: n must be >= 1");
    const ScoredList candidates = index.search(query_text, n);
    if (candidates.empty()) return {};

    const size_t d = static_cast<size_t>(encoder.config().d_model);
    std::vector<float> cand_matrix(candidates.size() * d);
    parallel_for(candidates.size(), threads, [&](size_t i) {
        const auto it = corpus_texts.find(candidates[i].doc_id);
        if (it == corpus_texts.end()) {
            throw IndexError("rerank_bm25: candidate doc '" + candidates[i].doc_id +
                             "' missing from corpus");
        }
        Tensor v = encoder.encode_doc(it->second, nullptr);
        std::copy(v.data(), v.data() + d, cand_matrix.data() + i * d);
    });

    const Tensor qv = encoder.encode_query(query_text);
    ScoredList rescored;
    rescored.reserve(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        const double s = kernels::active().dot_double(cand_matrix.data() + i * d, qv.data(), d);
        rescored.push_back({candidates[i].doc_id, s});
    }
    std::sort(rescored.begin(), rescored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    return rescored;
}

nlohmann::json DRTrainConfig::to_json() const {
    return {{"batch_size", batch_size}, {"learning_rate", learning_rate},
            {"weight_decay", weight_decay}, {"max_epochs", max_epochs},
            {"patience", patience},     {"seed", seed},
            {"threads", threads}};
}

DRTrainConfig DRTrainConfig::from_json(const nlohmann::json& j) {
    DRTrainConfig c;
    c.batch_size = j.value("batch_size", 32);
    c.learning_rate = j.value("learning_rate", 1e-4f);
    c.weight_decay = j.value("weight_decay", 0.01f);
    c.max_epochs = j.value("max_epochs", 20);
    c.patience = j.value("patience", 10);
    c.seed = j.value("seed", uint64_t{0});
    c.threads = j.value("threads", 1);
    return c;
}

nlohmann::json DRTrainReport::to_json() const {
    return {{"epoch_loss", epoch_loss},
            {"eval_ndcg10", eval_ndcg10},
            {"best_epoch", best_epoch},
            {"stopped_early", stopped_early},
            {"skipped_singleton_batches", skipped_singleton_batches}};
}

namespace {

double probe_ndcg10(const BiEncoder& encoder, const EvalProbe& probe, int threads) {
    const CorpusEmbeddings emb = index_corpus(encoder, probe.corpus, threads);
    std::vector<std::pair<std::string, std::string>> queries(probe.queries.begin(),
                                                             probe.queries.end());
    std::vector<ScoredList> results(queries.size());
    parallel_for(queries.size(), threads, [&](size_t i) {
        results[i] = top_k_by_dot(emb, encoder.encode_query(queries[i].second), 10);
    });
    Run run;
    for (size_t i = 0; i < queries.size(); ++i) run.set(queries[i].first, results[i]);
    return ndcg_at_k(run, probe.qrels, 10);
}

}  // namespace

DRTrainReport train_dr(BiEncoder& encoder, std::span<const PairRef> pairs_train,
                       const EvalProbe& probe, const DRTrainConfig& cfg) {
    if (pairs_train.empty()) throw ConfigError("train_dr: no training pairs");
    if (cfg.batch_size < 1) throw ConfigError("train_dr: batch_size must be >= 1");

    AdamW opt({.lr = cfg.learning_rate, .weight_decay = cfg.weight_decay});
    DRTrainReport report;
    report.eval_ndcg10.push_back(probe_ndcg10(encoder, probe, cfg.threads));
    int best_epoch = 0;
    double best_ndcg = report.eval_ndcg10[0];
    auto best_snapshot = encoder.snapshot();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 0x6472ULL, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(pairs_train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t steps = 0;
        const size_t bsz = static_cast<size_t>(cfg.batch_size);
        for (size_t off = 0; off < order.size(); off += bsz) {
            const size_t end = std::min(order.size(), off + bsz);
            if (end - off < 2) {
                // softmax over one candidate is identically zero loss
                ++report.skipped_singleton_batches;
                std::fprintf(stderr, "[train-dr] skipping singleton batch at epoch %d\n", epoch);
                continue;
            }
            encoder.zero_grads();
            Tape tape;
            std::vector<Tensor> qvecs, dvecs;
            for (size_t i = off; i < end; ++i) {
                const PairRef& pair = pairs_train[order[i]];
                qvecs.push_back(encoder.encode_query(pair.query_text, &tape));
                dvecs.push_back(encoder.encode_doc(pair.doc_text, &tape));
            }
            Tensor q = ops::stack_rows(qvecs, &tape);
            Tensor d = ops::stack_rows(dvecs, &tape);
            Tensor loss = in_batch_loss(q, d, &tape);
            const float value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("train_dr: loss diverged at epoch " + std::to_string(epoch));
            }
            ops::backward(loss, tape);
            opt.step(encoder.parameters());
            epoch_loss += value;
            ++steps;
        }
        report.epoch_loss.push_back(steps > 0 ? epoch_loss / static_cast<double>(steps) : 0.0);

        const double ndcg = probe_ndcg10(encoder, probe, cfg.threads);
        report.eval_ndcg10.push_back(ndcg);
        if (ndcg > best_ndcg) {
            best_ndcg = ndcg;
            best_epoch = epoch;
            best_snapshot = encoder.snapshot();
        } else if (epoch - best_epoch >= cfg.patience) {
            report.stopped_early = true;
            break;
        }
    }
    report.best_epoch = best_epoch;
    encoder.restore(best_snapshot);
    return report;
}

}  // namespace promptaug
