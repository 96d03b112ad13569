#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/bm25.hpp"
#include "promptaug/metrics.hpp"
#include "promptaug/splits.hpp"
#include "promptaug/transformer.hpp"
#include "promptaug/vocab.hpp"

namespace promptaug {

struct EncoderConfig {
    int num_layers = 2;
    int d_model = 128;
    int num_heads = 4;
    int context_length = 128;
    int vocab_size = 0;

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
};

// Two-tower (optionally shared) transformer encoders with mean pooling.
// Similarity is the raw dot product; no normalization anywhere.
class BiEncoder {
  public:
    BiEncoder() = default;
    BiEncoder(EncoderConfig cfg, bool shared_towers, Vocabulary vocab, uint64_t seed);

    // Mean-pooled final-layer state, one rank-1 [d] vector. Empty text encodes
    // as the lone <eos> token with a warning.
    Tensor encode_query(const std::string& text, Tape* tape = nullptr) const;
    Tensor encode_doc(const std::string& text, Tape* tape = nullptr) const;

    // Row-major [texts.size() x d]; each text is encoded independently so the
    // batch equals the one-by-one loop exactly.
    std::vector<float> encode_docs(std::span<const std::string> texts, int threads) const;

    std::span<Parameter> parameters() { return all_params_; }
    std::span<const Parameter> parameters() const { return all_params_; }
    void zero_grads();

    const EncoderConfig& config() const { return cfg_; }
    bool shared_towers() const { return shared_; }
    const Vocabulary& vocab() const { return vocab_; }

    uint64_t fingerprint() const;

    std::vector<std::vector<float>> snapshot() const;
    void restore(const std::vector<std::vector<float>>& snap);

    void save(const std::string& path) const;
    static BiEncoder load(const std::string& path);

  private:
    Tensor encode(const TransformerTrunk& trunk, const std::string& text, Tape* tape) const;

    EncoderConfig cfg_;
    bool shared_ = false;
    Vocabulary vocab_;
    TransformerTrunk query_trunk_;
    TransformerTrunk doc_trunk_;  // unused when shared_
    std::vector<Parameter> all_params_;
};

// In-batch-negatives objective: S = Q D^T, loss = mean_i of
// -log softmax(S[i,:])[i]. Exposed for direct testing.
Tensor in_batch_loss(const Tensor& queries, const Tensor& docs, Tape* tape);

struct CorpusEmbeddings {
    std::vector<std::string> doc_ids;
    std::vector<float> matrix;  // row i corresponds to doc_ids[i]
    size_t dim = 0;
    uint64_t encoder_fingerprint = 0;

    void save(const std::string& path) const;
    static CorpusEmbeddings load(const std::string& path);
};

CorpusEmbeddings index_corpus(const BiEncoder& encoder,
                              std::span<const std::pair<std::string, std::string>> docs,
                              int threads);

// Exact top-k by dot product over every row; ties ascending doc_id. Scores are
// double-accumulated so the ordering matches a naive double-precision rescore.
ScoredList retrieve(const BiEncoder& encoder, const CorpusEmbeddings& emb,
                    const std::string& query_text, size_t k);

// Re-score the top-n BM25 candidates with the bi-encoder; candidates only.
ScoredList rerank_bm25(const BiEncoder& encoder, const InvertedIndex& index,
                       const std::map<std::string, std::string>& corpus_texts,
                       const std::string& query_text, size_t n = 1000, int threads = 1);

struct DRTrainConfig {
    int batch_size = 32;
    float learning_rate = 1e-4f;  // from-scratch towers; 2e-5 available as a flag
    float weight_decay = 0.01f;
    int max_epochs = 20;
    int patience = 10;
    uint64_t seed = 0;
    int threads = 1;

    nlohmann::json to_json() const;
    static DRTrainConfig from_json(const nlohmann::json& j);
};

struct EvalProbe {
    std::vector<std::pair<std::string, std::string>> corpus;  // doc_id, text
    std::map<std::string, std::string> queries;               // query_id -> text
    Qrels qrels;
};

struct DRTrainReport {
    std::vector<double> epoch_loss;
    std::vector<double> eval_ndcg10;  // index 0 is the pre-training probe
    int best_epoch = 0;
    bool stopped_early = false;
    size_t skipped_singleton_batches = 0;

    nlohmann::json to_json() const;
};

// Trains in place and leaves the encoder at its best-probe checkpoint.
DRTrainReport train_dr(BiEncoder& encoder, std::span<const PairRef> pairs_train,
                       const EvalProbe& probe, const DRTrainConfig& cfg);

}  // namespace promptaug
