#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/transformer.hpp"
#include "promptaug/vocab.hpp"

namespace promptaug {

struct LMConfig {
    int num_layers = 4;
    int d_model = 128;
    int num_heads = 4;
    int context_length = 512;
    int vocab_size = 0;
    bool tied_output = false;

    nlohmann::json to_json() const;
    static LMConfig from_json(const nlohmann::json& j);
};

struct GenerationConfig {
    enum class Mode { kGreedy, kSample };
    Mode mode = Mode::kGreedy;
    float temperature = 1.0f;
    int top_k = 0;  // 0 disables top-k filtering
    int max_new_tokens = 32;
    std::vector<int> stop_ids = {Vocabulary::kEos};
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static GenerationConfig from_json(const nlohmann::json& j);
};

// One scored sequence: token ids plus the boolean mask of positions whose
// next-token prediction enters the loss. Position 0 is never maskable.
struct MaskedSequence {
    std::vector<int> ids;
    std::vector<uint8_t> loss_mask;
};

// Decoder-only causal LM with an optional prepended soft-prompt prefix.
class DecoderLM {
  public:
    DecoderLM() = default;
    DecoderLM(LMConfig cfg, uint64_t seed);

    const LMConfig& config() const { return cfg_; }

    // Full logits [(p+n) x V]; position i predicts position i+1.
    Tensor forward(const Tensor* prefix_embeddings, std::span<const int> ids, Tape* tape) const;

    // Mean negative log-likelihood over the masked positions. Each masked
    // token is conditioned only on earlier positions and the prefix.
    Tensor loss(const Tensor* prefix_embeddings, std::span<const int> ids,
                std::span<const uint8_t> loss_mask, Tape* tape) const;

    // Sum of masked NLL and the masked-token count, no tape.
    std::pair<double, size_t> masked_nll(const Tensor* prefix_embeddings,
                                         const MaskedSequence& seq) const;

    std::vector<int> generate(const Tensor* prefix_embeddings, std::span<const int> prompt_ids,
                              const GenerationConfig& cfg) const;

    // exp of the token-pooled mean NLL across all instances.
    double perplexity(const Tensor* prefix_embeddings, std::span<const MaskedSequence> dataset,
                      int threads = 1) const;

    std::span<Parameter> parameters() { return all_params_; }
    std::span<const Parameter> parameters() const { return all_params_; }
    void set_trainable(bool trainable);
    bool all_frozen() const;
    void zero_grads();

    const Tensor& token_embeddings() const { return trunk_.token_embeddings(); }

    uint64_t fingerprint() const;

    std::vector<std::vector<float>> snapshot() const;
    void restore(const std::vector<std::vector<float>>& snap);

    void save(const std::string& path, const Vocabulary& vocab) const;
    static std::pair<DecoderLM, Vocabulary> load(const std::string& path);

  private:
    Tensor output_logits(const Tensor& hidden, Tape* tape) const;

    LMConfig cfg_;
    TransformerTrunk trunk_;
    Tensor out_proj_;  // unused when tied_output
    std::vector<Parameter> all_params_;
};

struct PretrainConfig {
    int epochs = 4;
    float learning_rate = 3e-3f;
    int chunk_length = 128;
    uint64_t seed = 0;
};

struct PretrainReport {
    std::vector<double> epoch_mean_loss;
    double final_loss = 0.0;
    size_t steps = 0;
};

// Next-token pretraining over the corpus; every parameter must be trainable.
PretrainReport pretrain(DecoderLM& lm, std::span<const std::string> corpus_texts,
                        const Vocabulary& vocab, const PretrainConfig& cfg);

}  // namespace promptaug
