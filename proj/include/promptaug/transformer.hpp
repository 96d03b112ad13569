#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "promptaug/adamw.hpp"
#include "promptaug/ops.hpp"
#include "promptaug/tape.hpp"
#include "promptaug/tensor.hpp"

namespace promptaug {

// Pre-norm transformer stack shared by the causal LM and the bi-encoder
// towers: token + learned absolute position embeddings, multi-head attention,
// GELU MLP, final layer norm. Prefix rows (the soft prompt) are concatenated
// ahead of the token embeddings and receive ordinary positional treatment.
class TransformerTrunk {
  public:
    TransformerTrunk() = default;
    TransformerTrunk(int num_layers, int d_model, int num_heads, int context_length,
                     int vocab_size, bool causal, uint64_t seed, const std::string& name_prefix);

    // Hidden states [(p+n) x d_model]; p is the prefix row count (0 if null).
    Tensor forward(const Tensor* prefix_rows, std::span<const int> ids, Tape* tape) const;

    std::span<Parameter> parameters() { return params_; }
    std::span<const Parameter> parameters() const { return params_; }

    const Tensor& token_embeddings() const { return tok_emb_; }

    int d_model() const { return d_model_; }
    int context_length() const { return context_length_; }

    void set_trainable(bool trainable);
    void zero_grads();

    std::vector<std::vector<float>> snapshot() const;
    void restore(const std::vector<std::vector<float>>& snap);

  private:
    struct Layer {
        Tensor ln1_gain, ln1_bias;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_gain, ln2_bias;
        Tensor w1, b1, w2, b2;
    };

    Tensor attention(const Tensor& x, const Layer& layer, Tape* tape) const;

    int num_layers_ = 0;
    int d_model_ = 0;
    int num_heads_ = 0;
    int context_length_ = 0;
    bool causal_ = true;

    Tensor tok_emb_;
    Tensor pos_emb_;
    std::vector<Layer> layers_;
    Tensor lnf_gain_, lnf_bias_;
    std::vector<Parameter> params_;
};

}  // namespace promptaug
