#include "promptaug/transformer.hpp"

#include <cmath>

#include "promptaug/errors.hpp"
#include "promptaug/rng.hpp"

namespace promptaug {

namespace {

constexpr float kLnEps = 1e-5f;
constexpr float kInitStd = 0.02f;

Tensor normal_init(Rng& rng, std::vector<size_t> shape, float std_dev) {
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = std_dev * rng.next_normal();
    return t;
}

}  // namespace

TransformerTrunk::TransformerTrunk(int num_layers, int d_model, int num_heads,
                                   int context_length, int vocab_size, bool causal,
                                   uint64_t seed, const std::string& name_prefix)
    : num_layers_(num_layers),
      d_model_(d_model),
      num_heads_(num_heads),
      context_length_(context_length),
      causal_(causal) {
    if (num_layers < 1 || d_model < 1 || num_heads < 1 || context_length < 1 || vocab_size < 1) {
        throw ConfigError("transformer: all dimensions must be positive");
    }
    if (d_model % num_heads != 0) {
        throw ConfigError("transformer: d_model " + std::to_string(d_model) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    Rng rng(mix_seed(seed, 0x7274756e6bULL));
    const auto d = static_cast<size_t>(d_model);
    const size_t hidden = 4 * d;

    tok_emb_ = normal_init(rng, {static_cast<size_t>(vocab_size), d}, kInitStd);
    pos_emb_ = normal_init(rng, {static_cast<size_t>(context_length), d}, kInitStd);

    auto ones = [&](size_t n) {
        Tensor t({n});
        for (float& v : t.values()) v = 1.0f;
        return t;
    };

    layers_.resize(static_cast<size_t>(num_layers));
    for (auto& layer : layers_) {
        layer.ln1_gain = ones(d);
        layer.ln1_bias = Tensor({d});
        layer.wq = normal_init(rng, {d, d}, kInitStd);
        layer.bq = Tensor({d});
        layer.wk = normal_init(rng, {d, d}, kInitStd);
        layer.bk = Tensor({d});
        layer.wv = normal_init(rng, {d, d}, kInitStd);
        layer.bv = Tensor({d});
        layer.wo = normal_init(rng, {d, d}, kInitStd);
        layer.bo = Tensor({d});
        layer.ln2_gain = ones(d);
        layer.ln2_bias = Tensor({d});
        layer.w1 = normal_init(rng, {d, hidden}, kInitStd);
        layer.b1 = Tensor({hidden});
        layer.w2 = normal_init(rng, {hidden, d}, kInitStd);
        layer.b2 = Tensor({d});
    }
    lnf_gain_ = ones(d);
    lnf_bias_ = Tensor({d});

    auto reg = [&](const Tensor& t, const std::string& name) {
        params_.push_back({t, true, name_prefix + name});
    };
    reg(tok_emb_, "tok_emb");
    reg(pos_emb_, "pos_emb");
    for (size_t l = 0; l < layers_.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer& layer = layers_[l];
        reg(layer.ln1_gain, p + "ln1.gain");
        reg(layer.ln1_bias, p + "ln1.bias");
        reg(layer.wq, p + "attn.wq");
        reg(layer.bq, p + "attn.bq");
        reg(layer.wk, p + "attn.wk");
        reg(layer.bk, p + "attn.bk");
        reg(layer.wv, p + "attn.wv");
        reg(layer.bv, p + "attn.bv");
        reg(layer.wo, p + "attn.wo");
        reg(layer.bo, p + "attn.bo");
        reg(layer.ln2_gain, p + "ln2.gain");
        reg(layer.ln2_bias, p + "ln2.bias");
        reg(layer.w1, p + "mlp.w1");
        reg(layer.b1, p + "mlp.b1");
        reg(layer.w2, p + "mlp.w2");
        reg(layer.b2, p + "mlp.b2");
    }
    reg(lnf_gain_, "lnf.gain");
    reg(lnf_bias_, "lnf.bias");
}

Tensor TransformerTrunk::attention(const Tensor& x, const Layer& layer, Tape* tape) const {
    const size_t head_dim = static_cast<size_t>(d_model_ / num_heads_);
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));

    Tensor q = ops::add_row_bias(ops::matmul(x, layer.wq, tape), layer.bq, tape);
    Tensor k = ops::add_row_bias(ops::matmul(x, layer.wk, tape), layer.bk, tape);
    Tensor v = ops::add_row_bias(ops::matmul(x, layer.wv, tape), layer.bv, tape);

    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(num_heads_));
    for (int h = 0; h < num_heads_; ++h) {
        const size_t c0 = static_cast<size_t>(h) * head_dim;
        const size_t c1 = c0 + head_dim;
        Tensor qh = ops::slice_cols(q, c0, c1, tape);
        Tensor kh = ops::slice_cols(k, c0, c1, tape);
        Tensor vh = ops::slice_cols(v, c0, c1, tape);
        Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh, tape), tape), inv_sqrt, tape);
        Tensor probs = ops::softmax_rows(scores, causal_, tape);
        heads.push_back(ops::matmul(probs, vh, tape));
    }
    Tensor ctx = ops::concat_cols(heads, tape);
    return ops::add_row_bias(ops::matmul(ctx, layer.wo, tape), layer.bo, tape);
}

Tensor TransformerTrunk::forward(const Tensor* prefix_rows, std::span<const int> ids,
                                 Tape* tape) const {
    const size_t p = prefix_rows != nullptr ? prefix_rows->dim(0) : 0;
    const size_t n = ids.size();
    if (p + n == 0) throw ContractError("transformer: empty input");
    if (prefix_rows != nullptr && prefix_rows->dim(1) != static_cast<size_t>(d_model_)) {
        throw DimensionError("transformer: prefix width " + prefix_rows->shape_string() +
                             " does not match d_model " + std::to_string(d_model_));
    }
    if (p + n > static_cast<size_t>(context_length_)) {
        throw LengthError("transformer: prefix " + std::to_string(p) + " + tokens " +
                          std::to_string(n) + " exceed context length " +
                          std::to_string(context_length_));
    }

    Tensor x;
    if (n > 0) {
        Tensor tok = ops::embedding_lookup(tok_emb_, ids, tape);
        x = (prefix_rows != nullptr) ? ops::concat_rows(*prefix_rows, tok, tape) : tok;
    } else {
        x = *prefix_rows;
    }

    std::vector<int> positions(p + n);
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    x = ops::add(x, ops::embedding_lookup(pos_emb_, positions, tape), tape);

    for (const Layer& layer : layers_) {
        Tensor normed = ops::layer_norm(x, layer.ln1_gain, layer.ln1_bias, kLnEps, tape);
        x = ops::add(x, attention(normed, layer, tape), tape);
        Tensor normed2 = ops::layer_norm(x, layer.ln2_gain, layer.ln2_bias, kLnEps, tape);
        Tensor hidden = ops::gelu(
            ops::add_row_bias(ops::matmul(normed2, layer.w1, tape), layer.b1, tape), tape);
        Tensor mlp = ops::add_row_bias(ops::matmul(hidden, layer.w2, tape), layer.b2, tape);
        x = ops::add(x, mlp, tape);
    }
    return ops::layer_norm(x, lnf_gain_, lnf_bias_, kLnEps, tape);
}

void TransformerTrunk::set_trainable(bool trainable) {
    for (Parameter& p : params_) p.trainable = trainable;
}

void TransformerTrunk::zero_grads() {
    for (Parameter& p : params_) p.tensor.zero_grad();
}

std::vector<std::vector<float>> TransformerTrunk::snapshot() const {
    std::vector<std::vector<float>> snap;
    snap.reserve(params_.size());
    for (const Parameter& p : params_) {
        snap.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    }
    return snap;
}

void TransformerTrunk::restore(const std::vector<std::vector<float>>& snap) {
    if (snap.size() != params_.size()) throw ContractError("transformer: snapshot size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) {
        if (snap[i].size() != params_[i].tensor.numel()) {
            throw ContractError("transformer: snapshot buffer mismatch at " + params_[i].name);
        }
        std::copy(snap[i].begin(), snap[i].end(), params_[i].tensor.data());
    }
}

}  // namespace promptaug
