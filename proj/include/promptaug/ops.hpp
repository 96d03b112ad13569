#pragma once

#include <cstdint>
#include <span>

#include "promptaug/tape.hpp"
#include "promptaug/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward result and,
// when a tape is supplied, records a closure that accumulates input gradients
// from the output gradient. Passing tape == nullptr runs pure inference.
namespace promptaug::ops {

// c[m×n] = a[m×k] · b[k×n]
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape);

// Row gather: out[r, :] = table[ids[r], :]. Duplicate ids accumulate their
// gradients into the same table row.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, Tape* tape);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);

// out[i, :] = x[i, :] + bias  (x is [n×d], bias is [d])
Tensor add_row_bias(const Tensor& x, const Tensor& bias, Tape* tape);

Tensor scale(const Tensor& x, float s, Tape* tape);

// Normalizes each row of x over the last dimension, then applies gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps, Tape* tape);

Tensor gelu(const Tensor& x, Tape* tape);

// Column slice [c0, c1) of a [n×d] matrix.
Tensor slice_cols(const Tensor& x, size_t c0, size_t c1, Tape* tape);

Tensor transpose(const Tensor& x, Tape* tape);

// Row-wise softmax of a [n×m] matrix. With causal=true (requires n == m) row i
// only sees columns j <= i; masked columns get exactly zero probability.
Tensor softmax_rows(const Tensor& scores, bool causal, Tape* tape);

Tensor concat_cols(std::span<const Tensor> parts, Tape* tape);

// Stack rank-1 vectors of equal width into a [n×d] matrix.
Tensor stack_rows(std::span<const Tensor> rows, Tape* tape);

// Vertical concatenation of two [n×d] matrices along rows.
Tensor concat_rows(const Tensor& a, const Tensor& b, Tape* tape);

// Column means: [n×d] -> [d].
Tensor mean_rows(const Tensor& x, Tape* tape);

// Stable -log softmax(logits)[target] for a rank-1 logits vector.
Tensor softmax_cross_entropy(const Tensor& logits, int target, Tape* tape);

// Mean token-level cross entropy over the rows where mask is true.
// logits is [n×V]; targets/mask have length n.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets,
                          std::span<const uint8_t> mask, Tape* tape);

// Seeds d(loss)/d(loss) = 1 and runs the tape backward.
void backward(Tensor& loss, Tape& tape);

bool all_finite(const Tensor& t);

}  // namespace promptaug::ops
