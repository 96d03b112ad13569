#include "promptaug/ops.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "promptaug/errors.hpp"
#include "promptaug/kernels.hpp"

namespace promptaug::ops {

namespace {

void require_rank(const Tensor& t, size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + t.shape_string());
    }
}

}  // namespace

bool all_finite(const Tensor& t) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    Tensor c({m, n});
    const auto& ops = kernels::active();
    {
        const float* pa = a.data();
        const float* pb = b.data();
        float* pc = c.data();
        for (size_t i = 0; i < m; ++i) {
            for (size_t p = 0; p < k; ++p) {
                const float aip = pa[i * k + p];
                if (aip != 0.0f) ops.axpy(aip, pb + p * n, pc + i * n, n);
            }
        }
    }
    if (tape != nullptr) {
        tape->touch(a);
        tape->touch(b);
        tape->touch(c);
        tape->record([a = a, b = b, c, m, k, n]() mutable {
            const auto& ops = kernels::active();
            const std::span<const float> dc = std::as_const(c).grad();
            {
                std::span<float> da = a.grad();
                const float* pb = b.data();
                for (size_t i = 0; i < m; ++i) {
                    for (size_t p = 0; p < k; ++p) {
                        da[i * k + p] += ops.dot(dc.data() + i * n, pb + p * n, n);
                    }
                }
            }
            {
                std::span<float> db = b.grad();
                const float* pa = a.data();
                for (size_t i = 0; i < m; ++i) {
                    for (size_t p = 0; p < k; ++p) {
                        const float aip = pa[i * k + p];
                        if (aip != 0.0f) ops.axpy(aip, dc.data() + i * n, db.data() + p * n, n);
                    }
                }
            }
        });
    }
    return c;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, Tape* tape) {
    require_rank(table, 2, "embedding_lookup");
    const size_t vocab = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab) {
            throw IndexError("embedding_lookup: id " + std::to_string(id) +
                             " outside table of " + std::to_string(vocab) + " rows");
        }
    }
    Tensor out({ids.size(), d});
    for (size_t r = 0; r < ids.size(); ++r) {
        const float* src = table.data() + static_cast<size_t>(ids[r]) * d;
        std::copy(src, src + d, out.data() + r * d);
    }
    if (tape != nullptr) {
        std::vector<int> ids_copy(ids.begin(), ids.end());
        tape->touch(table);
        tape->touch(out);
        tape->record([table = table, out, ids_copy, d]() mutable {
            const auto& ops = kernels::active();
            std::span<float> dt = table.grad();
            const std::span<const float> dout = std::as_const(out).grad();
            for (size_t r = 0; r < ids_copy.size(); ++r) {
                ops.axpy(1.0f, dout.data() + r * d,
                         dt.data() + static_cast<size_t>(ids_copy[r]) * d, d);
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    if (!a.same_shape(b)) {
        throw DimensionError("add: shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    Tensor out(a.shape());
    kernels::active().vadd(a.data(), b.data(), out.data(), a.numel());
    if (tape != nullptr) {
        tape->touch(a);
        tape->touch(b);
        tape->touch(out);
        tape->record([a = a, b = b, out]() mutable {
            const auto& ops = kernels::active();
            const std::span<const float> dout = std::as_const(out).grad();
            ops.axpy(1.0f, dout.data(), a.grad().data(), dout.size());
            ops.axpy(1.0f, dout.data(), b.grad().data(), dout.size());
        });
    }
    return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
    require_rank(x, 2, "add_row_bias");
    require_rank(bias, 1, "add_row_bias");
    const size_t n = x.dim(0), d = x.dim(1);
    if (bias.dim(0) != d) {
        throw DimensionError("add_row_bias: bias " + bias.shape_string() + " does not match " +
                             x.shape_string());
    }
    Tensor out({n, d});
    const auto& ops = kernels::active();
    for (size_t i = 0; i < n; ++i) {
        ops.vadd(x.data() + i * d, bias.data(), out.data() + i * d, d);
    }
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(bias);
        tape->touch(out);
        tape->record([x = x, bias = bias, out, n, d]() mutable {
            const auto& ops = kernels::active();
            const std::span<const float> dout = std::as_const(out).grad();
            ops.axpy(1.0f, dout.data(), x.grad().data(), dout.size());
            std::span<float> db = bias.grad();
            for (size_t i = 0; i < n; ++i) ops.axpy(1.0f, dout.data() + i * d, db.data(), d);
        });
    }
    return out;
}

Tensor scale(const Tensor& x, float s, Tape* tape) {
    Tensor out = x.clone();
    kernels::active().scale(s, out.data(), out.numel());
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(out);
        tape->record([x = x, out, s]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            kernels::active().axpy(s, dout.data(), x.grad().data(), dout.size());
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps,
                  Tape* tape) {
    require_rank(x, 2, "layer_norm");
    const size_t n = x.dim(0), d = x.dim(1);
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layer_norm: gain/bias width does not match " + x.shape_string());
    }
    Tensor out({n, d});
    Tensor normed({n, d});  // kept for backward
    std::vector<float> inv_std(n);
    const auto& ops = kernels::active();
    for (size_t i = 0; i < n; ++i) {
        const float* row = x.data() + i * d;
        const float mean = ops.reduce_sum(row, d) / static_cast<float>(d);
        float var = 0.0f;
        for (size_t j = 0; j < d; ++j) {
            const float c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + eps);
        inv_std[i] = inv;
        float* nrow = normed.data() + i * d;
        float* orow = out.data() + i * d;
        for (size_t j = 0; j < d; ++j) {
            nrow[j] = (row[j] - mean) * inv;
            orow[j] = nrow[j] * gain.data()[j] + bias.data()[j];
        }
    }
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(gain);
        tape->touch(bias);
        tape->touch(out);
        tape->record([x = x, gain = gain, bias = bias, out, normed, inv_std, n, d]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            std::span<float> dx = x.grad();
            std::span<float> dg = gain.grad();
            std::span<float> db = bias.grad();
            std::vector<float> dnorm(d);
            for (size_t i = 0; i < n; ++i) {
                const float* dorow = dout.data() + i * d;
                const float* nrow = normed.data() + i * d;
                float mean_dn = 0.0f, mean_dn_n = 0.0f;
                for (size_t j = 0; j < d; ++j) {
                    dnorm[j] = dorow[j] * gain.data()[j];
                    mean_dn += dnorm[j];
                    mean_dn_n += dnorm[j] * nrow[j];
                    dg[j] += dorow[j] * nrow[j];
                    db[j] += dorow[j];
                }
                mean_dn /= static_cast<float>(d);
                mean_dn_n /= static_cast<float>(d);
                float* dxrow = dx.data() + i * d;
                for (size_t j = 0; j < d; ++j) {
                    dxrow[j] += inv_std[i] * (dnorm[j] - mean_dn - nrow[j] * mean_dn_n);
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
    Tensor out(x.shape());
    constexpr float inv_sqrt2 = 0.70710678118654752f;
    for (size_t i = 0; i < x.numel(); ++i) {
        const float v = x.data()[i];
        out.data()[i] = 0.5f * v * (1.0f + std::erf(v * inv_sqrt2));
    }
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(out);
        tape->record([x = x, out]() mutable {
            constexpr float inv_sqrt2 = 0.70710678118654752f;
            const float inv_sqrt2pi = 1.0f / std::sqrt(2.0f * std::numbers::pi_v<float>);
            const std::span<const float> dout = std::as_const(out).grad();
            std::span<float> dx = x.grad();
            for (size_t i = 0; i < dout.size(); ++i) {
                const float v = x.data()[i];
                const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
                const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
                dx[i] += dout[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t c1, Tape* tape) {
    require_rank(x, 2, "slice_cols");
    const size_t n = x.dim(0), d = x.dim(1);
    if (c0 >= c1 || c1 > d) {
        throw DimensionError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                             ") invalid for " + x.shape_string());
    }
    const size_t w = c1 - c0;
    Tensor out({n, w});
    for (size_t i = 0; i < n; ++i) {
        const float* src = x.data() + i * d + c0;
        std::copy(src, src + w, out.data() + i * w);
    }
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(out);
        tape->record([x = x, out, c0, n, d, w]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            std::span<float> dx = x.grad();
            for (size_t i = 0; i < n; ++i) {
                kernels::active().axpy(1.0f, dout.data() + i * w, dx.data() + i * d + c0, w);
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& x, Tape* tape) {
    require_rank(x, 2, "transpose");
    const size_t n = x.dim(0), d = x.dim(1);
    Tensor out({d, n});
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < d; ++j) out.data()[j * n + i] = x.data()[i * d + j];
    }
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(out);
        tape->record([x = x, out, n, d]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            std::span<float> dx = x.grad();
            for (size_t i = 0; i < n; ++i) {
                for (size_t j = 0; j < d; ++j) dx[i * d + j] += dout[j * n + i];
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& scores, bool causal, Tape* tape) {
    require_rank(scores, 2, "softmax_rows");
    const size_t n = scores.dim(0), m = scores.dim(1);
    if (causal && n != m) {
        throw DimensionError("softmax_rows: causal mask needs a square matrix, got " +
                             scores.shape_string());
    }
    Tensor probs({n, m});
    for (size_t i = 0; i < n; ++i) {
        const size_t active = causal ? i + 1 : m;
        const float* src = scores.data() + i * m;
        float* dst = probs.data() + i * m;
        std::copy(src, src + active, dst);
        kernels::softmax_inplace(dst, active);
        std::fill(dst + active, dst + m, 0.0f);
    }
    if (tape != nullptr) {
        tape->touch(scores);
        tape->touch(probs);
        tape->record([scores = scores, probs, causal, n, m]() mutable {
            const std::span<const float> dp = std::as_const(probs).grad();
            std::span<float> ds = scores.grad();
            for (size_t i = 0; i < n; ++i) {
                const size_t active = causal ? i + 1 : m;
                const float* prow = probs.data() + i * m;
                const float* dprow = dp.data() + i * m;
                const float inner = kernels::active().dot(dprow, prow, active);
                float* dsrow = ds.data() + i * m;
                for (size_t j = 0; j < active; ++j) {
                    dsrow[j] += prow[j] * (dprow[j] - inner);
                }
            }
        });
    }
    return probs;
}

Tensor concat_cols(std::span<const Tensor> parts, Tape* tape) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const size_t n = parts[0].dim(0);
    size_t total = 0;
    for (const Tensor& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != n) {
            throw DimensionError("concat_cols: row mismatch " + p.shape_string());
        }
        total += p.dim(1);
    }
    Tensor out({n, total});
    size_t off = 0;
    for (const Tensor& p : parts) {
        const size_t w = p.dim(1);
        for (size_t i = 0; i < n; ++i) {
            std::copy(p.data() + i * w, p.data() + (i + 1) * w, out.data() + i * total + off);
        }
        off += w;
    }
    if (tape != nullptr) {
        std::vector<Tensor> held(parts.begin(), parts.end());
        for (const Tensor& p : held) tape->touch(p);
        tape->touch(out);
        tape->record([held, out, n, total]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            size_t off = 0;
            for (Tensor& p : held) {
                const size_t w = p.dim(1);
                std::span<float> dp = p.grad();
                for (size_t i = 0; i < n; ++i) {
                    kernels::active().axpy(1.0f, dout.data() + i * total + off, dp.data() + i * w,
                                           w);
                }
                off += w;
            }
        });
    }
    return out;
}

Tensor stack_rows(std::span<const Tensor> rows, Tape* tape) {
    if (rows.empty()) throw DimensionError("stack_rows: no inputs");
    const size_t d = rows[0].numel();
    for (const Tensor& r : rows) {
        require_rank(r, 1, "stack_rows");
        if (r.numel() != d) throw DimensionError("stack_rows: width mismatch " + r.shape_string());
    }
    Tensor out({rows.size(), d});
    for (size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].data(), rows[i].data() + d, out.data() + i * d);
    }
    if (tape != nullptr) {
        std::vector<Tensor> held(rows.begin(), rows.end());
        for (const Tensor& r : held) tape->touch(r);
        tape->touch(out);
        tape->record([held, out, d]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            for (size_t i = 0; i < held.size(); ++i) {
                kernels::active().axpy(1.0f, dout.data() + i * d, held[i].grad().data(), d);
            }
        });
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b, Tape* tape) {
    require_rank(a, 2, "concat_rows");
    require_rank(b, 2, "concat_rows");
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("concat_rows: width mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    const size_t d = a.dim(1);
    Tensor out({a.dim(0) + b.dim(0), d});
    std::copy(a.data(), a.data() + a.numel(), out.data());
    std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    if (tape != nullptr) {
        tape->touch(a);
        tape->touch(b);
        tape->touch(out);
        tape->record([a = a, b = b, out]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            kernels::active().axpy(1.0f, dout.data(), a.grad().data(), a.numel());
            kernels::active().axpy(1.0f, dout.data() + a.numel(), b.grad().data(), b.numel());
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x, Tape* tape) {
    require_rank(x, 2, "mean_rows");
    const size_t n = x.dim(0), d = x.dim(1);
    Tensor out({d});
    const float inv = 1.0f / static_cast<float>(n);
    for (size_t i = 0; i < n; ++i) {
        kernels::active().axpy(inv, x.data() + i * d, out.data(), d);
    }
    if (tape != nullptr) {
        tape->touch(x);
        tape->touch(out);
        tape->record([x = x, out, n, d, inv]() mutable {
            const std::span<const float> dout = std::as_const(out).grad();
            std::span<float> dx = x.grad();
            for (size_t i = 0; i < n; ++i) {
                kernels::active().axpy(inv, dout.data(), dx.data() + i * d, d);
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, int target, Tape* tape) {
    require_rank(logits, 1, "softmax_cross_entropy");
    const size_t v = logits.dim(0);
    if (v == 0) throw DimensionError("softmax_cross_entropy: empty logits");
    if (target < 0 || static_cast<size_t>(target) >= v) {
        throw IndexError("softmax_cross_entropy: target " + std::to_string(target) +
                         " outside vocabulary of " + std::to_string(v));
    }
    const auto& k = kernels::active();
    const float max = k.reduce_max(logits.data(), v);
    float sum = 0.0f;
    for (size_t i = 0; i < v; ++i) sum += std::exp(logits.data()[i] - max);
    const float loss_val = std::log(sum) - (logits.data()[target] - max);
    if (!std::isfinite(loss_val)) throw NumericError("softmax_cross_entropy: non-finite loss");
    Tensor loss = Tensor::scalar(loss_val);
    if (tape != nullptr) {
        tape->touch(logits);
        tape->touch(loss);
        tape->record([logits = logits, loss, target, max, sum, v]() mutable {
            const float dl = std::as_const(loss).grad()[0];
            std::span<float> dx = logits.grad();
            for (size_t i = 0; i < v; ++i) {
                const float p = std::exp(logits.data()[i] - max) / sum;
                dx[i] += dl * (p - (static_cast<size_t>(target) == i ? 1.0f : 0.0f));
            }
        });
    }
    return loss;
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets,
                          std::span<const uint8_t> mask, Tape* tape) {
    require_rank(logits, 2, "cross_entropy_rows");
    const size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n || mask.size() != n) {
        throw DimensionError("cross_entropy_rows: targets/mask length " +
                             std::to_string(targets.size()) + "/" + std::to_string(mask.size()) +
                             " vs " + std::to_string(n) + " rows");
    }
    size_t n_masked = 0;
    for (uint8_t m : mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw ContractError("cross_entropy_rows: mask selects no positions");
    const auto& k = kernels::active();
    double total = 0.0;
    std::vector<float> row_max(n), row_sum(n);
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const int t = targets[i];
        if (t < 0 || static_cast<size_t>(t) >= v) {
            throw IndexError("cross_entropy_rows: target " + std::to_string(t) + " at row " +
                             std::to_string(i) + " outside vocabulary of " + std::to_string(v));
        }
        const float* row = logits.data() + i * v;
        const float max = k.reduce_max(row, v);
        float sum = 0.0f;
        for (size_t j = 0; j < v; ++j) sum += std::exp(row[j] - max);
        row_max[i] = max;
        row_sum[i] = sum;
        total += std::log(sum) - (row[t] - max);
    }
    const float loss_val = static_cast<float>(total / static_cast<double>(n_masked));
    if (!std::isfinite(loss_val)) throw NumericError("cross_entropy_rows: non-finite loss");
    Tensor loss = Tensor::scalar(loss_val);
    if (tape != nullptr) {
        std::vector<int> tcopy(targets.begin(), targets.end());
        std::vector<uint8_t> mcopy(mask.begin(), mask.end());
        tape->touch(logits);
        tape->touch(loss);
        tape->record([logits = logits, loss, tcopy, mcopy, row_max, row_sum, n, v, n_masked]() mutable {
            const float dl = std::as_const(loss).grad()[0] / static_cast<float>(n_masked);
            std::span<float> dx = logits.grad();
            for (size_t i = 0; i < n; ++i) {
                if (!mcopy[i]) continue;
                const float* row = logits.data() + i * v;
                float* drow = dx.data() + i * v;
                for (size_t j = 0; j < v; ++j) {
                    const float p = std::exp(row[j] - row_max[i]) / row_sum[i];
                    drow[j] += dl * (p - (static_cast<size_t>(tcopy[i]) == j ? 1.0f : 0.0f));
                }
            }
        });
    }
    return loss;
}

void backward(Tensor& loss, Tape& tape) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
    loss.grad()[0] = 1.0f;
    tape.backward();
}

}  // namespace promptaug::ops
