#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "promptaug/adamw.hpp"
#include "promptaug/errors.hpp"
#include "promptaug/finite_diff.hpp"
#include "promptaug/ops.hpp"
#include "promptaug/rng.hpp"

using namespace promptaug;

namespace {

Tensor random_tensor(Rng& rng, std::vector<size_t> shape, float scale = 1.0f) {
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = scale * rng.next_normal();
    return t;
}

// Relative error against the finite-difference value, spec tolerance style:
// |analytic - fd| / max(1, |fd|).
void check_grad_matches(float analytic, float fd, double tol = 1e-3) {
    const double err = std::abs(double(analytic) - double(fd)) / std::max(1.0, std::abs(double(fd)));
    CHECK(err < tol);
}

// Gradcheck every coordinate of `input` for a scalar-valued graph. rebuild()
// must construct the full forward from the (possibly perturbed) input.
void gradcheck(const ScalarFn& f, const Tensor& input, const Tensor& analytic_grad,
               float eps = 1e-3f) {
    for (size_t i = 0; i < input.numel(); ++i) {
        const float fd = finite_diff_coord(f, input, i, eps);
        check_grad_matches(std::as_const(analytic_grad).values()[i], fd);
    }
}

}  // namespace

TEST_CASE("matmul identity and dot product cases") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m({2, 2}, {1, 2, 3, 4});
    Tensor c = ops::matmul(eye, m, nullptr);
    CHECK(c.values()[0] == 1.0f);
    CHECK(c.values()[1] == 2.0f);
    CHECK(c.values()[2] == 3.0f);
    CHECK(c.values()[3] == 4.0f);

    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    CHECK(ops::matmul(a, b, nullptr).item() == 11.0f);

    Tensor bad({3, 1}, {1, 2, 3});
    CHECK_THROWS_AS(ops::matmul(a, bad, nullptr), DimensionError);
    CHECK_THROWS_WITH_AS(ops::matmul(a, bad, nullptr),
                         doctest::Contains("[1x2]"), DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(11);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});

    Tape tape;
    Tensor c = ops::matmul(a, b, &tape);
    // Scalarize with a fixed weighting so every entry of c matters.
    Tensor w = random_tensor(rng, {2, 1});
    Tensor col = ops::matmul(c, w, &tape);
    Tensor ones({1, 3}, {1, 1, 1});
    Tensor loss = ops::matmul(ones, col, &tape);
    ops::backward(loss, tape);

    auto loss_of_a = [&](const Tensor& probe) {
        Tensor cc = ops::matmul(probe, b, nullptr);
        return ops::matmul(ones, ops::matmul(cc, w, nullptr), nullptr).item();
    };
    gradcheck(loss_of_a, a, a.clone_grad_as_tensor());
}

TEST_CASE("embedding lookup gather, duplicate accumulation, gradcheck") {
    Tensor table({3, 2}, {0, 1, 10, 11, 20, 21});
    std::vector<int> ids = {2, 0};
    Tensor out = ops::embedding_lookup(table, ids, nullptr);
    CHECK(out.values()[0] == 20.0f);
    CHECK(out.values()[1] == 21.0f);
    CHECK(out.values()[2] == 0.0f);
    CHECK(out.values()[3] == 1.0f);

    std::vector<int> oob = {3};
    CHECK_THROWS_AS(ops::embedding_lookup(table, oob, nullptr), IndexError);

    // ids=[1,1] with upstream grad of ones: row 1 accumulates 2*ones.
    {
        Tape tape;
        std::vector<int> dup = {1, 1};
        Tensor gathered = ops::embedding_lookup(table, dup, &tape);
        for (float& g : gathered.grad()) g = 1.0f;
        tape.backward();
        auto tg = std::as_const(table).grad();
        CHECK(tg[2] == 2.0f);
        CHECK(tg[3] == 2.0f);
        CHECK(tg[0] == 0.0f);
    }

    // Finite-difference check through a weighted sum.
    Rng rng(5);
    Tensor table2 = random_tensor(rng, {5, 3});
    Tensor w = random_tensor(rng, {3, 1});
    std::vector<int> ids2 = {4, 1, 1, 0};
    Tensor ones({1, 4}, {1, 1, 1, 1});
    Tape tape;
    Tensor loss = ops::matmul(ones, ops::matmul(ops::embedding_lookup(table2, ids2, &tape), w, &tape), &tape);
    ops::backward(loss, tape);
    auto f = [&](const Tensor& probe) {
        return ops::matmul(ones, ops::matmul(ops::embedding_lookup(probe, ids2, nullptr), w, nullptr), nullptr)
            .item();
    };
    gradcheck(f, table2, table2.clone_grad_as_tensor());
}

TEST_CASE("softmax cross entropy examples") {
    // Uniform logits over V=10: loss = ln 10 for any target.
    Tensor uniform({10});
    for (float& v : uniform.values()) v = 0.7f;
    CHECK(ops::softmax_cross_entropy(uniform, 3, nullptr).item() ==
          doctest::Approx(std::log(10.0f)).epsilon(1e-6));

    // Dominated softmax must not overflow.
    Tensor hot({2}, {1000.0f, 0.0f});
    CHECK(ops::softmax_cross_entropy(hot, 0, nullptr).item() == doctest::Approx(0.0f));

    CHECK_THROWS_AS(ops::softmax_cross_entropy(hot, 2, nullptr), IndexError);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(hot, -1, nullptr), IndexError);
}

TEST_CASE("softmax cross entropy gradient and shift invariance") {
    Rng rng(123);
    Tensor logits = random_tensor(rng, {7}, 2.0f);
    const int target = 4;

    Tape tape;
    Tensor loss = ops::softmax_cross_entropy(logits, target, &tape);
    ops::backward(loss, tape);
    auto f = [&](const Tensor& probe) {
        return ops::softmax_cross_entropy(probe, target, nullptr).item();
    };
    gradcheck(f, logits, logits.clone_grad_as_tensor());

    // softmax_cross_entropy(logits + c, t) == softmax_cross_entropy(logits, t)
    for (float shift : {-50.0f, 0.25f, 3.0f, 1000.0f}) {
        Tensor shifted = logits.clone();
        for (float& v : shifted.values()) v += shift;
        CHECK(ops::softmax_cross_entropy(shifted, target, nullptr).item() ==
              doctest::Approx(loss.item()).epsilon(1e-5));
    }
}

TEST_CASE("adamw frozen parameters are never touched") {
    Rng rng(3);
    std::vector<Parameter> params;
    params.push_back({random_tensor(rng, {4, 4}), false, "frozen"});
    params.push_back({random_tensor(rng, {4}), true, "live"});
    for (auto& p : params) {
        for (float& g : p.tensor.grad()) g = 1.0f;
    }
    std::vector<float> frozen_before(params[0].tensor.values().begin(),
                                     params[0].tensor.values().end());
    std::vector<float> live_before(params[1].tensor.values().begin(),
                                   params[1].tensor.values().end());

    AdamW opt({.lr = 0.05f});
    for (int i = 0; i < 7; ++i) CHECK(opt.step(params));

    CHECK(std::memcmp(frozen_before.data(), params[0].tensor.data(),
                      frozen_before.size() * sizeof(float)) == 0);
    bool live_moved = false;
    for (size_t i = 0; i < live_before.size(); ++i) {
        if (live_before[i] != params[1].tensor.values()[i]) live_moved = true;
    }
    CHECK(live_moved);
}

TEST_CASE("adamw hand-executed first step and lr=0") {
    // Single scalar w=1, g=1, lr=0.1, wd=0, step 1 -> w ~ 0.9.
    std::vector<Parameter> params;
    params.push_back({Tensor({1}, {1.0f}), true, "w"});
    params[0].tensor.grad()[0] = 1.0f;
    AdamW opt({.lr = 0.1f, .weight_decay = 0.0f});
    CHECK(opt.step(params));
    CHECK(params[0].tensor.values()[0] == doctest::Approx(0.9f).epsilon(1e-4));

    // lr = 0 changes nothing even with weight decay configured.
    std::vector<Parameter> p2;
    p2.push_back({Tensor({2}, {0.5f, -2.0f}), true, "w"});
    p2[0].tensor.grad()[0] = 3.0f;
    p2[0].tensor.grad()[1] = -1.0f;
    AdamW zero({.lr = 0.0f, .weight_decay = 0.01f});
    CHECK(zero.step(p2));
    CHECK(p2[0].tensor.values()[0] == 0.5f);
    CHECK(p2[0].tensor.values()[1] == -2.0f);
}

TEST_CASE("adamw rejects non-finite gradients without side effects") {
    std::vector<Parameter> params;
    params.push_back({Tensor({2}, {1.0f, 2.0f}), true, "w"});
    params[0].tensor.grad()[0] = std::numeric_limits<float>::quiet_NaN();
    params[0].tensor.grad()[1] = 1.0f;
    AdamW opt({.lr = 0.1f});
    CHECK_FALSE(opt.step(params));
    CHECK(opt.steps_taken() == 0);
    CHECK(params[0].tensor.values()[0] == 1.0f);
    CHECK(params[0].tensor.values()[1] == 2.0f);
}

TEST_CASE("finite difference oracle on closed forms") {
    // f(x) = sum(x): gradient of ones.
    Tensor x({4}, {1.0f, -2.0f, 0.5f, 3.0f});
    auto sum_fn = [](const Tensor& t) {
        float s = 0.0f;
        for (float v : t.values()) s += v;
        return s;
    };
    Tensor g = finite_diff_grad(sum_fn, x, 1e-3f);
    for (float v : g.values()) CHECK(v == doctest::Approx(1.0f).epsilon(1e-3));

    // f(x) = x*x at x=3: derivative 6.
    Tensor x3({1}, {3.0f});
    auto sq = [](const Tensor& t) { return t.values()[0] * t.values()[0]; };
    CHECK(finite_diff_coord(sq, x3, 0, 1e-3f) == doctest::Approx(6.0f).epsilon(1e-4));

    CHECK_THROWS_AS(finite_diff_coord(sq, x3, 0, 0.0f), ContractError);
    auto bad = [](const Tensor&) { return std::numeric_limits<float>::infinity(); };
    CHECK_THROWS_AS(finite_diff_coord(bad, x3, 0, 1e-3f), NumericError);
}

TEST_CASE("backward is deterministic across repeated passes") {
    Rng rng(77);
    Tensor a = random_tensor(rng, {4, 6});
    Tensor b = random_tensor(rng, {6, 3});
    Tensor w = random_tensor(rng, {3, 1});
    Tensor ones({1, 4}, {1, 1, 1, 1});

    Tape tape;
    Tensor loss = ops::matmul(ones, ops::matmul(ops::gelu(ops::matmul(a, b, &tape), &tape), w, &tape), &tape);

    ops::backward(loss, tape);
    std::vector<float> first(std::as_const(a).grad().begin(), std::as_const(a).grad().end());

    tape.zero_gradients();
    ops::backward(loss, tape);
    std::vector<float> second(std::as_const(a).grad().begin(), std::as_const(a).grad().end());
    CHECK(first == second);
}

TEST_CASE("composite op gradients vs finite differences") {
    Rng rng(2024);

    // One scalar graph exercising layer_norm, gelu, bias add, slice,
    // transpose, softmax and mean pooling, checked against the oracle on
    // >= 100 coordinates in total.
    Tensor x = random_tensor(rng, {5, 8});
    Tensor gain = random_tensor(rng, {8}, 0.5f);
    Tensor bias = random_tensor(rng, {8}, 0.5f);
    Tensor proj = random_tensor(rng, {4, 1});

    auto build = [&](const Tensor& input, Tape* tape) {
        Tensor ln = ops::layer_norm(input, gain, bias, 1e-5f, tape);
        Tensor act = ops::gelu(ln, tape);
        Tensor biased = ops::add_row_bias(act, bias, tape);
        Tensor left = ops::slice_cols(biased, 0, 4, tape);
        Tensor right = ops::slice_cols(biased, 4, 8, tape);
        Tensor scores = ops::matmul(left, ops::transpose(right, tape), tape);
        Tensor probs = ops::softmax_rows(scores, true, tape);
        Tensor ctx = ops::matmul(probs, left, tape);
        Tensor pooled = ops::mean_rows(ctx, tape);
        Tensor prow({1, 4});
        std::copy(pooled.data(), pooled.data() + 4, prow.data());
        // stitch pooled back through stack_rows to keep the graph connected
        std::vector<Tensor> rows = {pooled, pooled};
        Tensor stacked = ops::stack_rows(rows, tape);
        Tensor reduced = ops::matmul(stacked, proj, tape);
        Tensor ones({1, 2}, {1, 1});
        return ops::matmul(ones, reduced, tape);
    };

    Tape tape;
    Tensor loss = build(x, &tape);
    ops::backward(loss, tape);
    auto f = [&](const Tensor& probe) { return build(probe, nullptr).item(); };
    gradcheck(f, x, x.clone_grad_as_tensor());

    // cross_entropy_rows agrees with per-row softmax_cross_entropy and its
    // gradient matches the oracle.
    Tensor logits = random_tensor(rng, {6, 9}, 2.0f);
    std::vector<int> targets = {1, 3, 0, 8, 2, 5};
    std::vector<uint8_t> mask = {0, 1, 1, 0, 1, 0};
    Tape t2;
    Tensor batch_loss = ops::cross_entropy_rows(logits, targets, mask, &t2);
    float manual = 0.0f;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        Tensor row({9});
        std::copy(logits.data() + i * 9, logits.data() + (i + 1) * 9, row.data());
        manual += ops::softmax_cross_entropy(row, targets[i], nullptr).item();
    }
    CHECK(batch_loss.item() == doctest::Approx(manual / 3.0f).epsilon(1e-5));

    ops::backward(batch_loss, t2);
    auto ce = [&](const Tensor& probe) {
        return ops::cross_entropy_rows(probe, targets, mask, nullptr).item();
    };
    gradcheck(ce, logits, logits.clone_grad_as_tensor());

    std::vector<uint8_t> empty_mask(6, 0);
    CHECK_THROWS_AS(ops::cross_entropy_rows(logits, targets, empty_mask, nullptr), ContractError);
}
