#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "promptaug/errors.hpp"
#include "promptaug/finite_diff.hpp"
#include "promptaug/lm.hpp"
#include "promptaug/rng.hpp"

using namespace promptaug;

namespace {

Vocabulary tiny_vocab() {
    std::vector<std::string> corpus = {"alpha beta gamma delta epsilon zeta eta theta"};
    return Vocabulary::build(corpus, 1);
}

LMConfig tiny_config(const Vocabulary& v, int layers = 2, int d = 16) {
    LMConfig cfg;
    cfg.num_layers = layers;
    cfg.d_model = d;
    cfg.num_heads = 4;
    cfg.context_length = 64;
    cfg.vocab_size = v.size();
    return cfg;
}

}  // namespace

TEST_CASE("build_vocab ordering and min_freq") {
    {
        std::vector<std::string> corpus = {"a a b"};
        Vocabulary v = Vocabulary::build(corpus, 1);
        // specials occupy 0..3; "a" (freq 2) before "b" (freq 1)
        CHECK(v.size() == 6);
        CHECK(v.id("a") == 4);
        CHECK(v.id("b") == 5);
    }
    {
        std::vector<std::string> corpus = {"a a b"};
        Vocabulary v = Vocabulary::build(corpus, 2);
        CHECK(v.size() == 5);
        CHECK(v.id("b") == Vocabulary::kUnk);
    }
    {
        std::vector<std::string> corpus;
        CHECK_THROWS_AS(Vocabulary::build(corpus, 1), ConfigError);
    }
    // Determinism: two builds over a shuffled-duplicate corpus agree.
    {
        Rng rng(42);
        std::vector<std::string> docs;
        for (int i = 0; i < 1000; ++i) {
            std::string doc;
            for (int w = 0; w < 12; ++w) {
                doc += "w" + std::to_string(rng.next_below(200)) + " ";
            }
            docs.push_back(doc);
        }
        Vocabulary v1 = Vocabulary::build(docs, 1);
        Vocabulary v2 = Vocabulary::build(docs, 1);
        CHECK(v1.size() == v2.size());
        CHECK(v1.fingerprint() == v2.fingerprint());
        for (int i = 0; i < v1.size(); ++i) CHECK(v1.token(i) == v2.token(i));
    }
}

TEST_CASE("forward shape contract and empty-prefix identity") {
    Vocabulary v = tiny_vocab();
    DecoderLM lm(tiny_config(v), 7);
    std::vector<int> ids = {4, 5, 6, 7, 8};

    Tensor logits = lm.forward(nullptr, ids, nullptr);
    CHECK(logits.dim(0) == 5);
    CHECK(logits.dim(1) == static_cast<size_t>(v.size()));

    Tensor empty_prefix({0, 16});
    Tensor logits2 = lm.forward(&empty_prefix, ids, nullptr);
    for (size_t i = 0; i < logits.numel(); ++i) {
        CHECK(logits.values()[i] == logits2.values()[i]);
    }

    std::vector<int> too_long(100, 4);
    CHECK_THROWS_AS(lm.forward(nullptr, too_long, nullptr), LengthError);
    CHECK_THROWS_WITH_AS(lm.forward(nullptr, too_long, nullptr), doctest::Contains("64"),
                         LengthError);
}

TEST_CASE("causality: future tokens never affect earlier logits") {
    Vocabulary v = tiny_vocab();
    DecoderLM lm(tiny_config(v), 3);
    std::vector<int> ids = {4, 5, 6, 7, 8, 9};
    Tensor base = lm.forward(nullptr, ids, nullptr);
    for (size_t j = 2; j < ids.size(); ++j) {
        auto perturbed = ids;
        perturbed[j] = perturbed[j] == 4 ? 5 : 4;
        Tensor probe = lm.forward(nullptr, perturbed, nullptr);
        for (size_t row = 0; row < j; ++row) {
            for (size_t c = 0; c < base.dim(1); ++c) {
                CHECK(base.values()[row * base.dim(1) + c] ==
                      probe.values()[row * base.dim(1) + c]);
            }
        }
    }
}

TEST_CASE("prefix gradient exists and matches finite differences") {
    Vocabulary v = tiny_vocab();
    DecoderLM lm(tiny_config(v, 2, 16), 11);
    Rng rng(5);
    Tensor prefix({3, 16});
    for (float& x : prefix.values()) x = 0.3f * rng.next_normal();

    std::vector<int> ids = {4, 5, 6, 7};
    std::vector<uint8_t> mask = {0, 0, 1, 1};

    Tape tape;
    Tensor loss = lm.loss(&prefix, ids, mask, &tape);
    ops::backward(loss, tape);
    Tensor analytic = prefix.clone_grad_as_tensor();

    bool any_nonzero = false;
    for (float g : analytic.values()) any_nonzero |= (g != 0.0f);
    CHECK(any_nonzero);

    auto f = [&](const Tensor& probe) { return lm.loss(&probe, ids, mask, nullptr).item(); };
    for (size_t i = 0; i < prefix.numel(); ++i) {
        const float fd = finite_diff_coord(f, prefix, i, 1e-3f);
        const double err =
            std::abs(double(analytic.values()[i]) - fd) / std::max(1.0, std::abs(double(fd)));
        CHECK(err < 1e-3);
    }
}

TEST_CASE("loss mask semantics") {
    Vocabulary v = tiny_vocab();
    DecoderLM lm(tiny_config(v), 19);
    std::vector<int> ids = {4, 5, 6, 7, 8};

    // Untrained model: loss close to ln V.
    std::vector<uint8_t> mask = {0, 1, 1, 1, 1};
    const float loss = lm.loss(nullptr, ids, mask, nullptr).item();
    CHECK(loss == doctest::Approx(std::log(static_cast<float>(v.size()))).epsilon(0.05));

    // Single masked position equals softmax_cross_entropy at that position.
    std::vector<uint8_t> single = {0, 0, 0, 1, 0};
    const float single_loss = lm.loss(nullptr, ids, single, nullptr).item();
    Tensor logits = lm.forward(nullptr, ids, nullptr);
    Tensor row({static_cast<size_t>(v.size())});
    std::copy(logits.data() + 2 * v.size(), logits.data() + 3 * v.size(), row.data());
    const float direct = ops::softmax_cross_entropy(row, ids[3], nullptr).item();
    CHECK(single_loss == doctest::Approx(direct).epsilon(1e-5));

    // Changing an unmasked context token changes the loss value but the
    // masked positions (and count) stay the masked positions.
    std::vector<int> ids2 = ids;
    ids2[1] = 9;
    const float moved = lm.loss(nullptr, ids2, single, nullptr).item();
    CHECK(moved != single_loss);

    std::vector<uint8_t> none(5, 0);
    CHECK_THROWS_AS(lm.loss(nullptr, ids, none, nullptr), ContractError);
    std::vector<uint8_t> pos0 = {1, 0, 0, 0, 0};
    CHECK_THROWS_AS(lm.loss(nullptr, ids, pos0, nullptr), ContractError);
}

TEST_CASE("generate: budget, degenerate argmax, seeded sampling") {
    Vocabulary v = tiny_vocab();
    DecoderLM lm(tiny_config(v), 23);
    std::vector<int> prompt = {4, 5};

    GenerationConfig cfg;
    cfg.max_new_tokens = 0;
    CHECK(lm.generate(nullptr, prompt, cfg).empty());

    // Hand-constructed degenerate head: force the final layer norm to a
    // constant row (gain 0, bias e0) and point channel 0 at token 6, so the
    // logits rank token 6 first no matter the input.
    DecoderLM degen(tiny_config(v, 1, 16), 1);
    for (Parameter& p : degen.parameters()) {
        if (p.name == "lnf.gain") {
            std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
        } else if (p.name == "lnf.bias") {
            std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
            p.tensor.data()[0] = 1.0f;
        } else if (p.name == "out_proj") {
            std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
            p.tensor.data()[0 * v.size() + 6] = 10.0f;
        }
    }
    cfg.max_new_tokens = 5;
    auto out = degen.generate(nullptr, prompt, cfg);
    CHECK(out == std::vector<int>{6, 6, 6, 6, 6});

    // Sampling determinism under a fixed seed.
    GenerationConfig s;
    s.mode = GenerationConfig::Mode::kSample;
    s.temperature = 0.8f;
    s.top_k = 4;
    s.max_new_tokens = 8;
    s.seed = 99;
    auto a = lm.generate(nullptr, prompt, s);
    auto b = lm.generate(nullptr, prompt, s);
    CHECK(a == b);

    // Greedy is a pure function of weights/prefix/prompt.
    GenerationConfig g;
    g.max_new_tokens = 6;
    CHECK(lm.generate(nullptr, prompt, g) == lm.generate(nullptr, prompt, g));

    std::vector<int> huge(64, 4);
    CHECK_THROWS_AS(lm.generate(nullptr, huge, g), LengthError);
}

TEST_CASE("perplexity definitions") {
    Vocabulary v = tiny_vocab();
    const int vocab = v.size();

    // Uniform model: perplexity ~ V. Zeroed output projection gives exactly
    // uniform logits.
    DecoderLM lm(tiny_config(v, 1, 16), 2);
    for (Parameter& p : lm.parameters()) {
        if (p.name == "out_proj") {
            std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
        }
    }
    std::vector<MaskedSequence> data;
    data.push_back({{4, 5, 6, 7}, {0, 1, 1, 1}});
    data.push_back({{5, 5, 6}, {0, 1, 1}});
    CHECK(lm.perplexity(nullptr, data) == doctest::Approx(vocab).epsilon(1e-4));

    // perplexity == exp(loss) for a single instance.
    DecoderLM lm2(tiny_config(v), 3);
    std::vector<MaskedSequence> one;
    one.push_back({{4, 5, 6, 7, 8}, {0, 0, 1, 1, 1}});
    const double ppl = lm2.perplexity(nullptr, one);
    const float l = lm2.loss(nullptr, one[0].ids, one[0].loss_mask, nullptr).item();
    CHECK(ppl == doctest::Approx(std::exp(l)).epsilon(1e-5));

    // Pooled definition: direct recomputation from per-instance (sum, count).
    std::vector<MaskedSequence> many = {{{4, 5, 6, 7}, {0, 1, 0, 1}}, {{6, 6, 5}, {0, 1, 1}}};
    double total = 0.0;
    size_t count = 0;
    for (const auto& seq : many) {
        const auto [s, c] = lm2.masked_nll(nullptr, seq);
        total += s;
        count += c;
    }
    CHECK(lm2.perplexity(nullptr, many, 2) ==
          doctest::Approx(std::exp(total / double(count))).epsilon(1e-6));

    std::vector<MaskedSequence> empty;
    CHECK_THROWS_AS(lm2.perplexity(nullptr, empty), ContractError);

    // Single masked token with probability 1/2 -> perplexity exactly 2: craft
    // it via a two-way tie after zeroing everything but two logits.
    // (covered by the uniform case above at V=|vocab|; the 0.5 case follows
    // from the same exp(mean NLL) identity checked here)
}

TEST_CASE("pretrain memorizes a repetitive corpus") {
    std::vector<std::string> corpus = {
        "alpha beta alpha beta alpha beta alpha beta alpha beta alpha beta alpha beta "
        "alpha beta alpha beta alpha beta alpha beta alpha beta alpha beta alpha beta"};
    Vocabulary v = Vocabulary::build(corpus, 1);
    LMConfig cfg = tiny_config(v, 2, 16);
    DecoderLM lm(cfg, 5);

    PretrainConfig pc;
    pc.epochs = 0;
    auto before = lm.snapshot();
    pretrain(lm, corpus, v, pc);
    auto after = lm.snapshot();
    CHECK(before == after);  // epochs=0 is a no-op

    pc.epochs = 40;
    pc.learning_rate = 5e-3f;
    pc.chunk_length = 16;
    pc.seed = 3;
    PretrainReport report = pretrain(lm, corpus, v, pc);
    CHECK(report.final_loss < std::log(static_cast<double>(v.size())) / 2.0);

    // Determinism: same seed from the same init gives bit-identical weights.
    DecoderLM lm_a(cfg, 5);
    DecoderLM lm_b(cfg, 5);
    pretrain(lm_a, corpus, v, pc);
    pretrain(lm_b, corpus, v, pc);
    CHECK(lm_a.snapshot() == lm_b.snapshot());
    CHECK(lm_a.fingerprint() == lm_b.fingerprint());
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Vocabulary v = tiny_vocab();
    DecoderLM lm(tiny_config(v), 31);
    const auto path = std::filesystem::temp_directory_path() / "promptaug_lm_test.ckpt";
    lm.save(path.string(), v);
    auto [loaded, vocab2] = DecoderLM::load(path.string());
    CHECK(loaded.snapshot() == lm.snapshot());
    CHECK(vocab2.fingerprint() == v.fingerprint());
    CHECK(loaded.fingerprint() == lm.fingerprint());

    // Identical forward pass after reload.
    std::vector<int> ids = {4, 5, 6};
    Tensor a = lm.forward(nullptr, ids, nullptr);
    Tensor b = loaded.forward(nullptr, ids, nullptr);
    for (size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);
    std::filesystem::remove(path);
}
