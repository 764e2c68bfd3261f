#include <doctest.h>

#include <cmath>
#include <sstream>

#include "caplab/model.hpp"
#include "caplab/rng.hpp"
#include "caplab/trainer.hpp"

using namespace caplab;

namespace {

ModelConfig tiny(MlpKind mlp, Activation act) {
    ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.head_dim = 8;
    c.mlp = mlp;
    c.activation = act;
    c.vocab_size = 13;
    c.window_len = 16;
    return c;
}

std::uint64_t tensor_sum(const ModelConfig& c) {
    std::uint64_t n = 0;
    for (const auto& t : tensor_layout(c)) {
        n += t.size();
    }
    return n;
}

std::uint64_t norm_params(const ModelConfig& c) {
    std::uint64_t n = 0;
    for (const auto& t : tensor_layout(c)) {
        n += t.decay ? 0 : t.size();
    }
    return n;
}

Batch random_batch(std::size_t B, std::size_t T, std::size_t V, std::uint64_t seed) {
    CounterRng rng(seed, 1);
    Batch b{B, T, {}, {}};
    for (std::size_t i = 0; i < B * T; ++i) {
        b.tokens.push_back(static_cast<std::uint32_t>(rng.uniform(V)));
        b.mask.push_back((i % T) + 1 < T);
    }
    return b;
}

}  // namespace

TEST_CASE("parameter count closed form") {
    ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.vocab_size = 1000;
    CHECK(param_count(c) == tensor_sum(c));
    CHECK(param_count(c) == 1000 * 128 + 2 * (4 * 128 * 128 + 8 * 128 * 128) + norm_params(c));

    for (auto mlp : {MlpKind::standard, MlpKind::gated, MlpKind::quarter, MlpKind::none}) {
        for (bool tie : {true, false}) {
            c.mlp = mlp;
            c.tie_weights = tie;
            CHECK(param_count(c) == tensor_sum(c));
        }
    }
    c.tie_weights = true;
    c.mlp = MlpKind::none;
    const auto one = param_count(c);
    c.layers = 3;
    CHECK(param_count(c) - one == 4 * 128 * 128 + 2 * 128);

    c.mlp = MlpKind::standard;
    const auto tied = param_count(c);
    c.tie_weights = false;
    CHECK(param_count(c) - tied == 1000 * 128);

    c.mlp = MlpKind::gated;
    CHECK(c.mlp_hidden() == 8 * 128 / 3);
}

TEST_CASE("invalid configs are rejected") {
    ModelConfig c;
    c.vocab_size = 10;
    c.layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigInvalid);
    CHECK_THROWS_AS(init_model(c, 1), ConfigInvalid);
    c.layers = 1;
    c.heads = 0;
    CHECK_THROWS_AS(c.validate(), ConfigInvalid);
}

TEST_CASE("initialization is deterministic and near uniform") {
    ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.vocab_size = 500;
    c.window_len = 64;
    const auto a = init_model(c, 3), b = init_model(c, 3), other = init_model(c, 4);
    CHECK(a.params == b.params);
    CHECK(a.params != other.params);
    auto m = make_model<float>(a);
    const auto batch = random_batch(2, 64, 500, 5);
    const double per_token = m.loss(batch) / (2 * 63);
    CHECK(std::abs(per_token - std::log(500.0)) < 0.05 * std::log(500.0));
}

TEST_CASE("gradient check across MLP kinds and activations") {
    for (auto mlp : {MlpKind::standard, MlpKind::gated, MlpKind::quarter, MlpKind::none}) {
        for (auto act : {Activation::gelu, Activation::silu}) {
            const auto r = grad_check(tiny(mlp, act), 11);
            INFO(mlp_kind_name(mlp), " ", activation_name(act), " worst ", r.worst_tensor);
            CHECK(r.checked >= 200);
            CHECK(r.max_rel_error < 1e-4);
        }
    }
    ModelConfig big = tiny(MlpKind::standard, Activation::gelu);
    big.heads = 8;
    CHECK_THROWS_AS(grad_check(big, 1), ConfigInvalid);
}

TEST_CASE("output rows are normalized and attention is causal") {
    auto c = tiny(MlpKind::gated, Activation::silu);
    Transformer<double> m(c);
    m.init(2);
    std::vector<std::uint32_t> tokens = {1, 4, 7, 2, 9, 3, 12, 5, 6, 0, 11, 8};
    const Eigen::MatrixXd lp = m.log_probs(tokens);
    REQUIRE(lp.rows() == static_cast<Eigen::Index>(tokens.size()));
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        CHECK(std::abs(lp.row(r).array().exp().sum() - 1.0) < 1e-5);
    }
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        auto probe = tokens;
        probe[t] = (probe[t] + 1) % 13;
        const Eigen::MatrixXd q = m.log_probs(probe);
        CHECK((q.topRows(static_cast<Eigen::Index>(t)) - lp.topRows(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() == 0.0);
        CHECK((q.row(static_cast<Eigen::Index>(t)) - lp.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("per-window NLL does not depend on batch order") {
    auto c = tiny(MlpKind::standard, Activation::gelu);
    Transformer<float> m(c);
    m.init(4);
    const auto b = random_batch(3, 16, 13, 9);
    Batch swapped = b;
    for (std::size_t t = 0; t < 16; ++t) {
        std::swap(swapped.tokens[t], swapped.tokens[2 * 16 + t]);
        std::swap(swapped.mask[t], swapped.mask[2 * 16 + t]);
    }
    const auto x = m.token_nll(b), y = m.token_nll(swapped);
    for (std::size_t t = 0; t < 16; ++t) {
        CHECK(x[t] == y[2 * 16 + t]);
        CHECK(x[16 + t] == y[16 + t]);
    }
}

TEST_CASE("tied weights share one tensor") {
    auto c = tiny(MlpKind::standard, Activation::gelu);
    Transformer<double> tied(c);
    CHECK(tied.head_index() == tied.embedding_index());
    c.tie_weights = false;
    Transformer<double> untied(c);
    CHECK(untied.head_index() != untied.embedding_index());

    // One optimizer step without weight decay. PAD never occurs as input, so
    // its embedding row can only move through the output projection.
    auto pad_row_shift = [](bool tie) {
        auto cfg = tiny(MlpKind::standard, Activation::gelu);
        cfg.tie_weights = tie;
        const auto ck = init_model(cfg, 1);
        Window w;
        w.tokens = {1, 4, 7, 2, 9, 3, 12, 5, 6, 10, 11, 8, 1, 4, 7, 2};
        w.used = 16;
        OptimConfig o;
        o.wd = 0.0;
        o.batch = 1;
        o.steps = 1;
        o.warmup = 0;
        bool served = false;
        const auto after = train(ck, o, [&]() -> std::optional<Window> {
            if (served) {
                return std::nullopt;
            }
            served = true;
            return w;
        });
        const auto a = make_model<float>(ck), b = make_model<float>(after);
        return (a.tensor(a.embedding_index()).row(0) - b.tensor(b.embedding_index()).row(0)).cwiseAbs().maxCoeff();
    };
    CHECK(pad_row_shift(true) > 0.0f);
    CHECK(pad_row_shift(false) == 0.0f);
}

TEST_CASE("forward_nll on short windows") {
    auto c = tiny(MlpKind::standard, Activation::gelu);
    const auto ck = init_model(c, 1);
    Window one;
    one.tokens = {5};
    one.used = 1;
    CHECK(forward_nll(ck, one).total == 0.0);
    Window empty;
    CHECK(forward_nll(ck, empty).total == 0.0);
    Window pad;
    pad.tokens = {5, 6, 7, 0, 0, 0};
    pad.used = 3;
    const auto nll = forward_nll(ck, pad);
    CHECK(nll.per_token.size() >= 2);
    CHECK(nll.total == doctest::Approx(nll.per_token[0] + nll.per_token[1]));
}
