#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <privpart/nn.hpp>
#include <privpart/rng.hpp>

using namespace privpart;

namespace {

Architecture flat(int width, int modalities, std::vector<int> hidden, int classes) {
    Architecture a;
    a.kind = ArchKind::FlatDense;
    a.input_width = width;
    a.max_modalities = modalities;
    a.hidden = std::move(hidden);
    a.num_classes = classes;
    return a;
}

Architecture token(int width, int modalities, std::vector<int> hidden, int classes) {
    Architecture a = flat(width, modalities, std::move(hidden), classes);
    a.kind = ArchKind::TokenPooling;
    return a;
}

// Batch with explicit presence; absent slots hold zeros.
Batch make_test_batch(const Architecture& arch, const std::vector<std::vector<int>>& present_slots,
                      const std::vector<int>& labels, std::uint64_t seed) {
    Batch b;
    b.rows = present_slots.size();
    b.slots = arch.max_modalities;
    b.width = arch.input_width;
    b.features.assign(b.rows * b.slots * b.width, 0.0);
    b.present.assign(b.rows * b.slots, 0);
    b.labels = labels;
    SplitMix64 rng(seed);
    for (std::size_t r = 0; r < b.rows; ++r)
        for (const int s : present_slots[r]) {
            b.present[r * b.slots + s] = 1;
            for (int k = 0; k < b.width; ++k)
                b.features[(r * b.slots + s) * b.width + k] = rng.next_normal();
        }
    return b;
}

// Central-difference gradient with the same relative-error convention used
// throughout: |a - b| / max(|a|, |b|, 1e-6).
double max_rel_grad_error(const Architecture& arch, const ParamVector& params, const Batch& batch,
                          const LossSpec& spec) {
    const auto lg = loss_and_grad(arch, params, batch, spec);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        ParamVector plus = params;
        plus.values[i] += h;
        ParamVector minus = params;
        minus.values[i] -= h;
        const double lp = loss_and_grad(arch, plus, batch, spec).loss;
        const double lm = loss_and_grad(arch, minus, batch, spec).loss;
        const double fd = (lp - lm) / (2.0 * h);
        const double a = lg.grad[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace

TEST_CASE("parameter counts") {
    // flat-dense w4 m3 h8 c6: (12*8+8) + (8*6+6) = 158
    CHECK(param_count(flat(4, 3, {8}, 6)) == 158);
    // no hidden layer: straight linear map
    CHECK(param_count(flat(4, 2, {}, 3)) == 4 * 2 * 3 + 3);
    CHECK(param_count(token(4, 1, {}, 3)) == 4 * 3 + 3);

    // token pooling ignores the modality count; flat-dense grows with it
    const auto t1 = param_count(token(8, 1, {16}, 6));
    const auto t2 = param_count(token(8, 2, {16}, 6));
    const auto t3 = param_count(token(8, 3, {16}, 6));
    CHECK(t1 == t2);
    CHECK(t2 == t3);
    const auto f1 = param_count(flat(8, 1, {16}, 6));
    const auto f2 = param_count(flat(8, 2, {16}, 6));
    const auto f3 = param_count(flat(8, 3, {16}, 6));
    CHECK(f1 < f2);
    CHECK(f2 < f3);
}

TEST_CASE("init_model is deterministic with zero biases and bounded weights") {
    const auto arch = flat(4, 3, {8}, 6);
    const auto a = init_model(arch, 42);
    const auto b = init_model(arch, 42);
    const auto c = init_model(arch, 43);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(a.arch_id == arch.id());
    REQUIRE(a.values.size() == 158);

    // layer 1: weights 12x8 then 8 zero biases; layer 2: 8x6 then 6 zero biases
    const double lim1 = std::sqrt(6.0 / (12 + 8));
    for (std::size_t i = 0; i < 96; ++i) CHECK(std::abs(a.values[i]) <= lim1);
    for (std::size_t i = 96; i < 104; ++i) CHECK(a.values[i] == 0.0);
    const double lim2 = std::sqrt(6.0 / (8 + 6));
    for (std::size_t i = 104; i < 152; ++i) CHECK(std::abs(a.values[i]) <= lim2);
    for (std::size_t i = 152; i < 158; ++i) CHECK(a.values[i] == 0.0);
}

TEST_CASE("flat-dense forward with zero weights gives zero logits") {
    const auto arch = flat(3, 2, {4}, 3);
    ParamVector p;
    p.arch_id = arch.id();
    p.values.assign(param_count(arch), 0.0);
    const auto batch = make_test_batch(arch, {{0, 1}, {0}}, {0, 1}, 1);
    const auto logits = forward(arch, p, batch);
    REQUIRE(logits.size() == 6);
    for (const double v : logits) CHECK(v == 0.0);
}

TEST_CASE("token pooling averages present slots only") {
    const auto arch = token(3, 3, {4}, 3);
    const auto p = init_model(arch, 7);

    // one present slot
    auto single = make_test_batch(arch, {{1}}, {0}, 11);
    const auto logit_single = forward(arch, p, single);

    // the same slot duplicated into another position: mean of two equal
    // encodings must match the single-slot output
    Batch dup = single;
    dup.present[0] = 1;
    for (int k = 0; k < 3; ++k) dup.features[k] = dup.features[3 + k];
    const auto logit_dup = forward(arch, p, dup);
    REQUIRE(logit_single.size() == logit_dup.size());
    for (std::size_t i = 0; i < logit_single.size(); ++i)
        CHECK(logit_dup[i] == Catch::Approx(logit_single[i]).epsilon(1e-12));

    // no present slot is an error
    Batch empty = single;
    empty.present.assign(empty.present.size(), 0);
    CHECK_THROWS_AS(forward(arch, p, empty), std::invalid_argument);
}

TEST_CASE("forward validates shapes") {
    const auto arch = flat(3, 2, {4}, 3);
    const auto p = init_model(arch, 1);
    auto batch = make_test_batch(arch, {{0}}, {0}, 2);
    batch.width = 2;  // lie about the width
    CHECK_THROWS_AS(forward(arch, p, batch), std::invalid_argument);

    ParamVector wrong = p;
    wrong.values.pop_back();
    const auto ok = make_test_batch(arch, {{0}}, {0}, 2);
    CHECK_THROWS_AS(forward(arch, wrong, ok), std::invalid_argument);
}

TEST_CASE("softmax oracles") {
    const auto u = softmax({1.0, 1.0, 1.0, 1.0});
    for (const double v : u) CHECK(v == Catch::Approx(0.25).epsilon(1e-12));

    const auto probs = softmax({std::log(1.0), std::log(2.0), std::log(3.0)});
    CHECK(probs[0] == Catch::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(probs[1] == Catch::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(probs[2] == Catch::Approx(0.5).epsilon(1e-12));

    // shift invariance
    const auto a = softmax({0.3, -1.2, 2.0});
    const auto b = softmax({100.3, 98.8, 102.0});
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == Catch::Approx(b[i]).epsilon(1e-12));

    // extreme logits stay finite
    const auto ext = softmax({1000.0, -1000.0});
    CHECK(std::isfinite(ext[0]));
    CHECK(ext[0] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy oracles") {
    // certain and correct: zero loss
    CHECK(cross_entropy({1.0, 0.0, 0.0}, 1, 3, {0}) <= 1e-11);
    // uniform over six classes: ln 6
    const std::vector<double> u(6, 1.0 / 6.0);
    CHECK(cross_entropy(u, 1, 6, {3}) == Catch::Approx(1.791759469228055).epsilon(1e-12));
    // mean over rows
    const std::vector<double> two = {1.0, 0.0, 1.0 / 6.0, 5.0 / 6.0};
    CHECK(cross_entropy(two, 2, 2, {0, 0}) ==
          Catch::Approx(0.5 * (0.0 + std::log(6.0))).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy(u, 1, 6, {6}), std::invalid_argument);
}

TEST_CASE("KL divergence oracles") {
    const std::vector<double> p = {0.5, 0.5};
    CHECK(kl_divergence(p, p) == 0.0);
    CHECK(kl_divergence({0.5, 0.5}, {0.25, 0.75}) ==
          Catch::Approx(0.14384103622589042).epsilon(1e-12));

    // non-negativity on random distributions
    SplitMix64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(4), b(4);
        double sa = 0.0, sb = 0.0;
        for (int i = 0; i < 4; ++i) {
            a[i] = rng.next_double() + 1e-3;
            b[i] = rng.next_double() + 1e-3;
            sa += a[i];
            sb += b[i];
        }
        for (int i = 0; i < 4; ++i) {
            a[i] /= sa;
            b[i] /= sb;
        }
        CHECK(kl_divergence(a, b) >= -1e-15);
    }
}

TEST_CASE("analytic gradients match central differences") {
    const auto arch_f = flat(3, 2, {5}, 4);
    const auto arch_t = token(3, 2, {5}, 4);
    const std::vector<std::vector<int>> slots = {{0}, {1}, {0, 1}};
    const std::vector<int> labels = {0, 3, 2};

    for (const auto& arch : {arch_f, arch_t}) {
        const auto p = init_model(arch, 9);
        const auto batch = make_test_batch(arch, slots, labels, 13);
        CHECK(max_rel_grad_error(arch, p, batch, LossSpec::plain_ce()) < 1e-4);

        // mutual loss against a fixed peer distribution
        std::vector<double> peer(batch.rows * arch.num_classes, 0.0);
        SplitMix64 rng(21);
        for (std::size_t r = 0; r < batch.rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < arch.num_classes; ++c) {
                peer[r * arch.num_classes + c] = rng.next_double() + 0.05;
                s += peer[r * arch.num_classes + c];
            }
            for (int c = 0; c < arch.num_classes; ++c) peer[r * arch.num_classes + c] /= s;
        }
        CHECK(max_rel_grad_error(arch, p, batch, LossSpec::mutual_ce_kl(0.7, peer)) < 1e-4);
    }
}

TEST_CASE("lambda zero reduces mutual loss to plain cross entropy bit for bit") {
    const auto arch = token(3, 3, {4}, 3);
    const auto p = init_model(arch, 3);
    const auto batch = make_test_batch(arch, {{0, 2}, {1}}, {2, 0}, 17);
    std::vector<double> peer(batch.rows * arch.num_classes, 1.0 / arch.num_classes);

    const auto plain = loss_and_grad(arch, p, batch, LossSpec::plain_ce());
    const auto mut = loss_and_grad(arch, p, batch, LossSpec::mutual_ce_kl(0.0, peer));
    CHECK(mut.loss == plain.loss);
    CHECK(mut.grad == plain.grad);
}

TEST_CASE("peer equal to own probabilities leaves only the CE term") {
    const auto arch = flat(3, 2, {4}, 3);
    const auto p = init_model(arch, 6);
    const auto batch = make_test_batch(arch, {{0, 1}, {0}}, {1, 2}, 19);

    const auto logits = forward(arch, p, batch);
    const auto own = softmax_rows(logits, batch.rows, arch.num_classes);
    const auto plain = loss_and_grad(arch, p, batch, LossSpec::plain_ce());
    const auto mut = loss_and_grad(arch, p, batch, LossSpec::mutual_ce_kl(0.9, own));
    // KL(own || own) = 0 and its gradient term vanishes exactly
    CHECK(mut.loss == plain.loss);
    CHECK(mut.grad == plain.grad);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    const std::vector<double> row = {0.5, 0.5, 0.1};
    CHECK(argmax_row(row.data(), 3) == 0);
    const std::vector<double> rising = {0.1, 0.9, 0.9};
    CHECK(argmax_row(rising.data(), 3) == 1);
}
