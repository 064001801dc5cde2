// Magnitude pruning: exact survivor schedule against a brute-force oracle,
// mask nesting, tie-breaking determinism, and the surviving-fraction math.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ticketlab/prune.hpp"
#include "test_support.hpp"

using namespace ticketlab;
using namespace ticketlab::testing;

namespace {

// Single-prunable-layer model around an explicit weight vector.
ModelState weights_model(const std::vector<float>& w) {
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = {w.size()};
    spec.hidden = {};
    spec.num_classes = 2;
    ModelState m;
    m.spec = spec;
    m.params.emplace_back("head.weight", Tensor({w.size(), 1}, std::vector<float>(w)), true);
    m.params.emplace_back("head.bias", Tensor::zeros({1}), false);
    return m;
}

// Independent oracle: pool surviving (|w|, name, index) triples, sort, cut
// the smallest ceil(rate*n); returns the new mask bits per layer.
std::map<std::string, std::vector<uint8_t>> sort_and_cut_oracle(
    const std::map<std::string, std::vector<float>>& layers,
    const std::map<std::string, std::vector<uint8_t>>& mask, double rate) {
    struct Item {
        double mag;
        std::string name;
        size_t idx;
    };
    std::vector<Item> alive;
    for (const auto& [name, w] : layers)
        for (size_t i = 0; i < w.size(); ++i)
            if (mask.at(name)[i]) alive.push_back({std::abs(static_cast<double>(w[i])), name, i});
    std::sort(alive.begin(), alive.end(), [](const Item& a, const Item& b) {
        if (a.mag != b.mag) return a.mag < b.mag;
        if (a.name != b.name) return a.name < b.name;
        return a.idx < b.idx;
    });
    const size_t cut =
        static_cast<size_t>(std::ceil(rate * static_cast<double>(alive.size()) - 1e-9));
    auto out = mask;
    for (size_t i = 0; i < cut && i < alive.size(); ++i) out[alive[i].name][alive[i].idx] = 0;
    return out;
}

}  // namespace

TEST_CASE("rate 0.5 prunes the two smallest magnitudes") {
    ModelState m = weights_model({0.5f, -0.1f, 0.3f, 0.05f});
    Mask mask = Mask::ones_like(m);
    PruneConfig cfg;
    cfg.rate = 0.5;
    const Mask out = magnitude_prune(m, mask, cfg);
    CHECK(out.entries.at("head.weight") == std::vector<uint8_t>{1, 0, 1, 0});
    CHECK(out.round == 1);
}

TEST_CASE("rate 0.2 on 100 survivors keeps 80") {
    std::vector<float> w(100);
    Rng rng(5);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    ModelState m = weights_model(w);
    const Mask out = magnitude_prune(m, Mask::ones_like(m), PruneConfig{});
    CHECK(out.total_entries() - out.zero_entries() == 80);
}

TEST_CASE("iterating twice on 10 weights follows the ceil schedule 10->8->6") {
    std::vector<float> w(10);
    Rng rng(6);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    ModelState m = weights_model(w);
    Mask mask = Mask::ones_like(m);
    mask = magnitude_prune(m, mask, PruneConfig{});
    CHECK(mask.total_entries() - mask.zero_entries() == 8);
    mask = magnitude_prune(m, mask, PruneConfig{});
    CHECK(mask.total_entries() - mask.zero_entries() == 6);  // ceil(0.2*8) = 2
    CHECK(mask.round == 2);
}

TEST_CASE("iterated pruning matches the sort-and-cut oracle exactly with nesting") {
    for (const size_t n : {10u, 37u, 100u, 523u, 4096u, 100000u}) {
        // Two layers sharing the pool, global scope.
        Rng rng(1000 + n);
        std::vector<float> w1(n / 2 + 1), w2(n - w1.size());
        for (auto& v : w1) v = static_cast<float>(rng.normal());
        for (auto& v : w2) v = static_cast<float>(rng.normal());

        ModelSpec spec;
        spec.kind = ModelKind::Mlp;
        spec.input_shape = {w1.size()};
        spec.hidden = {};
        spec.num_classes = 2;
        ModelState m;
        m.spec = spec;
        m.params.emplace_back("a.weight", Tensor({w1.size(), 1}, std::vector<float>(w1)), true);
        m.params.emplace_back("b.weight", Tensor({w2.size(), 1}, std::vector<float>(w2)), true);

        std::map<std::string, std::vector<float>> layers{{"a.weight", w1}, {"b.weight", w2}};
        Mask mask = Mask::ones_like(m);
        std::map<std::string, std::vector<uint8_t>> oracle_mask = mask.entries;

        const size_t rounds = n >= 4096 ? 6 : 10;
        size_t prev_alive = mask.total_entries();
        for (size_t r = 0; r < rounds; ++r) {
            const Mask next = magnitude_prune(m, mask, PruneConfig{});
            oracle_mask = sort_and_cut_oracle(layers, oracle_mask, 0.2);
            CHECK(next.entries == oracle_mask);

            // Strict nesting: support shrinks, and never grows back.
            const size_t alive = next.total_entries() - next.zero_entries();
            CHECK(alive < prev_alive);
            for (const auto& [name, bits] : next.entries) {
                const auto& before = mask.entries.at(name);
                for (size_t i = 0; i < bits.size(); ++i)
                    if (bits[i]) CHECK(before[i] == 1);
            }
            // Exact integer schedule.
            CHECK(alive == surviving_count(mask.total_entries(), r + 1, 0.2));
            prev_alive = alive;
            mask = next;
        }
    }
}

TEST_CASE("selection is scale-equivariant") {
    std::vector<float> w(64);
    Rng rng(77);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    ModelState a = weights_model(w);
    for (auto& v : w) v *= 37.5f;
    ModelState b = weights_model(w);
    const Mask ma = magnitude_prune(a, Mask::ones_like(a), PruneConfig{});
    const Mask mb = magnitude_prune(b, Mask::ones_like(b), PruneConfig{});
    CHECK(ma.entries == mb.entries);
}

TEST_CASE("pruning is deterministic, with ties broken by (name, index)") {
    // All-equal magnitudes: the earliest indices of the earliest layer go.
    ModelState m = weights_model({0.2f, -0.2f, 0.2f, 0.2f, -0.2f});
    PruneConfig cfg;
    cfg.rate = 0.4;  // ceil(0.4*5) = 2
    const Mask out = magnitude_prune(m, Mask::ones_like(m), cfg);
    CHECK(out.entries.at("head.weight") == std::vector<uint8_t>{0, 0, 1, 1, 1});
    const Mask again = magnitude_prune(m, Mask::ones_like(m), cfg);
    CHECK(out.entries == again.entries);
}

TEST_CASE("per-layer scope errors when a layer would be emptied") {
    ModelState m = weights_model({1.f, 2.f});
    Mask mask = Mask::ones_like(m);
    mask.entries.at("head.weight") = {1, 0};  // one survivor
    PruneConfig cfg;
    cfg.rate = 0.9;
    cfg.scope = PruneScope::PerLayer;
    CHECK_THROWS_AS(magnitude_prune(m, mask, cfg), Error);
}

TEST_CASE("excluded layers are never pruned") {
    std::vector<float> w(20);
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.001f * static_cast<float>(i + 1);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = {20};
    spec.hidden = {};
    spec.num_classes = 2;
    ModelState m;
    m.spec = spec;
    m.params.emplace_back("tiny.weight", Tensor({20, 1}, std::vector<float>(w)), true);
    m.params.emplace_back("big.weight", Tensor({20, 1}, std::vector<float>(w)), true);
    PruneConfig cfg;
    cfg.exclude = {"tiny.weight"};
    const Mask out = magnitude_prune(m, Mask::ones_like(m), cfg);
    const auto& tiny = out.entries.at("tiny.weight");
    CHECK(std::count(tiny.begin(), tiny.end(), 0) == 0);
    const auto& big = out.entries.at("big.weight");
    CHECK(std::count(big.begin(), big.end(), 0) == 4);  // ceil(0.2*20)
}

TEST_CASE("remaining_fraction matches the power law and the paper landmarks") {
    CHECK(remaining_fraction(0, 0.2) == doctest::Approx(1.0));
    CHECK(remaining_fraction(20, 0.2) == doctest::Approx(std::pow(0.8, 20)).epsilon(1e-12));
    CHECK(remaining_fraction(20, 0.2) == doctest::Approx(0.01153).epsilon(1e-3));  // ~1% weights kept
    CHECK(remaining_fraction(31, 0.2) == doctest::Approx(9.9e-4).epsilon(1e-2));
    // Integer schedule stays within the compounded-floor bound of the power law.
    const size_t n0 = 266200;
    const double exact = static_cast<double>(surviving_count(n0, 31, 0.2));
    CHECK(std::abs(exact - std::pow(0.8, 31) * n0) <= 5.0);
}

TEST_CASE("apply_mask zeroes exactly the masked weights") {
    ModelState m = weights_model({1.f, 2.f, 3.f, 4.f});
    Mask mask = Mask::ones_like(m);
    mask.entries.at("head.weight") = {1, 0, 1, 0};
    apply_mask(m, mask);
    CHECK(m.find("head.weight")->value.data == std::vector<float>{1.f, 0.f, 3.f, 0.f});

    // All-ones leaves the model untouched; an all-zero entry clears the layer.
    ModelState m2 = weights_model({1.f, 2.f});
    const uint64_t before = m2.content_hash();
    apply_mask(m2, Mask::ones_like(m2));
    CHECK(m2.content_hash() == before);
    Mask zeros = Mask::ones_like(m2);
    zeros.entries.at("head.weight") = {0, 0};
    apply_mask(m2, zeros);
    for (float v : m2.find("head.weight")->value.data) CHECK(v == 0.f);
}

TEST_CASE("sparsity counts zeros and tracks the schedule identity") {
    ModelState m = weights_model({1.f, 2.f, 3.f, 4.f});
    Mask mask = Mask::ones_like(m);
    CHECK(sparsity(mask) == 0.0);
    mask.entries.at("head.weight") = {1, 0, 1, 0};
    CHECK(sparsity(mask) == 0.5);

    // After n rounds, sparsity equals 1 - survivors/total exactly.
    std::vector<float> w(1000);
    Rng rng(8);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    ModelState big = weights_model(w);
    Mask bm = Mask::ones_like(big);
    for (size_t r = 1; r <= 5; ++r) {
        bm = magnitude_prune(big, bm, PruneConfig{});
        const double surv = static_cast<double>(surviving_count(1000, r, 0.2)) / 1000.0;
        CHECK(sparsity(bm) == doctest::Approx(1.0 - surv).epsilon(1e-12));
    }
}

TEST_CASE("mask congruence is enforced") {
    ModelState m = weights_model({1.f, 2.f});
    Mask mask = Mask::ones_like(m);
    mask.entries.at("head.weight").push_back(1);  // wrong length
    CHECK_THROWS_AS(apply_mask(m, mask), ShapeError);
    CHECK_THROWS_AS(magnitude_prune(m, mask, PruneConfig{}), ShapeError);
}
