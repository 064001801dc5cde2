// Model construction, head replacement, evaluation semantics, and the
// training loop (early stopping, annealing, mask respect, determinism).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ticketlab/train.hpp"
#include "test_support.hpp"

using namespace ticketlab;
using namespace ticketlab::testing;

namespace {

ModelSpec mnist_class_mlp() {
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = {1, 28, 28};
    spec.hidden = {300, 100};
    spec.num_classes = 10;
    return spec;
}

}  // namespace

TEST_CASE("mlp 784-300-100-10 has 266200 prunable weights") {
    const ModelState m = build_model(mnist_class_mlp(), InitSpec{InitScheme::XavierUniform, 0});
    CHECK(m.prunable_weight_count() == 266200);
}

TEST_CASE("identical spec and seed build bit-identical models") {
    const auto a = build_model(mnist_class_mlp(), InitSpec{InitScheme::XavierUniform, 5});
    const auto b = build_model(mnist_class_mlp(), InitSpec{InitScheme::XavierUniform, 5});
    CHECK(a.content_hash() == b.content_hash());
    const auto c = build_model(mnist_class_mlp(), InitSpec{InitScheme::XavierUniform, 6});
    CHECK(a.content_hash() != c.content_hash());
}

TEST_CASE("mini-resnet forward maps 1x3x32x32 to 1x10") {
    ModelSpec spec;
    spec.kind = ModelKind::MiniResnet;
    spec.input_shape = {3, 32, 32};
    spec.plan = {{1, 8, 2}, {2, 16, 2}, {2, 32, 2}};
    spec.num_classes = 10;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 1});
    const Tensor x = random_tensor<float>({1, 3, 32, 32}, 3, 0.0, 1.0);
    Var logits = m.forward(x, /*training=*/true);
    CHECK(logits->value.shape == Shape{1, 10});
}

TEST_CASE("model spec strings round-trip") {
    ModelSpec spec;
    spec.kind = ModelKind::MiniResnet;
    spec.input_shape = {3, 16, 16};
    spec.plan = {{1, 8, 1}, {2, 16, 1}, {2, 32, 1}};
    spec.num_classes = 7;
    const ModelSpec back = spec_from_string(spec_to_string(spec));
    CHECK(spec_to_string(back) == spec_to_string(spec));
    const ModelSpec mlp = spec_from_string("mlp;in=1x28x28;hidden=300,100;classes=10");
    CHECK(mlp.hidden == std::vector<size_t>{300, 100});
    CHECK(mlp.num_classes == 10);
}

TEST_CASE("replace_head keeps every non-head parameter bit-exact") {
    const ModelState m = build_model(mnist_class_mlp(), InitSpec{InitScheme::XavierUniform, 2});
    const ModelState wider = replace_head(m, 19, InitSpec{InitScheme::XavierUniform, 99});
    CHECK(wider.content_hash(false) == m.content_hash(false));
    CHECK(wider.find("head.weight")->value.shape == Shape{100, 19});

    // Same width, same seed: still a fresh draw.
    const ModelState same = replace_head(m, 10, InitSpec{InitScheme::XavierUniform, 2});
    CHECK(same.find("head.weight")->value.shape == m.find("head.weight")->value.shape);
    CHECK(same.find("head.weight")->value.data != m.find("head.weight")->value.data);

    // Parameter count arithmetic: old - old_head + new_head.
    const size_t old_head = 100 * 10, new_head = 100 * 19;
    CHECK(wider.prunable_weight_count() == m.prunable_weight_count() - old_head + new_head);
}

TEST_CASE("evaluate: a perfect memorizer scores 1.0 and a constant model ties to class 0") {
    // Head-only model whose weights copy the two informative pixels.
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = {1, 2, 2};
    spec.hidden = {};
    spec.num_classes = 2;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 0});

    DatasetSplit ds;
    ds.name = "toy";
    ds.num_classes = 2;
    ds.input_shape = {1, 2, 2};
    ds.norm.mean = {0.f};
    ds.norm.stdev = {1.f};
    auto fill = [&](SplitPart& p, uint64_t tag) {
        const size_t n = 10;
        p.images = Tensor({n, 1, 2, 2});
        p.labels.resize(n);
        Rng rng(tag);
        for (size_t i = 0; i < n; ++i) {
            float* img = p.images.ptr() + i * 4;
            for (int j = 0; j < 4; ++j) img[j] = static_cast<float>(rng.uniform());
            p.labels[i] = img[0] > img[1] ? 0 : 1;
        }
    };
    fill(ds.train, 11);
    fill(ds.val, 22);
    fill(ds.test, 33);

    Parameter& w = m.param("head.weight");  // [4, 2]
    w.value.fill(0.f);
    w.value.data[0 * 2 + 0] = 1.f;  // logit0 = pixel0
    w.value.data[1 * 2 + 1] = 1.f;  // logit1 = pixel1
    CHECK(evaluate(m, nullptr, ds.train, ds).accuracy == doctest::Approx(1.0));

    // Constant logits: argmax breaks ties to the first class.
    w.value.fill(0.f);
    const EvalResult r = evaluate(m, nullptr, ds.train, ds);
    const double class0 = 0.1 * std::count(ds.train.labels.begin(), ds.train.labels.end(), 0);
    CHECK(r.accuracy == doctest::Approx(class0));

    // Purity: repeated calls agree exactly.
    const EvalResult r2 = evaluate(m, nullptr, ds.train, ds);
    CHECK(r.accuracy == r2.accuracy);
    CHECK(r.mean_loss == r2.mean_loss);
}

TEST_CASE("early stopping follows the patience rule on a scripted loss curve") {
    EarlyStopper stopper(5);
    const double losses[] = {1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99};
    size_t stopped = 0;
    for (size_t i = 0; i < 7; ++i)
        if (stopper.update(losses[i])) {
            stopped = i + 1;
            break;
        }
    CHECK(stopped == 7);
    CHECK(stopper.best_epoch() == 2);
}

TEST_CASE("early stopping cannot trigger before epoch patience+1") {
    EarlyStopper stopper(3);
    CHECK_FALSE(stopper.update(5.0));  // epoch 1 always improves on +inf
    CHECK_FALSE(stopper.update(6.0));
    CHECK_FALSE(stopper.update(7.0));
    CHECK(stopper.update(8.0));  // epoch 4 = patience+1
}

TEST_CASE("learning rate anneals by the factor at each milestone") {
    TrainConfig cfg;
    cfg.learning_rate = 0.1f;
    cfg.anneal_epochs = {50, 60, 75};
    cfg.anneal_factor = 0.1f;
    CHECK(lr_at_epoch(cfg, 1) == doctest::Approx(0.1f));
    CHECK(lr_at_epoch(cfg, 49) == doctest::Approx(0.1f));
    CHECK(lr_at_epoch(cfg, 50) == doctest::Approx(0.01f));
    CHECK(lr_at_epoch(cfg, 60) == doctest::Approx(0.001f));
    CHECK(lr_at_epoch(cfg, 74) == doctest::Approx(0.001f));
    CHECK(lr_at_epoch(cfg, 90) == doctest::Approx(0.0001f));
    for (size_t e = 1; e <= 90; ++e) {
        size_t count = 0;
        for (size_t a : cfg.anneal_epochs) count += (a <= e);
        CHECK(lr_at_epoch(cfg, e) ==
              doctest::Approx(0.1f * std::pow(0.1f, static_cast<float>(count))));
    }
}

TEST_CASE("training: separable blobs reach 99% validation accuracy quickly") {
    const DatasetSplit ds = separable_blobs(48, 6, 1);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = ds.input_shape;
    spec.hidden = {16};
    spec.num_classes = 2;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 3});
    TrainConfig cfg;
    cfg.max_epochs = 20;
    cfg.batch_size = 16;
    cfg.seed = 3;
    const TrainTrace trace = train(m, ds, cfg, nullptr, {});
    CHECK(trace.epochs.back().val_accuracy >= 0.99);
    CHECK(trace.stopped_epoch <= 20);
    CHECK(trace.best_val_epoch >= 1);
}

TEST_CASE("training is deterministic and an all-ones mask changes nothing") {
    const DatasetSplit ds = separable_blobs(24, 5, 2);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = ds.input_shape;
    spec.hidden = {8};
    spec.num_classes = 2;
    TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 7;

    auto run = [&](bool with_mask) {
        ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 9});
        if (with_mask) {
            const Mask ones = Mask::ones_like(m);
            train(m, ds, cfg, &ones, {});
        } else {
            train(m, ds, cfg, nullptr, {});
        }
        return m.content_hash();
    };
    const uint64_t bare = run(false);
    CHECK(bare == run(false));   // run-to-run determinism
    CHECK(bare == run(true));    // all-ones mask is a no-op
}

TEST_CASE("masked weights stay exactly zero through training") {
    const DatasetSplit ds = separable_blobs(24, 5, 4);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = ds.input_shape;
    spec.hidden = {12};
    spec.num_classes = 2;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 10});
    Mask mask = Mask::ones_like(m);
    Rng rng(123);
    for (auto& [name, bits] : mask.entries)
        for (auto& b : bits) b = rng.uniform() < 0.5 ? 0 : 1;

    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 7;
    train(m, ds, cfg, &mask, {});
    for (const auto& [name, bits] : mask.entries) {
        const Parameter& p = *m.find(name);
        for (size_t i = 0; i < bits.size(); ++i)
            if (!bits[i]) CHECK(p.value.data[i] == 0.f);
    }
}

TEST_CASE("snapshots are captured at the requested epochs") {
    const DatasetSplit ds = separable_blobs(16, 4, 5);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = ds.input_shape;
    spec.hidden = {6};
    spec.num_classes = 2;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 11});
    TrainConfig cfg;
    cfg.max_epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = 1;
    const TrainTrace trace = train(m, ds, cfg, nullptr, {2, 4});
    REQUIRE(trace.checkpoints.count(2) == 1);
    REQUIRE(trace.checkpoints.count(4) == 1);
    // The training moved on after epoch 2.
    ModelState snap = build_model(spec, InitSpec{InitScheme::XavierUniform, 11});
    snap.restore(trace.checkpoints.at(2));
    CHECK(snap.content_hash() != m.content_hash());
}

TEST_CASE("training on an empty split is a typed error") {
    DatasetSplit ds = separable_blobs(8, 4, 6);
    ds.val.images = Tensor({0, 1, 4, 4});
    ds.val.labels.clear();
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = ds.input_shape;
    spec.hidden = {4};
    spec.num_classes = 2;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 0});
    TrainConfig cfg;
    cfg.max_epochs = 2;
    try {
        train(m, ds, cfg, nullptr, {});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.kind == DataError::Kind::EmptySplit);
    }
}

TEST_CASE("a 32-bit model gradient survives the finite-difference oracle at 1e-4") {
    // Small MLP, float32 end to end, like the full training path.
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_shape = {1, 3, 3};
    spec.hidden = {5};
    spec.num_classes = 3;
    ModelState m = build_model(spec, InitSpec{InitScheme::XavierUniform, 21});
    const Tensor x = random_tensor<float>({4, 1, 3, 3}, 22, 0.0, 1.0);
    const std::vector<int32_t> labels = {0, 2, 1, 1};

    m.zero_grad();
    Var loss = softmax_cross_entropy(m.forward(x, true), labels);
    backward(loss);

    const double h = 5e-3;
    double max_rel = 0.0;
    for (auto* p : m.parameters()) {
        for (size_t i = 0; i < p->value.numel(); ++i) {
            const float orig = p->value.data[i];
            p->value.data[i] = orig + static_cast<float>(h);
            const double up = softmax_cross_entropy(m.forward(x, true), labels)->value.data[0];
            p->value.data[i] = orig - static_cast<float>(h);
            const double down = softmax_cross_entropy(m.forward(x, true), labels)->value.data[0];
            p->value.data[i] = orig;
            const double fd = (up - down) / (2 * h);
            const double an = p->grad.data[i];
            max_rel = std::max(max_rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0}));
        }
    }
    CHECK(max_rel < 1e-4);
}
