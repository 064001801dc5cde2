#pragma once

// Shared test utilities: the central finite-difference gradient oracle and
// small dataset builders. The oracle recomputes forward values only; it never
// touches the backward implementations it is checking.

#include <functional>
#include <vector>

#include "ticketlab/autodiff.hpp"
#include "ticketlab/data.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab::testing {

template <typename T>
TensorT<T> random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    TensorT<T> t(std::move(shape));
    Rng rng(seed);
    for (T& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Keeps every element at least `margin` away from zero (relu kinks).
template <typename T>
void avoid_kinks(TensorT<T>& t, double margin) {
    for (T& v : t.data) {
        if (std::abs(static_cast<double>(v)) < margin)
            v = static_cast<T>(v < T(0) ? -margin : margin);
    }
}

// Forward map: given leaf vars for every input, produce the output var.
template <typename T>
using ForwardFn = std::function<VarT<T>(const std::vector<VarT<T>>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

// Probes d(sum(weights * output))/d(input) for every input, comparing the
// backward pass against central finite differences of the forward pass.
template <typename T>
GradCheckReport grad_check(const ForwardFn<T>& fwd, const std::vector<TensorT<T>>& inputs,
                           double h, uint64_t probe_seed) {
    // Forward once to size the probe.
    std::vector<VarT<T>> leaves;
    for (const auto& x : inputs) leaves.push_back(make_leaf(x, /*requires_grad=*/true));
    VarT<T> out = fwd(leaves);
    const TensorT<T> probe = random_tensor<T>(out->value.shape, probe_seed, 0.2, 1.0);

    // Scalar loss in double, from forward values only.
    auto loss_at = [&](const std::vector<TensorT<T>>& xs) {
        std::vector<VarT<T>> ls;
        for (const auto& x : xs) ls.push_back(make_leaf(x, false));
        VarT<T> o = fwd(ls);
        double s = 0;
        for (size_t i = 0; i < o->value.numel(); ++i)
            s += static_cast<double>(o->value.data[i]) * static_cast<double>(probe.data[i]);
        return s;
    };

    // Analytic gradients via the implementation under test.
    VarT<T> probe_leaf = make_leaf(probe, false);
    VarT<T> loss = sum_all(mul(out, probe_leaf));
    backward(loss);

    GradCheckReport report;
    std::vector<TensorT<T>> xs = inputs;
    for (size_t which = 0; which < inputs.size(); ++which) {
        for (size_t i = 0; i < xs[which].numel(); ++i) {
            const T orig = xs[which].data[i];
            xs[which].data[i] = orig + static_cast<T>(h);
            const double up = loss_at(xs);
            xs[which].data[i] = orig - static_cast<T>(h);
            const double down = loss_at(xs);
            xs[which].data[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = leaves[which]->grad.numel() ? static_cast<double>(leaves[which]->grad.data[i]) : 0.0;
            const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
            report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - an) / denom);
            ++report.checked;
        }
    }
    return report;
}

// Tiny two-class linearly separable blobs, for quick end-to-end training.
inline DatasetSplit separable_blobs(size_t per_class, size_t dim_side, uint64_t seed) {
    DatasetSplit ds;
    ds.name = "blobs";
    ds.num_classes = 2;
    ds.input_shape = {1, dim_side, dim_side};
    const size_t per_image = dim_side * dim_side;
    auto gen = [&](size_t n, uint64_t tag) {
        SplitPart part;
        part.images = Tensor({n * 2, 1, dim_side, dim_side});
        part.labels.resize(n * 2);
        size_t idx = 0;
        for (size_t cls = 0; cls < 2; ++cls)
            for (size_t i = 0; i < n; ++i, ++idx) {
                Rng rng(hash_mix(hash_mix(hash_mix(seed, tag), cls), i));
                float* img = part.images.ptr() + idx * per_image;
                const float center = cls == 0 ? 0.3f : 0.7f;
                for (size_t j = 0; j < per_image; ++j)
                    img[j] = std::clamp(center + 0.08f * static_cast<float>(rng.normal()), 0.f, 1.f);
                part.labels[idx] = static_cast<int32_t>(cls);
            }
        return part;
    };
    ds.train = gen(per_class, 1);
    ds.val = gen(std::max<size_t>(per_class / 4, 8), 2);
    ds.test = gen(std::max<size_t>(per_class / 4, 8), 3);
    ds.norm = compute_norm_stats(ds.train, 1);
    return ds;
}

}  // namespace ticketlab::testing
