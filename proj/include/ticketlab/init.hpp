#pragma once

// Weight initialization. Draws are a pure function of (scheme, seed, shape):
// the same triple always produces bit-identical values.

#include <cstdint>

#include "ticketlab/rng.hpp"
#include "ticketlab/tensor.hpp"

namespace ticketlab {

enum class InitScheme { XavierUniform };

struct InitSpec {
    InitScheme scheme = InitScheme::XavierUniform;
    uint64_t seed = 0;
};

// fan_in/fan_out by convention: linear weights are [in, out]; conv kernels
// are [out_ch, in_ch, kh, kw].
inline std::pair<size_t, size_t> fan_of(const Shape& shape) {
    if (shape.size() == 2) return {shape[0], shape[1]};
    if (shape.size() == 4) {
        const size_t rf = shape[2] * shape[3];
        return {shape[1] * rf, shape[0] * rf};
    }
    const size_t n = shape_numel(shape);
    return {n, n};
}

// Xavier-uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
TensorT<T> xavier_uniform(uint64_t seed, const Shape& shape) {
    const auto [fan_in, fan_out] = fan_of(shape);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    TensorT<T> t(shape);
    Rng rng(seed);
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-a, a));
    return t;
}

template <typename T>
TensorT<T> draw_init(const InitSpec& spec, const Shape& shape) {
    switch (spec.scheme) {
        case InitScheme::XavierUniform: return xavier_uniform<T>(spec.seed, shape);
    }
    throw Error("unknown init scheme");
}

}  // namespace ticketlab
