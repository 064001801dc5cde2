#include "ticketlab/prune.hpp"

#include <algorithm>
#include <cmath>

namespace ticketlab {

Mask Mask::ones_like(const ModelState& model) {
    Mask m;
    for (const auto& p : model.params)
        if (p.prunable) m.entries[p.name].assign(p.value.numel(), 1);
    return m;
}

size_t Mask::total_entries() const {
    size_t n = 0;
    for (const auto& [name, bits] : entries) n += bits.size();
    return n;
}

size_t Mask::zero_entries() const {
    size_t n = 0;
    for (const auto& [name, bits] : entries)
        for (uint8_t b : bits) n += (b == 0);
    return n;
}

bool Mask::congruent_with(const ModelState& model) const {
    for (const auto& [name, bits] : entries) {
        const Parameter* p = model.find(name);
        if (!p || p->value.numel() != bits.size()) return false;
    }
    return true;
}

size_t prune_count(size_t survivors, double rate) {
    // ceil(rate * survivors); the epsilon keeps exact integer products from
    // tipping over due to the binary representation of the rate.
    return static_cast<size_t>(std::ceil(rate * static_cast<double>(survivors) - 1e-9));
}

double remaining_fraction(size_t round, double rate) {
    return std::pow(1.0 - rate, static_cast<double>(round));
}

size_t surviving_count(size_t initial, size_t rounds, double rate) {
    size_t n = initial;
    for (size_t r = 0; r < rounds; ++r) n -= std::min(n, prune_count(n, rate));
    return n;
}

namespace {

struct Candidate {
    float magnitude;
    const std::string* name;
    size_t index;
};

bool candidate_less(const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (*a.name != *b.name) return *a.name < *b.name;
    return a.index < b.index;
}

bool excluded(const PruneConfig& cfg, const std::string& name) {
    return std::find(cfg.exclude.begin(), cfg.exclude.end(), name) != cfg.exclude.end();
}

}  // namespace

Mask magnitude_prune(const ModelState& model, const Mask& mask, const PruneConfig& cfg) {
    if (!(cfg.rate > 0.0 && cfg.rate < 1.0))
        throw Error("prune rate must be in (0,1), got " + std::to_string(cfg.rate));
    if (!mask.congruent_with(model))
        throw ShapeError("magnitude_prune: mask is not congruent with the model");

    Mask out = mask;
    out.round = mask.round + 1;

    auto collect = [&](const std::string& name) {
        std::vector<Candidate> cands;
        const Parameter& p = *model.find(name);
        const auto& bits = mask.entries.at(name);
        for (size_t i = 0; i < bits.size(); ++i)
            if (bits[i]) cands.push_back({std::abs(p.value.data[i]), &name, i});
        return cands;
    };

    if (cfg.scope == PruneScope::PerLayer) {
        for (auto& [name, bits] : out.entries) {
            if (excluded(cfg, name)) continue;
            auto cands = collect(name);
            const size_t k = prune_count(cands.size(), cfg.rate);
            if (k >= cands.size())
                throw Error("magnitude_prune: layer " + name +
                            " would lose all remaining weights under per-layer scope");
            std::sort(cands.begin(), cands.end(), candidate_less);
            for (size_t i = 0; i < k; ++i) bits[cands[i].index] = 0;
        }
        return out;
    }

    // Global: pool survivors across included layers and cut the k smallest.
    // A single layer may empty under the pooled ranking; only exhausting the
    // whole pool is an error.
    std::vector<Candidate> pool;
    for (const auto& [name, bits] : mask.entries) {
        if (excluded(cfg, name)) continue;
        auto cands = collect(name);
        pool.insert(pool.end(), cands.begin(), cands.end());
    }
    const size_t k = prune_count(pool.size(), cfg.rate);
    if (k >= pool.size())
        throw Error("magnitude_prune: a further round would remove all " +
                    std::to_string(pool.size()) + " remaining weights");
    std::sort(pool.begin(), pool.end(), candidate_less);
    for (size_t i = 0; i < k; ++i) out.entries.at(*pool[i].name)[pool[i].index] = 0;
    return out;
}

void apply_mask(ModelState& model, const Mask& mask) {
    if (!mask.congruent_with(model))
        throw ShapeError("apply_mask: mask is not congruent with the model");
    for (const auto& [name, bits] : mask.entries) {
        Parameter& p = model.param(name);
        for (size_t i = 0; i < bits.size(); ++i)
            if (!bits[i]) p.value.data[i] = 0.f;
    }
}

void mask_gradients(ModelState& model, const Mask& mask) {
    for (const auto& [name, bits] : mask.entries) {
        Parameter& p = model.param(name);
        for (size_t i = 0; i < bits.size(); ++i)
            if (!bits[i]) p.grad.data[i] = 0.f;
    }
}

double sparsity(const Mask& mask) {
    const size_t total = mask.total_entries();
    if (total == 0) return 0.0;
    return static_cast<double>(mask.zero_entries()) / static_cast<double>(total);
}

double sparsity_excluding(const Mask& mask, const std::string& head_prefix) {
    size_t total = 0, zeros = 0;
    for (const auto& [name, bits] : mask.entries) {
        if (name.rfind(head_prefix + ".", 0) == 0) continue;
        total += bits.size();
        for (uint8_t b : bits) zeros += (b == 0);
    }
    if (total == 0) return 0.0;
    return static_cast<double>(zeros) / static_cast<double>(total);
}

}  // namespace ticketlab
