#pragma once

// Magnitude pruning and mask algebra. Masks are immutable once built; each
// pruning round returns a new mask whose support is a strict subset of the
// previous one.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ticketlab/model.hpp"

namespace ticketlab {

struct Mask {
    // One binary array per prunable parameter, keyed by name. Ordered map so
    // iteration (and tie-breaking) is deterministic.
    std::map<std::string, std::vector<uint8_t>> entries;
    size_t round = 0;

    static Mask ones_like(const ModelState& model);

    size_t total_entries() const;
    size_t zero_entries() const;
    bool congruent_with(const ModelState& model) const;
};

enum class PruneScope { Global, PerLayer };

struct PruneConfig {
    double rate = 0.20;
    PruneScope scope = PruneScope::Global;
    std::vector<std::string> exclude;  // parameter names exempt from pruning
};

// Number of weights removed from n survivors in one round.
size_t prune_count(size_t survivors, double rate);

// Zeroes the ceil(rate * survivors) surviving weights of lowest |w|.
// Global scope pools all included layers; ties break by (name, index).
Mask magnitude_prune(const ModelState& model, const Mask& mask, const PruneConfig& cfg);

// Continuous approximation of the surviving fraction, (1 - rate)^round.
double remaining_fraction(size_t round, double rate);

// Exact surviving count after `rounds` applications of the integer schedule.
size_t surviving_count(size_t initial, size_t rounds, double rate);

// w <- w * m elementwise for every masked parameter.
void apply_mask(ModelState& model, const Mask& mask);

// Zeroes gradients of masked-out weights.
void mask_gradients(ModelState& model, const Mask& mask);

// Fraction of zeros over all mask entries.
double sparsity(const Mask& mask);

// Sparsity restricted to non-head entries (used for transfer reporting).
double sparsity_excluding(const Mask& mask, const std::string& head_prefix);

}  // namespace ticketlab
