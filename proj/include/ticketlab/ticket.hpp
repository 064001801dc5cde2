#pragma once

// The iterative winning-ticket procedure: train, prune by magnitude, reset
// survivors to an early-training snapshot, retrain. Produces a ladder of
// tickets of strictly increasing sparsity plus the control constructions,
// and a portable single-file container for individual tickets.

#include <optional>
#include <string>
#include <vector>

#include "ticketlab/prune.hpp"
#include "ticketlab/train.hpp"

namespace ticketlab {

enum class TicketVariant { LateResetK, OriginalInit, FullyTrained, RandomReinit };

const char* to_string(TicketVariant v);
TicketVariant ticket_variant_from_string(const std::string& s);

struct TicketBundle {
    Mask mask;
    Snapshot theta;  // stored pre-masked: theta == theta * mask on masked entries
    TicketVariant variant = TicketVariant::LateResetK;
    size_t k = 0;      // snapshot epoch; 0 means the pre-training weights
    size_t round = 0;  // pruning rounds behind the mask
    std::string source_dataset;
    ModelSpec model_spec;
    uint64_t init_seed = 0;
    std::string created_by;

    double sparsity() const { return ticketlab::sparsity(mask); }
    // FNV-1a over mask bits and theta bytes; used to check immutability.
    uint64_t content_hash() const;
};

struct RoundMetrics {
    size_t round = 0;  // 0 is the unpruned first run
    double sparsity = 0.0;
    double test_accuracy = 0.0;
    double val_loss = 0.0;
    size_t stopped_epoch = 0;
    size_t best_val_epoch = 0;
};

struct TicketLadder {
    std::vector<TicketBundle> bundles;   // rounds 1..N, late-reset tickets
    std::vector<Snapshot> trained;       // end-of-training weights per round 0..N
    std::vector<RoundMetrics> metrics;   // rounds 0..N
    Snapshot theta_k;
    size_t k = 0;
    uint64_t init_seed = 0;
    std::string source_dataset;
    ModelSpec model_spec;
    std::string diagnostic;  // non-empty when a round diverged and the ladder is a prefix
};

// Runs `rounds` iterations of train/prune/reset. The theta snapshot is taken
// once, at epoch k of the first (unpruned) run; k = 0 snapshots the freshly
// initialized weights instead, yielding original-initialization tickets.
TicketLadder find_tickets(const ModelSpec& spec, const InitSpec& init, const DatasetSplit& data,
                          const TrainConfig& train_cfg, const PruneConfig& prune_cfg, size_t rounds,
                          size_t k);

// Restores every parameter from the snapshot, then zeroes masked weights.
void late_reset(ModelState& model, const Snapshot& theta_k, const Mask& mask);

// Same mask, freshly drawn weights; the classic control arm.
TicketBundle random_reinit_control(const TicketBundle& bundle, uint64_t fresh_seed);

// Bundle carrying the end-of-training weights of the given round's network.
TicketBundle fully_trained_variant(const TicketLadder& ladder, size_t round);

// Builds a model from a bundle: spec from the bundle, weights from theta.
ModelState model_from_bundle(const TicketBundle& bundle);

// Single-file ticket container (.ticket): magic, version, key-value
// metadata, per-parameter tensors, per-mask packed bitsets, trailing CRC-32.
void save_ticket(const TicketBundle& bundle, const std::string& path);
TicketBundle load_ticket(const std::string& path);

}  // namespace ticketlab
