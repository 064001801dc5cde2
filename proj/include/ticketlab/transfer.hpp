#pragma once

// Transfer protocol: rebuild a ticket's network, replace the classification
// head for the target label set, fine-tune with the mask held fixed, and
// evaluate — plus the comparison arms (scratch baseline, target tickets,
// random reinitialization, fully-trained weights).

#include <optional>

#include "ticketlab/ticket.hpp"

namespace ticketlab {

enum class ArmKind { ScratchUnpruned, SourceTicket, TargetTicket, RandomReinit, FullyTrainedTransfer };

const char* to_string(ArmKind k);
ArmKind arm_kind_from_string(const std::string& s);

struct TransferArm {
    ArmKind kind = ArmKind::ScratchUnpruned;
    std::optional<TicketBundle> bundle;     // absent for the scratch arm
    std::optional<ModelSpec> scratch_spec;  // present only for the scratch arm
    std::string target_dataset;
    uint64_t seed = 0;
};

struct ArmResult {
    ArmKind kind = ArmKind::ScratchUnpruned;
    std::string source_dataset;
    std::string target_dataset;
    size_t round = 0;
    double sparsity = 0.0;
    double test_accuracy = 0.0;
    size_t best_val_epoch = 0;
    size_t stopped_epoch = 0;
    uint64_t seed = 0;
};

// Head replacement + masked fine-tuning on the target; the bundle itself is
// never modified. Reported sparsity excludes the head (its mask is reset to
// all ones by the replacement).
ArmResult transfer_ticket(const TicketBundle& bundle, const DatasetSplit& target,
                          const TrainConfig& cfg);

// Unpruned network trained from scratch on the target.
ArmResult scratch_baseline(const ModelSpec& spec, const DatasetSplit& target,
                           const TrainConfig& cfg, uint64_t seed);

// Ticket retrained on its own dataset: late-reset weights, mask fixed, no
// head replacement. Class counts must already match.
ArmResult run_ticket_on_source(const TicketBundle& bundle, const DatasetSplit& data,
                               const TrainConfig& cfg);

// Dispatch over the arm kinds. random_reinit derives a fresh draw from the
// arm seed and routes through transfer_ticket.
ArmResult run_arm(const TransferArm& arm, const DatasetSplit& target, const TrainConfig& cfg);

}  // namespace ticketlab
