#pragma once

// Training loop: SGD with Nesterov momentum, step-annealed learning rate,
// early stopping on validation loss, optional pruning mask held exact, and
// parameter snapshots at requested epochs.

#include <optional>
#include <set>

#include "ticketlab/data.hpp"
#include "ticketlab/model.hpp"
#include "ticketlab/optim.hpp"
#include "ticketlab/prune.hpp"

namespace ticketlab {

struct TrainConfig {
    float learning_rate = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 1e-5f;
    size_t batch_size = 64;
    size_t patience = 5;
    std::vector<size_t> anneal_epochs = {50, 60, 75};
    float anneal_factor = 0.1f;
    size_t max_epochs = 90;  // >= last anneal epoch
    uint64_t seed = 0;

    void validate() const;
};

struct EpochRecord {
    size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    float learning_rate = 0.0f;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;
    size_t stopped_epoch = 0;
    size_t best_val_epoch = 0;
    std::map<size_t, Snapshot> checkpoints;
};

// Validation-loss early stopping: stop once the loss has failed to improve
// on the best seen value for `patience` consecutive epochs.
class EarlyStopper {
public:
    explicit EarlyStopper(size_t patience) : patience_(patience) {}

    // Returns true when training should stop after this epoch.
    bool update(double val_loss) {
        ++epoch_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
            bad_ = 0;
            return false;
        }
        return ++bad_ >= patience_;
    }

    size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }

private:
    size_t patience_;
    size_t epoch_ = 0;
    size_t bad_ = 0;
    size_t best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

// lr0 * factor^|{a in anneal_epochs : a <= epoch}|
float lr_at_epoch(const TrainConfig& cfg, size_t epoch);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Argmax accuracy and mean loss over a split part; first index wins ties.
// When a mask is given the evaluation runs on a masked copy of the model.
EvalResult evaluate(const ModelState& model, const Mask* mask, const SplitPart& part,
                    const DatasetSplit& ds);

TrainTrace train(ModelState& model, const DatasetSplit& data, const TrainConfig& cfg,
                 const Mask* mask, const std::set<size_t>& snapshot_epochs);

}  // namespace ticketlab
