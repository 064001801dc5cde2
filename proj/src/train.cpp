#include "ticketlab/train.hpp"

#include <algorithm>
#include <cmath>

#include "ticketlab/rng.hpp"

namespace ticketlab {

void TrainConfig::validate() const {
    if (patience < 1) throw Error("train config: patience must be >= 1");
    if (batch_size == 0) throw Error("train config: batch size must be positive");
    if (max_epochs == 0) throw Error("train config: max_epochs must be positive");
    for (size_t i = 1; i < anneal_epochs.size(); ++i)
        if (anneal_epochs[i] <= anneal_epochs[i - 1])
            throw Error("train config: anneal epochs must be strictly increasing");
}

float lr_at_epoch(const TrainConfig& cfg, size_t epoch) {
    float lr = cfg.learning_rate;
    for (size_t a : cfg.anneal_epochs)
        if (a <= epoch) lr *= cfg.anneal_factor;
    return lr;
}

namespace {

EvalResult evaluate_in_place(ModelState& model, const SplitPart& part, const DatasetSplit& ds) {
    const size_t n = part.size();
    const size_t eval_batch = 256;
    size_t correct = 0;
    double loss_sum = 0.0;
    std::vector<size_t> idx;
    std::vector<int32_t> labels;
    for (size_t start = 0; start < n; start += eval_batch) {
        const size_t stop = std::min(n, start + eval_batch);
        idx.resize(stop - start);
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const Tensor batch = make_batch(part, ds.input_shape, ds.norm, idx, labels);
        Var logits = model.forward(batch, /*training=*/false);
        Var loss = softmax_cross_entropy(logits, labels);
        loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(idx.size());
        const size_t classes = logits->value.dim(1);
        for (size_t i = 0; i < idx.size(); ++i) {
            const float* row = logits->value.ptr() + i * classes;
            const size_t pred = static_cast<size_t>(
                std::max_element(row, row + classes) - row);  // first max wins ties
            correct += (pred == static_cast<size_t>(labels[i]));
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(n), loss_sum / static_cast<double>(n)};
}

}  // namespace

EvalResult evaluate(const ModelState& model, const Mask* mask, const SplitPart& part,
                    const DatasetSplit& ds) {
    if (part.size() == 0) throw DataError(DataError::Kind::EmptySplit, "evaluate: empty split");
    ModelState copy = model;
    if (mask) apply_mask(copy, *mask);
    return evaluate_in_place(copy, part, ds);
}

TrainTrace train(ModelState& model, const DatasetSplit& data, const TrainConfig& cfg,
                 const Mask* mask, const std::set<size_t>& snapshot_epochs) {
    cfg.validate();
    if (data.train.size() == 0 || data.val.size() == 0)
        throw DataError(DataError::Kind::EmptySplit, "train: empty train or validation split");
    if (mask && !mask->congruent_with(model))
        throw ShapeError("train: mask is not congruent with the model");

    if (mask) apply_mask(model, *mask);

    OptimizerState opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    const auto params = model.parameters();

    TrainTrace trace;
    EarlyStopper stopper(cfg.patience);

    std::vector<size_t> order(data.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<size_t> batch_idx;
    std::vector<int32_t> labels;

    for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const float lr = lr_at_epoch(cfg, epoch);
        opt.learning_rate = lr;
        Rng shuffle_rng(hash_mix(hash_mix(cfg.seed, "epoch"), epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t stop = std::min(order.size(), start + cfg.batch_size);
            batch_idx.assign(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(stop));
            const Tensor batch = make_batch(data.train, data.input_shape, data.norm, batch_idx, labels);
            model.zero_grad();
            Var loss;
            try {
                Var logits = model.forward(batch, /*training=*/true);
                loss = softmax_cross_entropy(logits, labels);
                backward(loss);
            } catch (const NumericsError& e) {
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " +
                                    e.what());
            }
            loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(batch_idx.size());
            if (mask) mask_gradients(model, *mask);
            opt.sgd_step(params);
            if (mask) apply_mask(model, *mask);  // masked weights stay exactly zero
        }

        const EvalResult val = evaluate_in_place(model, data.val, data);
        if (!std::isfinite(val.mean_loss))
            throw TrainingError("validation loss non-finite at epoch " + std::to_string(epoch));
        trace.epochs.push_back({epoch, loss_sum / static_cast<double>(order.size()), val.mean_loss,
                                val.accuracy, lr});
        if (snapshot_epochs.count(epoch)) trace.checkpoints.emplace(epoch, model.snapshot());

        trace.stopped_epoch = epoch;
        if (stopper.update(val.mean_loss)) break;
    }
    trace.best_val_epoch = stopper.best_epoch();
    return trace;
}

}  // namespace ticketlab
