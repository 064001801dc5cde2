#include "ticketlab/ticket.hpp"

#include <algorithm>

#include "ticketlab/rng.hpp"

namespace ticketlab {

const char* to_string(TicketVariant v) {
    switch (v) {
        case TicketVariant::LateResetK: return "late_reset_k";
        case TicketVariant::OriginalInit: return "original_init";
        case TicketVariant::FullyTrained: return "fully_trained";
        case TicketVariant::RandomReinit: return "random_reinit";
    }
    return "unknown";
}

TicketVariant ticket_variant_from_string(const std::string& s) {
    if (s == "late_reset_k") return TicketVariant::LateResetK;
    if (s == "original_init") return TicketVariant::OriginalInit;
    if (s == "fully_trained") return TicketVariant::FullyTrained;
    if (s == "random_reinit") return TicketVariant::RandomReinit;
    throw DataError(DataError::Kind::Malformed, "unknown ticket variant: " + s);
}

uint64_t TicketBundle::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const void* data, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [name, bits] : mask.entries) {
        feed(name.data(), name.size());
        feed(bits.data(), bits.size());
    }
    for (const auto& e : theta) {
        feed(e.name.data(), e.name.size());
        feed(e.values.ptr(), e.values.numel() * sizeof(float));
    }
    return h;
}

void late_reset(ModelState& model, const Snapshot& theta_k, const Mask& mask) {
    model.restore(theta_k);
    apply_mask(model, mask);
}

namespace {

// Snapshot with masked entries zeroed, so bundles store theta pre-masked.
Snapshot masked_snapshot(const Snapshot& snap, const Mask& mask) {
    Snapshot out = snap;
    for (auto& e : out) {
        auto it = mask.entries.find(e.name);
        if (it == mask.entries.end()) continue;
        const auto& bits = it->second;
        if (bits.size() != e.values.numel())
            throw ShapeError("mask entry " + e.name + " does not match snapshot tensor " +
                             shape_str(e.values.shape));
        for (size_t i = 0; i < bits.size(); ++i)
            if (!bits[i]) e.values.data[i] = 0.f;
    }
    return out;
}

}  // namespace

TicketLadder find_tickets(const ModelSpec& spec, const InitSpec& init, const DatasetSplit& data,
                          const TrainConfig& train_cfg, const PruneConfig& prune_cfg, size_t rounds,
                          size_t k) {
    if (rounds < 1) throw Error("find_tickets: rounds must be >= 1");

    TicketLadder ladder;
    ladder.k = k;
    ladder.init_seed = init.seed;
    ladder.source_dataset = data.name;
    ladder.model_spec = spec;

    ModelState model = build_model(spec, init);
    const Snapshot theta_0 = model.snapshot();

    std::set<size_t> snaps;
    if (k > 0) snaps.insert(k);
    TrainTrace first = train(model, data, train_cfg, nullptr, snaps);
    if (k > first.stopped_epoch)
        throw TrainingError("find_tickets: k = " + std::to_string(k) +
                            " exceeds the first run's stopped epoch " +
                            std::to_string(first.stopped_epoch));
    ladder.theta_k = (k == 0) ? theta_0 : first.checkpoints.at(k);

    auto record_metrics = [&](size_t round, double sp, const TrainTrace& trace) {
        const EvalResult test = evaluate(model, nullptr, data.test, data);
        RoundMetrics m;
        m.round = round;
        m.sparsity = sp;
        m.test_accuracy = test.accuracy;
        m.val_loss = trace.epochs.empty() ? 0.0 : trace.epochs.back().val_loss;
        m.stopped_epoch = trace.stopped_epoch;
        m.best_val_epoch = trace.best_val_epoch;
        ladder.metrics.push_back(m);
    };

    ladder.trained.push_back(model.snapshot());
    record_metrics(0, 0.0, first);

    Mask mask = Mask::ones_like(model);
    for (size_t r = 1; r <= rounds; ++r) {
        mask = magnitude_prune(model, mask, prune_cfg);

        TicketBundle bundle;
        bundle.mask = mask;
        bundle.theta = masked_snapshot(ladder.theta_k, mask);
        bundle.variant = (k == 0) ? TicketVariant::OriginalInit : TicketVariant::LateResetK;
        bundle.k = k;
        bundle.round = r;
        bundle.source_dataset = data.name;
        bundle.model_spec = spec;
        bundle.init_seed = init.seed;
        bundle.created_by = std::string(kToolName) + " " + kToolVersion;
        ladder.bundles.push_back(std::move(bundle));

        late_reset(model, ladder.theta_k, mask);
        try {
            TrainTrace trace = train(model, data, train_cfg, &mask, {});
            ladder.trained.push_back(model.snapshot());
            record_metrics(r, sparsity(mask), trace);
        } catch (const TrainingError& e) {
            ladder.diagnostic = "round " + std::to_string(r) + ": " + e.what();
            break;
        }
    }
    return ladder;
}

TicketBundle random_reinit_control(const TicketBundle& bundle, uint64_t fresh_seed) {
    if (fresh_seed == bundle.init_seed)
        throw Error("random_reinit_control: fresh seed equals the original init seed " +
                    std::to_string(fresh_seed) + "; that would not be a control");
    TicketBundle out = bundle;
    out.variant = TicketVariant::RandomReinit;
    ModelState fresh = build_model(bundle.model_spec, InitSpec{InitScheme::XavierUniform, fresh_seed});
    out.theta = masked_snapshot(fresh.snapshot(), bundle.mask);
    out.init_seed = fresh_seed;
    return out;
}

TicketBundle fully_trained_variant(const TicketLadder& ladder, size_t round) {
    if (round >= ladder.trained.size())
        throw Error("fully_trained_variant: round " + std::to_string(round) +
                    " has no retained end-of-training weights");
    if (round == 0 || round > ladder.bundles.size())
        throw Error("fully_trained_variant: round must name a pruned round with a mask");
    const TicketBundle& base = ladder.bundles[round - 1];
    TicketBundle out = base;
    out.variant = TicketVariant::FullyTrained;
    out.theta = masked_snapshot(ladder.trained[round], base.mask);
    return out;
}

ModelState model_from_bundle(const TicketBundle& bundle) {
    ModelState model = build_model(bundle.model_spec,
                                   InitSpec{InitScheme::XavierUniform, bundle.init_seed});
    model.restore(bundle.theta);
    apply_mask(model, bundle.mask);
    return model;
}

}  // namespace ticketlab
