#include "ticketlab/transfer.hpp"

#include "ticketlab/rng.hpp"

namespace ticketlab {

const char* to_string(ArmKind k) {
    switch (k) {
        case ArmKind::ScratchUnpruned: return "scratch";
        case ArmKind::SourceTicket: return "source_ticket";
        case ArmKind::TargetTicket: return "target_ticket";
        case ArmKind::RandomReinit: return "random_reinit";
        case ArmKind::FullyTrainedTransfer: return "fully_trained";
    }
    return "unknown";
}

ArmKind arm_kind_from_string(const std::string& s) {
    if (s == "scratch") return ArmKind::ScratchUnpruned;
    if (s == "source_ticket") return ArmKind::SourceTicket;
    if (s == "target_ticket") return ArmKind::TargetTicket;
    if (s == "random_reinit") return ArmKind::RandomReinit;
    if (s == "fully_trained") return ArmKind::FullyTrainedTransfer;
    throw UsageError("unknown arm kind: " + s);
}

namespace {

void check_input_shape(const ModelSpec& spec, const DatasetSplit& target) {
    if (shape_numel(spec.input_shape) != shape_numel(target.input_shape) ||
        (spec.kind == ModelKind::MiniResnet && spec.input_shape != target.input_shape))
        throw ShapeError("ticket input shape " + shape_str(spec.input_shape) +
                         " does not match target data " + shape_str(target.input_shape));
}

ArmKind arm_kind_for_bundle(const TicketBundle& b, ArmKind requested) {
    if (requested != ArmKind::SourceTicket) return requested;
    if (b.variant == TicketVariant::FullyTrained) return ArmKind::FullyTrainedTransfer;
    if (b.variant == TicketVariant::RandomReinit) return ArmKind::RandomReinit;
    return requested;
}

}  // namespace

ArmResult transfer_ticket(const TicketBundle& bundle, const DatasetSplit& target,
                          const TrainConfig& cfg) {
    check_input_shape(bundle.model_spec, target);

    ModelState model = model_from_bundle(bundle);
    model = replace_head(model, target.num_classes,
                         InitSpec{InitScheme::XavierUniform, hash_mix(cfg.seed, "transfer-head")});

    // Fixed mask for fine-tuning: bundle mask with the head entries reset to
    // all ones (the head is new) and resized to the new head width.
    Mask mask = bundle.mask;
    for (auto& [name, bits] : mask.entries)
        if (model.is_head_param(name)) bits.assign(model.param(name).value.numel(), 1);

    TrainTrace trace = train(model, target, cfg, &mask, {});
    const EvalResult test = evaluate(model, nullptr, target.test, target);

    ArmResult res;
    res.kind = arm_kind_for_bundle(bundle, ArmKind::SourceTicket);
    res.source_dataset = bundle.source_dataset;
    res.target_dataset = target.name;
    res.round = bundle.round;
    res.sparsity = sparsity_excluding(bundle.mask, model.head_name);
    res.test_accuracy = test.accuracy;
    res.best_val_epoch = trace.best_val_epoch;
    res.stopped_epoch = trace.stopped_epoch;
    res.seed = cfg.seed;
    return res;
}

ArmResult scratch_baseline(const ModelSpec& spec, const DatasetSplit& target,
                           const TrainConfig& cfg, uint64_t seed) {
    check_input_shape(spec, target);
    ModelSpec s = spec;
    s.num_classes = target.num_classes;
    ModelState model = build_model(s, InitSpec{InitScheme::XavierUniform, seed});
    TrainConfig c = cfg;
    c.seed = seed;
    TrainTrace trace = train(model, target, c, nullptr, {});
    const EvalResult test = evaluate(model, nullptr, target.test, target);

    ArmResult res;
    res.kind = ArmKind::ScratchUnpruned;
    res.source_dataset = "-";
    res.target_dataset = target.name;
    res.round = 0;
    res.sparsity = 0.0;
    res.test_accuracy = test.accuracy;
    res.best_val_epoch = trace.best_val_epoch;
    res.stopped_epoch = trace.stopped_epoch;
    res.seed = seed;
    return res;
}

ArmResult run_ticket_on_source(const TicketBundle& bundle, const DatasetSplit& data,
                               const TrainConfig& cfg) {
    check_input_shape(bundle.model_spec, data);
    if (bundle.model_spec.num_classes != data.num_classes)
        throw ShapeError("target-ticket arm: bundle head has " +
                         std::to_string(bundle.model_spec.num_classes) + " classes, data has " +
                         std::to_string(data.num_classes));
    ModelState model = model_from_bundle(bundle);
    TrainTrace trace = train(model, data, cfg, &bundle.mask, {});
    const EvalResult test = evaluate(model, nullptr, data.test, data);

    ArmResult res;
    res.kind = ArmKind::TargetTicket;
    res.source_dataset = bundle.source_dataset;
    res.target_dataset = data.name;
    res.round = bundle.round;
    res.sparsity = bundle.sparsity();
    res.test_accuracy = test.accuracy;
    res.best_val_epoch = trace.best_val_epoch;
    res.stopped_epoch = trace.stopped_epoch;
    res.seed = cfg.seed;
    return res;
}

ArmResult run_arm(const TransferArm& arm, const DatasetSplit& target, const TrainConfig& cfg) {
    if (arm.kind != ArmKind::ScratchUnpruned && !arm.bundle)
        throw Error(std::string("arm ") + to_string(arm.kind) + " requires a ticket bundle");
    TrainConfig c = cfg;
    c.seed = arm.seed;
    switch (arm.kind) {
        case ArmKind::ScratchUnpruned: {
            if (arm.bundle) throw Error("scratch arm must not carry a bundle");
            if (!arm.scratch_spec) throw Error("scratch arm requires a model spec");
            return scratch_baseline(*arm.scratch_spec, target, c, arm.seed);
        }
        case ArmKind::SourceTicket:
            return transfer_ticket(*arm.bundle, target, c);
        case ArmKind::TargetTicket:
            return run_ticket_on_source(*arm.bundle, target, c);
        case ArmKind::RandomReinit: {
            uint64_t fresh = hash_mix(hash_mix(arm.seed, "reinit"), arm.bundle->init_seed);
            if (fresh == arm.bundle->init_seed) fresh += 1;
            const TicketBundle control = random_reinit_control(*arm.bundle, fresh);
            return transfer_ticket(control, target, c);
        }
        case ArmKind::FullyTrainedTransfer: {
            if (arm.bundle->variant != TicketVariant::FullyTrained)
                throw Error("fully_trained arm requires a fully-trained ticket bundle, got " +
                            std::string(to_string(arm.bundle->variant)));
            return transfer_ticket(*arm.bundle, target, c);
        }
    }
    throw Error("unknown arm kind");
}

}  // namespace ticketlab
