#pragma once

// Desk-scale network zoo: a feedforward MLP and a scaled-down residual
// network described by a (stride, channels, repeats) stage plan. Models own
// their parameters and named batch-norm buffers; forward() builds the
// autodiff graph for one batch.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ticketlab/autodiff.hpp"
#include "ticketlab/init.hpp"

namespace ticketlab {

enum class ModelKind { Mlp, MiniResnet };

struct StagePlan {
    size_t stride = 1;
    size_t channels = 8;
    size_t repeats = 1;
};

struct ModelSpec {
    ModelKind kind = ModelKind::Mlp;
    Shape input_shape;               // [C,H,W] (or any shape for the MLP)
    std::vector<size_t> hidden;      // MLP hidden widths
    std::vector<StagePlan> plan;     // residual stage plan
    size_t num_classes = 10;
};

std::string spec_to_string(const ModelSpec& spec);
ModelSpec spec_from_string(const std::string& s);
void validate_spec(const ModelSpec& spec);

struct SnapEntry {
    std::string name;
    Tensor values;
    bool prunable = false;
    bool is_buffer = false;
};
using Snapshot = std::vector<SnapEntry>;

class ModelState {
public:
    ModelSpec spec;
    std::vector<Parameter> params;
    std::map<std::string, Tensor> buffers;  // batch-norm running statistics
    std::string head_name = "head";

    Parameter& param(const std::string& name);
    const Parameter* find(const std::string& name) const;
    std::vector<Parameter*> parameters();
    bool is_head_param(const std::string& name) const;

    void zero_grad();

    // Builds the graph for one normalized batch [B,...]. Training mode uses
    // batch statistics and updates the running ones.
    Var forward(const Tensor& batch, bool training);

    Snapshot snapshot() const;
    void restore(const Snapshot& snap);

    // FNV-1a over raw parameter bytes in declaration order.
    uint64_t content_hash(bool include_head = true) const;

    size_t prunable_weight_count() const;
};

ModelState build_model(const ModelSpec& spec, const InitSpec& init);

// Fresh head sized for `num_classes`; every non-head parameter and buffer is
// copied bit-exactly. The head draw is salted so it differs from the build
// draw even under an identical seed.
ModelState replace_head(const ModelState& model, size_t num_classes, const InitSpec& init);

}  // namespace ticketlab
