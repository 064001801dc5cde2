#pragma once

// Dataset containers and synthetic generators. On disk a dataset is a single
// self-describing binary file: magic, version, key-value metadata (name,
// classes, input shape, per-channel normalization statistics computed from
// the train split), three splits of raw [0,1] float images with integer
// labels, and a trailing CRC-32.

#include <cstdint>
#include <string>
#include <vector>

#include "ticketlab/tensor.hpp"

namespace ticketlab {

struct NormStats {
    std::vector<float> mean;   // per channel
    std::vector<float> stdev;  // per channel
};

struct SplitPart {
    Tensor images;  // [N, C, H, W], raw values in [0,1]
    std::vector<int32_t> labels;

    size_t size() const { return labels.size(); }
};

struct DatasetSplit {
    std::string name;
    SplitPart train, val, test;
    size_t num_classes = 0;
    Shape input_shape;  // [C, H, W]
    NormStats norm;     // from the train split only

    const SplitPart& part(const std::string& which) const;
};

// Population per-channel statistics of a split part.
NormStats compute_norm_stats(const SplitPart& part, size_t channels);

void save_dataset(const DatasetSplit& ds, const std::string& path);
DatasetSplit load_dataset(const std::string& path);

// Structural checks shared by load and the generators: label ranges, shape
// congruence, split disjointness, non-emptiness.
void validate_dataset(const DatasetSplit& ds);

enum class SynthKind { NaturalProxy, TextureProxy };

SynthKind synth_kind_from_string(const std::string& s);

// Deterministic class-conditional generators. `per_class` is the number of
// training samples per class; validation and test parts are sized
// proportionally. NaturalProxy composes colored geometric shapes on tinted
// backgrounds; TextureProxy renders oriented procedural gratings with
// near-gray channels, statistically far from the shape images.
DatasetSplit make_synthetic(SynthKind kind, size_t classes, size_t per_class, size_t image_size,
                            uint64_t seed);

struct SubsampleSpec {
    double fraction = 1.0;  // (0, 1]
    uint64_t seed = 0;
    bool stratified = true;
};

// Stratified reduction of the train part; validation/test untouched. For a
// fixed seed the selections are nested: subsample(f1) is a subset of
// subsample(f2) whenever f1 <= f2.
DatasetSplit subsample(const DatasetSplit& ds, const SubsampleSpec& spec);

// Assemble a normalized batch [n, C, H, W] for the given sample indices.
Tensor make_batch(const SplitPart& part, const Shape& input_shape, const NormStats& norm,
                  const std::vector<size_t>& indices, std::vector<int32_t>& labels_out);

}  // namespace ticketlab
