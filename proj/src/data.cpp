#include "ticketlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "ticketlab/common.hpp"
#include "ticketlab/rng.hpp"
#include "ticketlab/serial.hpp"

namespace ticketlab {

namespace {

constexpr char kMagic[8] = {'T', 'N', 'S', 'R', 'D', 'S', 'T', '\n'};
constexpr uint32_t kVersion = 1;

Shape parse_shape(const std::string& s) {
    Shape out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, 'x')) {
        if (tok.empty()) continue;
        out.push_back(static_cast<size_t>(std::stoull(tok)));
    }
    if (out.empty()) throw DataError(DataError::Kind::Malformed, "empty shape string: " + s);
    return out;
}

std::string shape_to_meta(const Shape& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

std::vector<float> parse_floats(const std::string& s) {
    std::vector<float> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stof(tok));
    return out;
}

std::string floats_to_meta(const std::vector<float>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v[i]));
        os << buf;
    }
    return os.str();
}

void write_part(ByteWriter& w, const SplitPart& p) {
    w.u32(static_cast<uint32_t>(p.size()));
    for (int32_t l : p.labels) w.u32(static_cast<uint32_t>(l));
    w.f32_array(p.images.ptr(), p.images.numel());
}

SplitPart read_part(ByteReader& r, const Shape& input_shape, size_t num_classes) {
    SplitPart p;
    const uint32_t n = r.u32();
    p.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t l = r.u32();
        if (l >= num_classes)
            throw DataError(DataError::Kind::LabelOutOfRange,
                            "label out of range: " + std::to_string(l) + " with " +
                                std::to_string(num_classes) + " classes");
        p.labels[i] = static_cast<int32_t>(l);
    }
    Shape img_shape{n};
    img_shape.insert(img_shape.end(), input_shape.begin(), input_shape.end());
    p.images = Tensor(img_shape);
    r.f32_array(p.images.ptr(), p.images.numel());
    return p;
}

uint64_t image_hash(const SplitPart& p, size_t idx) {
    const size_t stride = p.images.numel() / std::max<size_t>(p.size(), 1);
    const float* base = p.images.ptr() + idx * stride;
    uint64_t h = 0xcbf29ce484222325ull;
    const uint8_t* bytes = reinterpret_cast<const uint8_t*>(base);
    for (size_t i = 0; i < stride * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

const SplitPart& DatasetSplit::part(const std::string& which) const {
    if (which == "train") return train;
    if (which == "val") return val;
    if (which == "test") return test;
    throw Error("unknown split part: " + which);
}

NormStats compute_norm_stats(const SplitPart& part, size_t channels) {
    NormStats ns;
    ns.mean.assign(channels, 0.f);
    ns.stdev.assign(channels, 1.f);
    if (part.size() == 0) return ns;
    const size_t per_image = part.images.numel() / part.size();
    const size_t plane = per_image / channels;
    std::vector<double> sum(channels, 0.0), sum2(channels, 0.0);
    for (size_t i = 0; i < part.size(); ++i) {
        const float* img = part.images.ptr() + i * per_image;
        for (size_t c = 0; c < channels; ++c) {
            const float* p = img + c * plane;
            for (size_t j = 0; j < plane; ++j) {
                sum[c] += p[j];
                sum2[c] += static_cast<double>(p[j]) * p[j];
            }
        }
    }
    const double n = static_cast<double>(part.size() * plane);
    for (size_t c = 0; c < channels; ++c) {
        const double mu = sum[c] / n;
        const double var = std::max(sum2[c] / n - mu * mu, 0.0);
        ns.mean[c] = static_cast<float>(mu);
        ns.stdev[c] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
    }
    return ns;
}

void validate_dataset(const DatasetSplit& ds) {
    if (ds.num_classes < 2)
        throw DataError(DataError::Kind::Malformed, "dataset needs at least 2 classes");
    if (ds.input_shape.empty())
        throw DataError(DataError::Kind::ShapeMismatch, "dataset input shape is empty");
    const size_t per_image = shape_numel(ds.input_shape);
    for (const auto* part : {&ds.train, &ds.val, &ds.test}) {
        if (part->size() == 0)
            throw DataError(DataError::Kind::EmptySplit, "dataset split is empty");
        if (part->images.numel() != part->size() * per_image)
            throw DataError(DataError::Kind::ShapeMismatch,
                            "split image tensor " + shape_str(part->images.shape) +
                                " does not match input shape " + shape_str(ds.input_shape));
        for (int32_t l : part->labels)
            if (l < 0 || static_cast<size_t>(l) >= ds.num_classes)
                throw DataError(DataError::Kind::LabelOutOfRange,
                                "label out of range: " + std::to_string(l));
    }
    // Disjointness: identical image bytes may not appear in two splits.
    std::unordered_map<uint64_t, std::pair<int, size_t>> seen;
    const SplitPart* parts[3] = {&ds.train, &ds.val, &ds.test};
    for (int pi = 0; pi < 3; ++pi) {
        for (size_t i = 0; i < parts[pi]->size(); ++i) {
            const uint64_t h = image_hash(*parts[pi], i);
            auto [it, inserted] = seen.try_emplace(h, std::make_pair(pi, i));
            if (!inserted && it->second.first != pi) {
                const float* a = parts[pi]->images.ptr() + i * per_image;
                const float* b =
                    parts[it->second.first]->images.ptr() + it->second.second * per_image;
                if (std::equal(a, a + per_image, b))
                    throw DataError(DataError::Kind::SplitOverlap,
                                    "split overlap: identical sample present in two splits");
            }
        }
    }
}

void save_dataset(const DatasetSplit& ds, const std::string& path) {
    ByteWriter w;
    w.bytes(kMagic, 8);
    w.u32(kVersion);
    std::map<std::string, std::string> meta;
    meta["name"] = ds.name;
    meta["num_classes"] = std::to_string(ds.num_classes);
    meta["input_shape"] = shape_to_meta(ds.input_shape);
    meta["norm_mean"] = floats_to_meta(ds.norm.mean);
    meta["norm_std"] = floats_to_meta(ds.norm.stdev);
    meta["checksum"] = "crc32";
    meta["created_by"] = std::string(kToolName) + " " + kToolVersion;
    w.u32(static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        w.str(k);
        w.str(v);
    }
    write_part(w, ds.train);
    write_part(w, ds.val);
    write_part(w, ds.test);
    std::vector<uint8_t> payload = w.data();
    append_crc(payload);
    write_file_atomic(path, payload);
}

DatasetSplit load_dataset(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    const size_t payload_len = check_crc(bytes);
    ByteReader r(bytes.data(), payload_len);
    char magic[8];
    r.raw(magic, 8);
    if (!std::equal(magic, magic + 8, kMagic))
        throw DataError(DataError::Kind::BadMagic, "bad magic: not a dataset container: " + path);
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError(DataError::Kind::BadVersion,
                        "bad version: " + std::to_string(version) + " (expected " +
                            std::to_string(kVersion) + ")");
    std::map<std::string, std::string> meta;
    const uint32_t n_meta = r.u32();
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        meta[k] = r.str();
    }
    for (const char* key : {"name", "num_classes", "input_shape", "norm_mean", "norm_std"})
        if (!meta.count(key))
            throw DataError(DataError::Kind::MissingEntry, std::string("missing metadata: ") + key);

    DatasetSplit ds;
    ds.name = meta["name"];
    ds.num_classes = static_cast<size_t>(std::stoull(meta["num_classes"]));
    ds.input_shape = parse_shape(meta["input_shape"]);
    ds.norm.mean = parse_floats(meta["norm_mean"]);
    ds.norm.stdev = parse_floats(meta["norm_std"]);
    ds.train = read_part(r, ds.input_shape, ds.num_classes);
    ds.val = read_part(r, ds.input_shape, ds.num_classes);
    ds.test = read_part(r, ds.input_shape, ds.num_classes);
    validate_dataset(ds);
    return ds;
}

// ------------------------------------------------------------- generators

namespace {

struct Rgb {
    double r, g, b;
};

// Well-spread hues via golden-ratio stepping.
Rgb class_color(uint64_t seed, size_t cls) {
    Rng rng(hash_mix(hash_mix(seed, "palette"), cls));
    const double hue = std::fmod(0.1 + 0.618033988749895 * static_cast<double>(cls) + 0.2 * rng.uniform(), 1.0);
    const double sat = 0.75 + 0.2 * rng.uniform();
    const double val = 0.7 + 0.25 * rng.uniform();
    const double h6 = hue * 6.0;
    const int i = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
    switch (i) {
        case 0: return {val, t, p};
        case 1: return {q, val, p};
        case 2: return {p, val, t};
        case 3: return {p, q, val};
        case 4: return {t, p, val};
        default: return {val, p, q};
    }
}

enum class ShapeKind { Circle, Ring, Square, Diamond, Cross, Triangle };

double shape_coverage(ShapeKind kind, double dx, double dy, double radius) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (kind) {
        case ShapeKind::Circle: return std::hypot(dx, dy) <= radius ? 1.0 : 0.0;
        case ShapeKind::Ring: {
            const double d = std::hypot(dx, dy);
            return (d <= radius && d >= 0.55 * radius) ? 1.0 : 0.0;
        }
        case ShapeKind::Square: return (ax <= radius * 0.85 && ay <= radius * 0.85) ? 1.0 : 0.0;
        case ShapeKind::Diamond: return (ax + ay) <= radius * 1.15 ? 1.0 : 0.0;
        case ShapeKind::Cross:
            return ((ax <= radius * 0.35 && ay <= radius) || (ay <= radius * 0.35 && ax <= radius))
                       ? 1.0
                       : 0.0;
        case ShapeKind::Triangle:
            return (dy >= -radius * 0.8 && ay <= radius &&
                    ax <= (radius * 0.9) * (1.0 - (dy + radius * 0.8) / (1.8 * radius)))
                       ? 1.0
                       : 0.0;
    }
    return 0.0;
}

void paint_shape(std::vector<double>& rgb, size_t S, ShapeKind kind, double cx, double cy,
                 double radius, const Rgb& color, double alpha) {
    const size_t plane = S * S;
    for (size_t y = 0; y < S; ++y)
        for (size_t x = 0; x < S; ++x) {
            const double cov =
                shape_coverage(kind, (static_cast<double>(x) + 0.5) - cx,
                               (static_cast<double>(y) + 0.5) - cy, radius);
            if (cov <= 0) continue;
            const double a = alpha * cov;
            const size_t i = y * S + x;
            rgb[i] = (1 - a) * rgb[i] + a * color.r;
            rgb[plane + i] = (1 - a) * rgb[plane + i] + a * color.g;
            rgb[2 * plane + i] = (1 - a) * rgb[2 * plane + i] + a * color.b;
        }
}

// Class identity = (signature shape, signature color, coarse position cell).
// Difficulty comes from jitter, distractor shapes drawn with other classes'
// attributes, brightness variation, and pixel noise.
void render_natural(std::vector<double>& rgb, size_t S, size_t cls, size_t classes, uint64_t seed,
                    Rng& rng) {
    const size_t plane = S * S;
    const Rgb fg = class_color(seed, cls);
    const Rgb bg = class_color(hash_mix(seed, "bg"), cls % std::max<size_t>(classes / 2, 1));
    const auto kind = static_cast<ShapeKind>(cls % 6);
    const double bright = 0.55 + 0.5 * rng.uniform();

    for (size_t i = 0; i < plane; ++i) {
        rgb[i] = 0.35 * bg.r * bright;
        rgb[plane + i] = 0.35 * bg.g * bright;
        rgb[2 * plane + i] = 0.35 * bg.b * bright;
    }

    // Distractor drawn with a different class's attributes.
    const size_t other = (cls + 1 + rng.below(classes - 1)) % classes;
    paint_shape(rgb, S, static_cast<ShapeKind>(other % 6), rng.uniform(0.2, 0.8) * S,
                rng.uniform(0.2, 0.8) * S, rng.uniform(0.10, 0.16) * S, class_color(seed, other),
                0.5);

    // Signature shape near a class-specific grid cell, jittered.
    Rng cell_rng(hash_mix(hash_mix(seed, "cell"), cls));
    const double cell_x = 0.3 + 0.4 * cell_rng.uniform();
    const double cell_y = 0.3 + 0.4 * cell_rng.uniform();
    const double cx = (cell_x + rng.uniform(-0.17, 0.17)) * S;
    const double cy = (cell_y + rng.uniform(-0.17, 0.17)) * S;
    const double radius = rng.uniform(0.16, 0.26) * S;
    paint_shape(rgb, S, kind, cx, cy, radius, {fg.r * bright, fg.g * bright, fg.b * bright}, 0.9);

    for (double& v : rgb) v = std::clamp(v + 0.09 * rng.normal(), 0.0, 1.0);
}

// Class identity = (orientation, frequency, waveform mix). Channels share one
// near-gray texture with a small tint, so per-channel statistics sit close
// together and far from the saturated shape images.
void render_texture(std::vector<double>& rgb, size_t S, size_t cls, size_t classes, uint64_t seed,
                    Rng& rng) {
    const size_t plane = S * S;
    Rng cls_rng(hash_mix(hash_mix(seed, "texclass"), cls));
    const double angle =
        3.14159265358979323846 * (static_cast<double>(cls) / static_cast<double>(classes)) +
        0.15 * cls_rng.uniform();
    const double freq = 1.8 + 0.9 * static_cast<double>(cls % 5) + 0.4 * cls_rng.uniform();
    const double square_mix = (cls % 2) ? 0.65 : 0.0;
    const double checker_mix = (cls % 3 == 0) ? 0.5 : 0.0;
    const double ca = std::cos(angle), sa = std::sin(angle);

    const double phase = rng.uniform(0.0, 6.283185307179586);
    const double jitter = rng.uniform(-0.12, 0.12);
    const double contrast = 0.6 + 0.3 * rng.uniform();

    for (size_t y = 0; y < S; ++y)
        for (size_t x = 0; x < S; ++x) {
            const double u = (static_cast<double>(x) / S - 0.5);
            const double v = (static_cast<double>(y) / S - 0.5);
            const double t = (u * ca + v * sa) * (freq + jitter) * 6.283185307179586 + phase;
            const double s = (u * -sa + v * ca) * (freq + jitter) * 6.283185307179586;
            double wave = std::sin(t);
            if (square_mix > 0) wave = (1 - square_mix) * wave + square_mix * (wave >= 0 ? 1.0 : -1.0);
            if (checker_mix > 0) wave = (1 - checker_mix) * wave + checker_mix * (std::sin(t) * std::sin(s) >= 0 ? 1.0 : -1.0);
            const double g = 0.5 + 0.5 * contrast * wave;
            const size_t i = y * S + x;
            rgb[i] = g;
            rgb[plane + i] = g;
            rgb[2 * plane + i] = g;
        }

    const double tint = 0.04 * (cls_rng.uniform() - 0.5);
    for (size_t i = 0; i < plane; ++i) {
        rgb[i] = std::clamp(rgb[i] + tint + 0.10 * rng.normal(), 0.0, 1.0);
        rgb[plane + i] = std::clamp(rgb[plane + i] + 0.10 * rng.normal(), 0.0, 1.0);
        rgb[2 * plane + i] = std::clamp(rgb[2 * plane + i] - tint + 0.10 * rng.normal(), 0.0, 1.0);
    }
}

SplitPart generate_part(SynthKind kind, size_t classes, size_t per_class, size_t S, uint64_t seed,
                        uint64_t split_tag) {
    SplitPart part;
    const size_t n = classes * per_class;
    part.images = Tensor({n, 3, S, S});
    part.labels.resize(n);
    std::vector<double> rgb(3 * S * S);
    size_t idx = 0;
    for (size_t cls = 0; cls < classes; ++cls) {
        for (size_t k = 0; k < per_class; ++k, ++idx) {
            Rng rng(hash_mix(hash_mix(hash_mix(seed, split_tag), cls), k));
            if (kind == SynthKind::NaturalProxy)
                render_natural(rgb, S, cls, classes, seed, rng);
            else
                render_texture(rgb, S, cls, classes, seed, rng);
            float* dst = part.images.ptr() + idx * 3 * S * S;
            for (size_t i = 0; i < rgb.size(); ++i) dst[i] = static_cast<float>(rgb[i]);
            part.labels[idx] = static_cast<int32_t>(cls);
        }
    }
    return part;
}

}  // namespace

SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "natural-proxy") return SynthKind::NaturalProxy;
    if (s == "texture-proxy") return SynthKind::TextureProxy;
    throw UsageError("unknown synthetic kind: " + s + " (expected natural-proxy or texture-proxy)");
}

DatasetSplit make_synthetic(SynthKind kind, size_t classes, size_t per_class, size_t image_size,
                            uint64_t seed) {
    if (classes < 2) throw DataError(DataError::Kind::Malformed, "need at least 2 classes");
    if (per_class == 0 || image_size < 8)
        throw DataError(DataError::Kind::Malformed, "per-class count must be positive and size >= 8");
    const size_t val_pc = std::clamp<size_t>(per_class / 10, 4, 500);
    const size_t test_pc = std::clamp<size_t>(per_class / 4, 25, 1000);
    DatasetSplit ds;
    ds.name = (kind == SynthKind::NaturalProxy ? "natural-proxy" : "texture-proxy");
    ds.name += "-c" + std::to_string(classes) + "-n" + std::to_string(per_class) + "-s" +
               std::to_string(image_size) + "-r" + std::to_string(seed);
    ds.num_classes = classes;
    ds.input_shape = {3, image_size, image_size};
    ds.train = generate_part(kind, classes, per_class, image_size, seed, 1);
    ds.val = generate_part(kind, classes, val_pc, image_size, seed, 2);
    ds.test = generate_part(kind, classes, test_pc, image_size, seed, 3);
    ds.norm = compute_norm_stats(ds.train, 3);
    validate_dataset(ds);
    return ds;
}

DatasetSplit subsample(const DatasetSplit& ds, const SubsampleSpec& spec) {
    if (!(spec.fraction > 0.0) || spec.fraction > 1.0)
        throw DataError(DataError::Kind::Malformed,
                        "subsample fraction must be in (0,1], got " + std::to_string(spec.fraction));
    if (spec.fraction == 1.0) return ds;

    const size_t per_image = shape_numel(ds.input_shape);
    std::map<int32_t, std::vector<size_t>> by_class;
    for (size_t i = 0; i < ds.train.size(); ++i) by_class[ds.train.labels[i]].push_back(i);

    std::vector<size_t> chosen;
    if (spec.stratified) {
        for (auto& [cls, idxs] : by_class) {
            // Prefix of a per-class deterministic shuffle; prefixes nest
            // across fractions under the same seed.
            Rng rng(hash_mix(hash_mix(spec.seed, "subsample"), static_cast<uint64_t>(cls)));
            rng.shuffle(idxs);
            const size_t keep =
                static_cast<size_t>(std::ceil(spec.fraction * static_cast<double>(idxs.size()) - 1e-9));
            if (keep == 0)
                throw DataError(DataError::Kind::EmptySplit,
                                "subsample would empty class " + std::to_string(cls));
            chosen.insert(chosen.end(), idxs.begin(), idxs.begin() + static_cast<long>(keep));
        }
    } else {
        std::vector<size_t> idxs(ds.train.size());
        for (size_t i = 0; i < idxs.size(); ++i) idxs[i] = i;
        Rng rng(hash_mix(spec.seed, "subsample"));
        rng.shuffle(idxs);
        const size_t keep =
            static_cast<size_t>(std::ceil(spec.fraction * static_cast<double>(idxs.size()) - 1e-9));
        chosen.assign(idxs.begin(), idxs.begin() + static_cast<long>(keep));
    }
    std::sort(chosen.begin(), chosen.end());

    DatasetSplit out;
    out.name = ds.name + "-sub" + std::to_string(spec.fraction);
    out.num_classes = ds.num_classes;
    out.input_shape = ds.input_shape;
    out.val = ds.val;
    out.test = ds.test;
    Shape img_shape{chosen.size()};
    img_shape.insert(img_shape.end(), ds.input_shape.begin(), ds.input_shape.end());
    out.train.images = Tensor(img_shape);
    out.train.labels.resize(chosen.size());
    for (size_t i = 0; i < chosen.size(); ++i) {
        const float* src = ds.train.images.ptr() + chosen[i] * per_image;
        std::copy(src, src + per_image, out.train.images.ptr() + i * per_image);
        out.train.labels[i] = ds.train.labels[chosen[i]];
    }
    out.norm = compute_norm_stats(out.train, ds.input_shape[0]);
    validate_dataset(out);
    return out;
}

Tensor make_batch(const SplitPart& part, const Shape& input_shape, const NormStats& norm,
                  const std::vector<size_t>& indices, std::vector<int32_t>& labels_out) {
    const size_t per_image = shape_numel(input_shape);
    const size_t channels = input_shape[0];
    const size_t plane = per_image / channels;
    Shape bshape{indices.size()};
    bshape.insert(bshape.end(), input_shape.begin(), input_shape.end());
    Tensor batch(bshape);
    labels_out.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const float* src = part.images.ptr() + indices[i] * per_image;
        float* dst = batch.ptr() + i * per_image;
        for (size_t c = 0; c < channels; ++c) {
            const float mu = norm.mean[c], inv = 1.0f / norm.stdev[c];
            for (size_t j = 0; j < plane; ++j) dst[c * plane + j] = (src[c * plane + j] - mu) * inv;
        }
        labels_out[i] = part.labels[indices[i]];
    }
    return batch;
}

}  // namespace ticketlab
