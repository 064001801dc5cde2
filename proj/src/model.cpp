#include "ticketlab/model.hpp"

#include <algorithm>
#include <sstream>

#include "ticketlab/rng.hpp"

namespace ticketlab {

namespace {

constexpr float kBnDecay = 0.9f;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

uint64_t param_seed(const InitSpec& init, const std::string& name) {
    return hash_mix(init.seed, name);
}

uint64_t head_replace_seed(const InitSpec& init, const std::string& name) {
    return hash_mix(hash_mix(init.seed, name), "head-replace");
}

}  // namespace

void validate_spec(const ModelSpec& spec) {
    if (spec.num_classes < 2) throw Error("model spec: num_classes must be >= 2");
    if (spec.input_shape.empty()) throw Error("model spec: input shape is empty");
    if (spec.kind == ModelKind::MiniResnet) {
        if (spec.plan.empty()) throw Error("model spec: residual plan is empty");
        if (spec.input_shape.size() != 3)
            throw Error("model spec: residual input must be [C,H,W], got " +
                        shape_str(spec.input_shape));
        for (const auto& st : spec.plan)
            if (st.stride == 0 || st.channels == 0 || st.repeats == 0)
                throw Error("model spec: residual plan entries must be positive");
    }
}

std::string spec_to_string(const ModelSpec& spec) {
    std::ostringstream os;
    os << (spec.kind == ModelKind::Mlp ? "mlp" : "mini-resnet");
    os << ";in=";
    for (size_t i = 0; i < spec.input_shape.size(); ++i) os << (i ? "x" : "") << spec.input_shape[i];
    if (spec.kind == ModelKind::Mlp) {
        os << ";hidden=";
        for (size_t i = 0; i < spec.hidden.size(); ++i) os << (i ? "," : "") << spec.hidden[i];
    } else {
        os << ";plan=";
        for (size_t i = 0; i < spec.plan.size(); ++i)
            os << (i ? "," : "") << spec.plan[i].stride << ":" << spec.plan[i].channels << ":"
               << spec.plan[i].repeats;
    }
    os << ";classes=" << spec.num_classes;
    return os.str();
}

ModelSpec spec_from_string(const std::string& s) {
    ModelSpec spec;
    const auto fields = split(s, ';');
    if (fields.empty()) throw Error("empty model spec string");
    if (fields[0] == "mlp")
        spec.kind = ModelKind::Mlp;
    else if (fields[0] == "mini-resnet")
        spec.kind = ModelKind::MiniResnet;
    else
        throw Error("unknown model kind: " + fields[0]);
    for (size_t i = 1; i < fields.size(); ++i) {
        const auto eq = fields[i].find('=');
        if (eq == std::string::npos) throw Error("malformed model spec field: " + fields[i]);
        const std::string key = fields[i].substr(0, eq), val = fields[i].substr(eq + 1);
        if (key == "in") {
            spec.input_shape.clear();
            for (const auto& d : split(val, 'x'))
                spec.input_shape.push_back(std::stoull(d));
        } else if (key == "hidden") {
            spec.hidden.clear();
            for (const auto& d : split(val, ','))
                spec.hidden.push_back(std::stoull(d));
        } else if (key == "plan") {
            spec.plan.clear();
            for (const auto& st : split(val, ',')) {
                const auto parts = split(st, ':');
                if (parts.size() != 3) throw Error("malformed plan entry: " + st);
                spec.plan.push_back(
                    {std::stoull(parts[0]), std::stoull(parts[1]), std::stoull(parts[2])});
            }
        } else if (key == "classes") {
            spec.num_classes = std::stoull(val);
        } else {
            throw Error("unknown model spec field: " + key);
        }
    }
    validate_spec(spec);
    return spec;
}

Parameter& ModelState::param(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p;
    throw Error("no such parameter: " + name);
}

const Parameter* ModelState::find(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

std::vector<Parameter*> ModelState::parameters() {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p);
    return out;
}

bool ModelState::is_head_param(const std::string& name) const {
    return name.rfind(head_name + ".", 0) == 0;
}

void ModelState::zero_grad() {
    for (auto& p : params) p.grad.fill(0.f);
}

Snapshot ModelState::snapshot() const {
    Snapshot snap;
    snap.reserve(params.size() + buffers.size());
    for (const auto& p : params) snap.push_back({p.name, p.value, p.prunable, false});
    for (const auto& [name, t] : buffers) snap.push_back({name, t, false, true});
    return snap;
}

void ModelState::restore(const Snapshot& snap) {
    for (const auto& e : snap) {
        if (e.is_buffer) {
            auto it = buffers.find(e.name);
            if (it == buffers.end()) throw Error("restore: no such buffer: " + e.name);
            check_same_shape(it->second, e.values, ("restore " + e.name).c_str());
            it->second = e.values;
        } else {
            Parameter& p = param(e.name);
            check_same_shape(p.value, e.values, ("restore " + e.name).c_str());
            p.value = e.values;
        }
    }
}

uint64_t ModelState::content_hash(bool include_head) const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const void* data, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& p : params) {
        if (!include_head && is_head_param(p.name)) continue;
        feed(p.name.data(), p.name.size());
        feed(p.value.ptr(), p.value.numel() * sizeof(float));
    }
    for (const auto& [name, t] : buffers) {
        feed(name.data(), name.size());
        feed(t.ptr(), t.numel() * sizeof(float));
    }
    return h;
}

size_t ModelState::prunable_weight_count() const {
    size_t n = 0;
    for (const auto& p : params)
        if (p.prunable) n += p.value.numel();
    return n;
}

namespace {

void add_linear(ModelState& m, const InitSpec& init, const std::string& prefix, size_t in,
                size_t out) {
    m.params.emplace_back(prefix + ".weight",
                          xavier_uniform<float>(param_seed(init, prefix + ".weight"), {in, out}),
                          true);
    m.params.emplace_back(prefix + ".bias", Tensor::zeros({out}), false);
}

void add_conv(ModelState& m, const InitSpec& init, const std::string& prefix, size_t co, size_t ci,
              size_t k) {
    m.params.emplace_back(prefix + ".weight",
                          xavier_uniform<float>(param_seed(init, prefix + ".weight"), {co, ci, k, k}),
                          true);
}

void add_bn(ModelState& m, const std::string& prefix, size_t c) {
    m.params.emplace_back(prefix + ".gamma", Tensor::full({c}, 1.f), false);
    m.params.emplace_back(prefix + ".beta", Tensor::zeros({c}), false);
    m.buffers.emplace(prefix + ".running_mean", Tensor::zeros({c}));
    m.buffers.emplace(prefix + ".running_var", Tensor::full({c}, 1.f));
}

struct GraphBuilder {
    ModelState& m;
    bool training;

    Var leaf(const std::string& name) { return make_param_leaf(m.param(name)); }

    Var linear(const Var& x, const std::string& prefix) {
        return add(matmul(x, leaf(prefix + ".weight")), leaf(prefix + ".bias"));
    }

    Var conv(const Var& x, const std::string& prefix, size_t stride, size_t pad) {
        return conv2d(x, leaf(prefix + ".weight"), stride, pad);
    }

    Var bn(const Var& x, const std::string& prefix) {
        return batch_norm(x, leaf(prefix + ".gamma"), leaf(prefix + ".beta"),
                          &m.buffers.at(prefix + ".running_mean"),
                          &m.buffers.at(prefix + ".running_var"), training, kBnDecay);
    }
};

}  // namespace

ModelState build_model(const ModelSpec& spec, const InitSpec& init) {
    validate_spec(spec);
    ModelState m;
    m.spec = spec;
    if (spec.kind == ModelKind::Mlp) {
        size_t in = shape_numel(spec.input_shape);
        size_t layer = 0;
        for (size_t width : spec.hidden) {
            add_linear(m, init, "fc" + std::to_string(++layer), in, width);
            in = width;
        }
        add_linear(m, init, m.head_name, in, spec.num_classes);
    } else {
        size_t ci = spec.input_shape[0];
        add_conv(m, init, "stem.conv", spec.plan[0].channels, ci, 3);
        add_bn(m, "stem.bn", spec.plan[0].channels);
        ci = spec.plan[0].channels;
        for (size_t s = 0; s < spec.plan.size(); ++s) {
            const auto& st = spec.plan[s];
            for (size_t b = 0; b < st.repeats; ++b) {
                const std::string pre = "s" + std::to_string(s + 1) + ".b" + std::to_string(b);
                const size_t stride = (b == 0) ? st.stride : 1;
                add_conv(m, init, pre + ".conv1", st.channels, ci, 3);
                add_bn(m, pre + ".bn1", st.channels);
                add_conv(m, init, pre + ".conv2", st.channels, st.channels, 3);
                add_bn(m, pre + ".bn2", st.channels);
                if (stride != 1 || ci != st.channels) {
                    add_conv(m, init, pre + ".sc.conv", st.channels, ci, 1);
                    add_bn(m, pre + ".sc.bn", st.channels);
                }
                ci = st.channels;
            }
        }
        add_linear(m, init, m.head_name, ci, spec.num_classes);
    }
    return m;
}

Var ModelState::forward(const Tensor& batch, bool training) {
    GraphBuilder g{*this, training};
    Var x = make_leaf(batch, false);
    if (spec.kind == ModelKind::Mlp) {
        x = flatten(x);
        const size_t expect = shape_numel(spec.input_shape);
        if (x->value.dim(1) != expect)
            throw ShapeError("mlp forward: batch " + shape_str(batch.shape) +
                             " does not flatten to input width " + std::to_string(expect));
        for (size_t i = 1; i <= spec.hidden.size(); ++i)
            x = relu(g.linear(x, "fc" + std::to_string(i)));
        return g.linear(x, head_name);
    }
    if (batch.ndim() != 4 || batch.dim(1) != spec.input_shape[0] ||
        batch.dim(2) != spec.input_shape[1] || batch.dim(3) != spec.input_shape[2])
        throw ShapeError("residual forward: batch " + shape_str(batch.shape) +
                         " does not match input shape " + shape_str(spec.input_shape));
    x = relu(g.bn(g.conv(x, "stem.conv", 1, 1), "stem.bn"));
    size_t ci = spec.plan[0].channels;
    for (size_t s = 0; s < spec.plan.size(); ++s) {
        const auto& st = spec.plan[s];
        for (size_t b = 0; b < st.repeats; ++b) {
            const std::string pre = "s" + std::to_string(s + 1) + ".b" + std::to_string(b);
            const size_t stride = (b == 0) ? st.stride : 1;
            Var y = relu(g.bn(g.conv(x, pre + ".conv1", stride, 1), pre + ".bn1"));
            y = g.bn(g.conv(y, pre + ".conv2", 1, 1), pre + ".bn2");
            Var shortcut = (stride != 1 || ci != st.channels)
                               ? g.bn(g.conv(x, pre + ".sc.conv", stride, 0), pre + ".sc.bn")
                               : x;
            x = relu(add(y, shortcut));
            ci = st.channels;
        }
    }
    x = flatten(global_avg_pool(x));
    return g.linear(x, head_name);
}

ModelState replace_head(const ModelState& model, size_t num_classes, const InitSpec& init) {
    if (num_classes < 2) throw Error("replace_head: num_classes must be >= 2");
    ModelState out = model;
    out.spec.num_classes = num_classes;
    const std::string wname = out.head_name + ".weight";
    const std::string bname = out.head_name + ".bias";
    const size_t in_width = model.find(wname)->value.dim(0);
    for (auto& p : out.params) {
        if (p.name == wname) {
            p.value = xavier_uniform<float>(head_replace_seed(init, wname), {in_width, num_classes});
            p.grad = Tensor::zeros(p.value.shape);
        } else if (p.name == bname) {
            p.value = Tensor::zeros({num_classes});
            p.grad = Tensor::zeros(p.value.shape);
        }
    }
    return out;
}

}  // namespace ticketlab
