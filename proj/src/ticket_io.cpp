// Ticket container: a self-describing single file that round-trips a bundle
// bit-exactly. Layout: magic, version, key-value metadata, parameter tensor
// records, packed mask bitsets, trailing CRC-32 (algorithm named in the
// metadata so other tools can verify).

#include <map>

#include "ticketlab/serial.hpp"
#include "ticketlab/ticket.hpp"

namespace ticketlab {

namespace {

constexpr char kMagic[8] = {'T', 'K', 'T', 'B', 'N', 'D', 'L', '\n'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

void write_bits(ByteWriter& w, const std::vector<uint8_t>& bits) {
    w.u64(bits.size());
    uint8_t acc = 0;
    for (size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) acc |= static_cast<uint8_t>(1u << (i % 8));
        if (i % 8 == 7) {
            w.u8(acc);
            acc = 0;
        }
    }
    if (bits.size() % 8 != 0) w.u8(acc);
}

std::vector<uint8_t> read_bits(ByteReader& r) {
    const uint64_t n = r.u64();
    std::vector<uint8_t> bits(n);
    uint8_t acc = 0;
    for (uint64_t i = 0; i < n; ++i) {
        if (i % 8 == 0) acc = r.u8();
        bits[i] = (acc >> (i % 8)) & 1u;
    }
    return bits;
}

}  // namespace

void save_ticket(const TicketBundle& bundle, const std::string& path) {
    ByteWriter w;
    w.bytes(kMagic, 8);
    w.u32(kVersion);

    std::map<std::string, std::string> meta;
    meta["variant"] = to_string(bundle.variant);
    meta["k"] = std::to_string(bundle.k);
    meta["round"] = std::to_string(bundle.round);
    meta["source_dataset"] = bundle.source_dataset;
    meta["model_spec"] = spec_to_string(bundle.model_spec);
    meta["init_seed"] = std::to_string(bundle.init_seed);
    meta["created_by"] = bundle.created_by.empty()
                             ? std::string(kToolName) + " " + kToolVersion
                             : bundle.created_by;
    meta["checksum"] = "crc32";
    w.u32(static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        w.str(k);
        w.str(v);
    }

    w.u32(static_cast<uint32_t>(bundle.theta.size()));
    for (const auto& e : bundle.theta) {
        w.str(e.name);
        uint8_t flags = 0;
        if (e.prunable) flags |= 1;
        if (e.is_buffer) flags |= 2;
        w.u8(flags);
        w.u8(kDtypeF32);
        w.u32(static_cast<uint32_t>(e.values.ndim()));
        for (size_t d : e.values.shape) w.u64(d);
        w.f32_array(e.values.ptr(), e.values.numel());
    }

    w.u32(static_cast<uint32_t>(bundle.mask.entries.size()));
    w.u64(bundle.mask.round);
    for (const auto& [name, bits] : bundle.mask.entries) {
        w.str(name);
        write_bits(w, bits);
    }

    std::vector<uint8_t> payload = w.data();
    append_crc(payload);
    write_file_atomic(path, payload);
}

TicketBundle load_ticket(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    const size_t payload_len = check_crc(bytes);
    ByteReader r(bytes.data(), payload_len);

    char magic[8];
    r.raw(magic, 8);
    if (!std::equal(magic, magic + 8, kMagic))
        throw DataError(DataError::Kind::BadMagic, "bad magic: not a ticket container: " + path);
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
    for (const char* key : {"variant", "k", "round", "model_spec", "init_seed"})
        if (!meta.count(key))
            throw DataError(DataError::Kind::MissingEntry, std::string("missing metadata: ") + key);

    TicketBundle b;
    b.variant = ticket_variant_from_string(meta["variant"]);
    b.k = std::stoull(meta["k"]);
    b.round = std::stoull(meta["round"]);
    b.source_dataset = meta.count("source_dataset") ? meta["source_dataset"] : "";
    b.model_spec = spec_from_string(meta["model_spec"]);
    b.init_seed = std::stoull(meta["init_seed"]);
    b.created_by = meta.count("created_by") ? meta["created_by"] : "";

    const uint32_t n_params = r.u32();
    b.theta.reserve(n_params);
    for (uint32_t i = 0; i < n_params; ++i) {
        SnapEntry e;
        e.name = r.str();
        const uint8_t flags = r.u8();
        e.prunable = flags & 1;
        e.is_buffer = flags & 2;
        const uint8_t dtype = r.u8();
        if (dtype != kDtypeF32)
            throw DataError(DataError::Kind::Malformed,
                            "unsupported dtype " + std::to_string(dtype) + " for " + e.name);
        const uint32_t ndim = r.u32();
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = r.u64();
        e.values = Tensor(shape);
        r.f32_array(e.values.ptr(), e.values.numel());
        b.theta.push_back(std::move(e));
    }

    const uint32_t n_masks = r.u32();
    b.mask.round = r.u64();
    for (uint32_t i = 0; i < n_masks; ++i) {
        std::string name = r.str();
        b.mask.entries[name] = read_bits(r);
    }

    // Structural consistency: every mask entry matches a stored tensor and
    // theta is pre-masked.
    for (const auto& [name, bits] : b.mask.entries) {
        const SnapEntry* found = nullptr;
        for (const auto& e : b.theta)
            if (e.name == name) {
                found = &e;
                break;
            }
        if (!found)
            throw DataError(DataError::Kind::MissingEntry, "mask entry without tensor: " + name);
        if (found->values.numel() != bits.size())
            throw DataError(DataError::Kind::ShapeMismatch,
                            "shape mismatch: mask " + name + " has " + std::to_string(bits.size()) +
                                " bits for tensor " + shape_str(found->values.shape));
        for (size_t j = 0; j < bits.size(); ++j)
            if (!bits[j] && found->values.data[j] != 0.f)
                throw DataError(DataError::Kind::Malformed,
                                "ticket is not pre-masked at " + name);
    }
    return b;
}

}  // namespace ticketlab
