#include "ticketlab/serial.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace ticketlab {

const char* to_string(DataError::Kind k) {
    switch (k) {
        case DataError::Kind::BadMagic: return "bad magic";
        case DataError::Kind::BadVersion: return "bad version";
        case DataError::Kind::Truncated: return "truncated container";
        case DataError::Kind::ChecksumMismatch: return "checksum mismatch";
        case DataError::Kind::ShapeMismatch: return "shape mismatch";
        case DataError::Kind::LabelOutOfRange: return "label out of range";
        case DataError::Kind::SplitOverlap: return "split overlap";
        case DataError::Kind::EmptySplit: return "empty split";
        case DataError::Kind::MissingEntry: return "missing entry";
        case DataError::Kind::Malformed: return "malformed";
    }
    return "unknown";
}

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void ByteWriter::f32_array(const float* p, size_t n) {
    // Little-endian host: bulk copy. (All supported targets are LE.)
    static_assert(sizeof(float) == 4);
    bytes(p, n * 4);
}

void ByteReader::f32_array(float* out, size_t n) { raw(out, n * 4); }

void append_crc(std::vector<uint8_t>& payload) {
    const uint32_t c = crc32(payload.data(), payload.size());
    for (int i = 0; i < 4; ++i) payload.push_back(static_cast<uint8_t>(c >> (8 * i)));
}

size_t check_crc(const std::vector<uint8_t>& file_bytes) {
    if (file_bytes.size() < 4)
        throw DataError(DataError::Kind::Truncated, "truncated container: shorter than its checksum");
    const size_t n = file_bytes.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(file_bytes[n + i]) << (8 * i);
    const uint32_t actual = crc32(file_bytes.data(), n);
    if (stored != actual)
        throw DataError(DataError::Kind::ChecksumMismatch,
                        "checksum mismatch: file says " + std::to_string(stored) + ", computed " +
                            std::to_string(actual));
    return n;
}

void write_file_atomic(const std::string& path, const std::vector<uint8_t>& payload) {
    namespace fs = std::filesystem;
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError(DataError::Kind::Malformed, "cannot open for writing: " + tmp);
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
        if (!f) throw DataError(DataError::Kind::Malformed, "short write: " + tmp);
    }
    fs::rename(tmp, path);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError(DataError::Kind::Malformed, "cannot open: " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> buf(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()), n);
    if (!f) throw DataError(DataError::Kind::Truncated, "short read: " + path);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::vector<uint8_t> b(text.begin(), text.end());
    write_file_atomic(path, b);
}

std::string read_text_file(const std::string& path) {
    auto b = read_file(path);
    return std::string(b.begin(), b.end());
}

}  // namespace ticketlab
