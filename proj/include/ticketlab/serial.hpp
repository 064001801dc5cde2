#pragma once

// Little-endian binary readers/writers for the container formats, plus the
// CRC-32 used as the trailing whole-file checksum.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ticketlab/common.hpp"

namespace ticketlab {

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed = 0);

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void bytes(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    // Length-prefixed string.
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void f32_array(const float* p, size_t n);

    const std::vector<uint8_t>& data() const { return buf_; }

private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t n) : data_(data), size_(n) {}

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    void f32_array(float* out, size_t n);
    void raw(void* out, size_t n) {
        need(n);
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return size_ - pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > size_)
            throw DataError(DataError::Kind::Truncated,
                            "truncated container: needed " + std::to_string(n) + " bytes at offset " +
                                std::to_string(pos_) + ", file has " + std::to_string(size_));
    }
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

// Whole-file helpers. write_file_checksummed appends crc32 of the payload;
// read_file_checksummed verifies it and returns the payload bytes.
void write_file_atomic(const std::string& path, const std::vector<uint8_t>& payload_with_crc);
std::vector<uint8_t> read_file(const std::string& path);
void append_crc(std::vector<uint8_t>& payload);
// Verifies and strips the trailing crc32.
size_t check_crc(const std::vector<uint8_t>& file_bytes);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace ticketlab
