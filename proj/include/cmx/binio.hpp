#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cmx/errors.hpp"

namespace cmx {

// Little-endian byte writer used by the dataset and checkpoint containers.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put_le(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put_le(bits);
    }
    void raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    void str(const std::string& s) {
        if (s.size() > 0xffff) throw FormatError("string too long for u16 length prefix", bytes_.size());
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s.data(), s.size());
    }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::size_t size() const { return bytes_.size(); }

  private:
    template <typename T>
    void put_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }

    std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian reader; throws FormatError carrying the byte
// offset where data ran out or looked wrong.
class ByteReader {
  public:
    explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

    std::uint8_t u8() { return take_le<std::uint8_t>(); }
    std::uint16_t u16() { return take_le<std::uint16_t>(); }
    std::uint32_t u32() { return take_le<std::uint32_t>(); }
    std::uint64_t u64() { return take_le<std::uint64_t>(); }
    float f32() {
        const std::uint32_t bits = take_le<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    double f64() {
        const std::uint64_t bits = take_le<std::uint64_t>();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str() {
        const std::size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::uint64_t offset() const { return pos_; }
    bool exhausted() const { return pos_ == bytes_.size(); }
    void expect_exhausted() const {
        if (!exhausted()) throw FormatError("trailing bytes after payload", pos_);
    }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("truncated file", pos_);
    }
    template <typename T>
    T take_le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cmx
