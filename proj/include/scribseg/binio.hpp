#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "scribseg/error.hpp"

// Little-endian byte buffers for the binary model and optimizer files.
namespace scribseg::binio {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw DataError("write failed for " + path.string());
    }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<std::uint8_t> data, std::string what) : buf_(std::move(data)), what_(std::move(what)) {}

    static Reader open(const std::filesystem::path& path, std::string what) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open " + path.string());
        std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(data), std::move(what));
    }

    std::size_t size() const { return buf_.size(); }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    /// Throws a size diagnostic unless n more bytes are available.
    void need(std::size_t n) const {
        if (remaining() < n)
            throw DataError(what_ + " is truncated: " + std::to_string(buf_.size()) + " bytes, needed at least " +
                            std::to_string(pos_ + n));
    }
    bool magic(const char* m) {
        need(4);
        const bool ok = std::memcmp(buf_.data() + pos_, m, 4) == 0;
        pos_ += 4;
        return ok;
    }
    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

private:
    std::vector<std::uint8_t> buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace scribseg::binio
