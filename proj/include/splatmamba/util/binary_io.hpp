// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sm::util {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Malformed or truncated input; the message names the source and byte offset.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Append-only little-endian byte buffer.
class ByteWriter {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void magic(const char* tag, std::size_t n) { bytes(tag, n); }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f32(float v) { bytes(&v, sizeof v); }
    void f64(double v) { bytes(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    template <typename T>
    void array(std::span<const T> v) {
        bytes(v.data(), v.size_bytes());
    }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open " + path.string() + " for writing");
        }
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) {
            throw std::runtime_error("write failed: " + path.string());
        }
    }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; errors carry the file name and byte offset.
class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    static ByteReader load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw std::runtime_error("cannot open " + path.string());
        }
        std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(data), path.string());
    }

    void bytes(void* out, std::size_t n) {
        if (pos_ + n > data_.size()) {
            fail("unexpected end of data (need " + std::to_string(n) + " bytes)");
        }
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    void expect_magic(const char* tag, std::size_t n) {
        const std::size_t at = pos_;
        std::string got(n, '\0');
        bytes(got.data(), n);
        if (got != std::string(tag, n)) {
            pos_ = at;
            fail("bad magic");
        }
    }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    float f32() { return scalar<float>(); }
    double f64() { return scalar<double>(); }
    std::string str() {
        const auto n = u64();
        if (n > remaining()) {
            fail("string length " + std::to_string(n) + " exceeds data");
        }
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    template <typename T>
    std::vector<T> array(std::size_t count) {
        if (count > remaining() / sizeof(T)) {
            fail("array of " + std::to_string(count) + " elements exceeds data");
        }
        std::vector<T> v(count);
        bytes(v.data(), count * sizeof(T));
        return v;
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(origin_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }

private:
    template <typename T>
    T scalar() {
        T v;
        bytes(&v, sizeof v);
        return v;
    }

    std::vector<std::uint8_t> data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace sm::util
