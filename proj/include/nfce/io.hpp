#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nfce/errors.hpp"

namespace nfce {

// Little-endian binary writer with explicit byte packing, so files are
// identical across hosts regardless of native endianness.
class BinWriter {
public:
    explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void u8(std::uint8_t v) { put(&v, 1); }

    void u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        put(b, 4);
    }

    void u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        put(b, 8);
    }

    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void bytes(const void* data, std::size_t n) { put(data, n); }

    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        put(s.data(), s.size());
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed: " + path_);
    }

private:
    void put(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out_) throw IoError("write failed: " + path_);
    }

    std::string path_;
    std::ofstream out_;
};

// Reader that reports the byte offset of any truncation or mismatch.
class BinReader {
public:
    explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open for reading: " + path);
    }

    std::uint64_t offset() const { return offset_; }

    std::uint8_t u8() {
        std::uint8_t v;
        get(&v, 1);
        return v;
    }

    std::uint32_t u32() {
        std::uint8_t b[4];
        get(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        std::uint8_t b[8];
        get(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void bytes(void* data, std::size_t n) { get(data, n); }

    std::string text(std::size_t max_len = 1 << 20) {
        const std::uint32_t n = u32();
        if (n > max_len)
            throw IoError(path_ + ": unreasonable string length " + std::to_string(n) +
                          " at byte " + std::to_string(offset_ - 4));
        std::string s(n, '\0');
        get(s.data(), n);
        return s;
    }

    void expect_magic(const char* magic, std::size_t len, const std::string& what) {
        std::vector<char> buf(len);
        get(buf.data(), len);
        if (std::memcmp(buf.data(), magic, len) != 0)
            throw IoError(path_ + ": not a " + what + " file (bad magic)");
    }

    void expect_eof(const std::string& what) {
        char c;
        in_.read(&c, 1);
        if (!in_.eof())
            throw IoError(path_ + ": trailing bytes after " + what + " payload at byte " +
                          std::to_string(offset_));
    }

private:
    void get(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw IoError(path_ + ": truncated at byte " +
                          std::to_string(offset_ + static_cast<std::uint64_t>(in_.gcount())));
        offset_ += n;
    }

    std::string path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

inline void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace nfce
