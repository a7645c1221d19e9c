#pragma once
// File and byte-buffer helpers. All output files go through write_file_atomic
// (write to temp, rename) so a failed command never leaves a partial artifact.
// Binary numbers are little-endian; doubles are written bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "knnkge/error.hpp"

namespace knnkge {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) fail(ErrorKind::Io, "cannot open file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorKind::Io, "read failed: " + path);
    return data;
}

inline void write_file_atomic(const std::string& path, std::string_view bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out.is_open()) fail(ErrorKind::Io, "cannot write file: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out.good()) fail(ErrorKind::Io, "write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) fail(ErrorKind::Io, "cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

// ---- little-endian encoding into a growing byte string ----

inline void put_u32_le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
    put_u64_le(out, std::bit_cast<uint64_t>(v));
}

// ---- bounds-checked little-endian decoding ----

class ByteReader {
public:
    ByteReader(std::string_view data, std::string what)
        : data_(data), what_(std::move(what)) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    unsigned char byte() {
        need(1);
        return static_cast<unsigned char>(data_[pos_++]);
    }

    bool at_end() const { return pos_ == data_.size(); }
    size_t remaining() const { return data_.size() - pos_; }

private:
    void need(size_t n) {
        if (pos_ + n > data_.size())
            fail(ErrorKind::Format, what_ + ": truncated file");
    }

    std::string_view data_;
    size_t pos_ = 0;
    std::string what_;
};

// Splits on '\n'; a single trailing '\r' per line is stripped. The final
// empty segment after a trailing newline is dropped.
inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            if (start < text.size()) lines.emplace_back(text.substr(start));
            break;
        }
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.emplace_back(line);
        start = end + 1;
    }
    return lines;
}

inline std::vector<std::string> split_on(std::string_view text, char sep) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t end = text.find(sep, start);
        if (end == std::string_view::npos) {
            fields.emplace_back(text.substr(start));
            return fields;
        }
        fields.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
}

}  // namespace knnkge
