#pragma once
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mpdrive/errors.hpp"

namespace mpdrive {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const std::vector<unsigned char>& data) {
    return crc32(data.data(), data.size());
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CorruptionError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    std::streamoff n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(buf.data()), n);
    if (!f) throw CorruptionError("short read: " + path);
    return buf;
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CorruptionError("cannot open file for write: " + path);
    if (!bytes.empty()) f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CorruptionError("short write: " + path);
}

// Little-endian scalar append/read. The build targets little-endian hosts;
// the byte order is still spelled out so files are portable.
inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::vector<unsigned char>& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

struct ByteReader {
    const std::vector<unsigned char>* buf;
    std::size_t pos = 0;
    std::string name;

    ByteReader(const std::vector<unsigned char>& b, std::string n) : buf(&b), name(std::move(n)) {}

    void need(std::size_t n) const {
        if (pos + n > buf->size()) throw CorruptionError("truncated file: " + name);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>((*buf)[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>((*buf)[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    void raw(char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf->data() + pos, n);
        pos += n;
    }
    bool at_end() const { return pos == buf->size(); }
};

} // namespace mpdrive
