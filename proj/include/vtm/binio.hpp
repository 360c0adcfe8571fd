#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

// Little-endian scalar I/O, independent of host byte order.
namespace vtm::binio {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32(std::istream& is, uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
        (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    return true;
}

inline void write_u64(std::ostream& os, uint64_t v) {
    write_u32(os, static_cast<uint32_t>(v & 0xffffffffULL));
    write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline bool read_u64(std::istream& is, uint64_t& v) {
    uint32_t lo, hi;
    if (!read_u32(is, lo) || !read_u32(is, hi)) return false;
    v = static_cast<uint64_t>(lo) | (static_cast<uint64_t>(hi) << 32);
    return true;
}

inline void write_f32(std::ostream& os, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    write_u32(os, v);
}

inline bool read_f32(std::istream& is, float& f) {
    uint32_t v;
    if (!read_u32(is, v)) return false;
    std::memcpy(&f, &v, 4);
    return true;
}

}  // namespace vtm::binio
