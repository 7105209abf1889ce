#ifndef NFLOW_BINARY_IO_HPP
#define NFLOW_BINARY_IO_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nflow {

/// Raised on malformed input files. `where` is a line number for text formats
/// and a byte offset for binary ones.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string &what, std::uint64_t where)
        : std::runtime_error(what), where_(where) {}

    [[nodiscard]] std::uint64_t where() const noexcept { return where_; }

  private:
    std::uint64_t where_;
};

namespace le {

template <typename U> void put_uint(std::ostream &os, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
    }
    os.write(bytes.data(), bytes.size());
}

inline void put_u8(std::ostream &os, std::uint8_t v) { put_uint(os, v); }
inline void put_u32(std::ostream &os, std::uint32_t v) { put_uint(os, v); }
inline void put_u64(std::ostream &os, std::uint64_t v) { put_uint(os, v); }
inline void put_i8(std::ostream &os, std::int8_t v) {
    put_uint(os, std::bit_cast<std::uint8_t>(v));
}
inline void put_i32(std::ostream &os, std::int32_t v) {
    put_uint(os, std::bit_cast<std::uint32_t>(v));
}
inline void put_f32(std::ostream &os, float v) {
    put_uint(os, std::bit_cast<std::uint32_t>(v));
}
inline void put_f64(std::ostream &os, double v) {
    put_uint(os, std::bit_cast<std::uint64_t>(v));
}
inline void put_magic(std::ostream &os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

/// Sequential little-endian reader that tracks its byte offset for error
/// reporting.
class Reader {
  public:
    explicit Reader(std::istream &is) : is_(is) {}

    [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }

    /// True when the underlying stream has no further bytes.
    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

    template <typename U> U get_uint(const char *field) {
        std::array<unsigned char, sizeof(U)> bytes{};
        is_.read(reinterpret_cast<char *>(bytes.data()), bytes.size());
        if (is_.gcount() != static_cast<std::streamsize>(bytes.size())) {
            throw ParseError(std::string("truncated input while reading ") +
                                 field + " at byte " +
                                 std::to_string(offset_),
                             offset_);
        }
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            value |= static_cast<U>(bytes[i]) << (8 * i);
        }
        offset_ += sizeof(U);
        return value;
    }

    std::uint8_t u8(const char *f) { return get_uint<std::uint8_t>(f); }
    std::uint32_t u32(const char *f) { return get_uint<std::uint32_t>(f); }
    std::uint64_t u64(const char *f) { return get_uint<std::uint64_t>(f); }
    std::int8_t i8(const char *f) {
        return std::bit_cast<std::int8_t>(get_uint<std::uint8_t>(f));
    }
    std::int32_t i32(const char *f) {
        return std::bit_cast<std::int32_t>(get_uint<std::uint32_t>(f));
    }
    float f32(const char *f) {
        return std::bit_cast<float>(get_uint<std::uint32_t>(f));
    }
    double f64(const char *f) {
        return std::bit_cast<double>(get_uint<std::uint64_t>(f));
    }

    void expect_magic(std::string_view magic) {
        std::string got(magic.size(), '\0');
        is_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (is_.gcount() != static_cast<std::streamsize>(magic.size()) ||
            got != magic) {
            throw ParseError("bad magic at byte " + std::to_string(offset_) +
                                 ": expected '" + std::string(magic) + "'",
                             offset_);
        }
        offset_ += magic.size();
    }

  private:
    std::istream &is_;
    std::uint64_t offset_ = 0;
};

} // namespace le
} // namespace nflow

#endif // NFLOW_BINARY_IO_HPP
