#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hybrid {

/// Raised when a persisted file has a bad magic, an unsupported version or
/// ends before its declared payload.
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Little-endian writer. All on-disk formats go through this so the layout
/// does not depend on the host byte order.
class BinaryWriter {
   public:
    explicit BinaryWriter(std::ostream &out) : out_(out) {}

    void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void check() const
    {
        if (!out_) {
            throw std::runtime_error("write failed");
        }
    }

   private:
    template <typename U>
    void put_le(U v)
    {
        std::array<char, sizeof(U)> buf{};
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            buf[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
        }
        out_.write(buf.data(), buf.size());
    }

    std::ostream &out_;
};

class BinaryReader {
   public:
    explicit BinaryReader(std::istream &in) : in_(in) {}

    /// Consumes `tag.size()` bytes and throws FormatError unless they match.
    void expect_magic(std::string_view tag, std::string_view what)
    {
        std::string got(tag.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (!in_ || got != tag) {
            throw FormatError(std::string(what) + ": bad magic (expected '" + std::string(tag) + "')");
        }
    }

    void expect_version(std::uint32_t supported, std::string_view what)
    {
        auto v = u32();
        if (v != supported) {
            throw FormatError(std::string(what) + ": unsupported version " + std::to_string(v) +
                              " (this build reads version " + std::to_string(supported) + ")");
        }
    }

    std::uint8_t u8() { return get_le<std::uint8_t>(); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
    float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    std::string str()
    {
        auto n = u32();
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (!in_) {
            throw FormatError("truncated file: string payload cut short");
        }
        return s;
    }

    /// Guards count fields read from disk before they size an allocation.
    std::uint64_t count(std::uint64_t limit, std::string_view what)
    {
        auto n = u64();
        if (n > limit) {
            throw FormatError(std::string("implausible ") + std::string(what) + " count " + std::to_string(n));
        }
        return n;
    }

   private:
    template <typename U>
    U get_le()
    {
        std::array<unsigned char, sizeof(U)> buf{};
        in_.read(reinterpret_cast<char *>(buf.data()), buf.size());
        if (!in_) {
            throw FormatError("truncated file");
        }
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
        }
        return v;
    }

    std::istream &in_;
};

}  // namespace hybrid
