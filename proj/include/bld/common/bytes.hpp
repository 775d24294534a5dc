// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "bld/common/errors.hpp"

namespace bld {

namespace detail {

template <typename T>
T to_little_endian(T value) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        return value;
    } else {
        auto raw = std::bit_cast<std::array<std::byte, sizeof(T)>>(value);
        std::reverse(raw.begin(), raw.end());
        return std::bit_cast<T>(raw);
    }
}

}  // namespace detail

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const T le = detail::to_little_endian(value);
        const auto* p = reinterpret_cast<const std::byte*>(&le);
        buffer_.insert(buffer_.end(), p, p + sizeof(T));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_all(std::span<const T> values) {
        if constexpr (std::endian::native == std::endian::little) {
            const auto* p = reinterpret_cast<const std::byte*>(values.data());
            buffer_.insert(buffer_.end(), p, p + values.size_bytes());
        } else {
            for (T v : values) put(v);
        }
    }

    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        const auto* p = reinterpret_cast<const std::byte*>(s.data());
        buffer_.insert(buffer_.end(), p, p + s.size());
    }

    std::vector<std::byte>& buffer() noexcept { return buffer_; }
    std::vector<std::byte> take() noexcept { return std::move(buffer_); }

private:
    std::vector<std::byte> buffer_;
};

/// Reads little-endian scalars; throws FormatError when the input runs out.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return detail::to_little_endian(value);
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void get_all(std::span<T> out) {
        for (T& v : out) v = get<T>();
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool at_end() const noexcept { return pos_ == bytes_.size(); }
    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("byte stream truncated");
    }

    std::span<const std::byte> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace bld
