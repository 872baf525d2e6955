#pragma once

// Little-endian container helpers shared by the dataset, standardizer, model
// and prediction files: 4-byte magic, u32 version, fixed-width payload, and a
// trailing u64-length-prefixed UTF-8 JSON blob.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "bubbletomo/errors.hpp"

namespace bubbletomo::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw ConfigError("cannot open '" + path + "' for writing");
    }

    void magic(std::string_view m) { raw(m.data(), 4); }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void scalar(T v) {
        raw(&v, sizeof(T));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void array(std::span<const T> v) {
        raw(v.data(), v.size_bytes());
    }

    void json(const nlohmann::json& j) {
        const std::string s = j.dump();
        scalar<std::uint64_t>(s.size());
        raw(s.data(), s.size());
    }

    void close() {
        out_.flush();
        if (!out_) throw ConfigError("write to '" + path_ + "' failed");
        out_.close();
    }

private:
    void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw ConfigError("cannot open '" + path + "' for reading");
    }

    void expect_magic(std::string_view m) {
        std::array<char, 4> got{};
        raw(got.data(), 4);
        if (std::string_view(got.data(), 4) != m) {
            throw ConfigError("'" + path_ + "' is not a " + std::string(m) + " file");
        }
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    T scalar() {
        T v{};
        raw(&v, sizeof(T));
        return v;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    std::vector<T> array(std::size_t n) {
        std::vector<T> v(n);
        raw(v.data(), n * sizeof(T));
        return v;
    }

    nlohmann::json json() {
        const auto n = scalar<std::uint64_t>();
        std::string s(n, '\0');
        raw(s.data(), n);
        try {
            return nlohmann::json::parse(s);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("'" + path_ + "': malformed metadata: " + e.what());
        }
    }

    void expect_version(std::uint32_t expected) {
        const auto v = scalar<std::uint32_t>();
        if (v != expected) {
            throw ConfigError("'" + path_ + "': unsupported format version " + std::to_string(v));
        }
    }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw ConfigError("'" + path_ + "' is truncated");
    }

    std::string path_;
    std::ifstream in_;
};

}  // namespace bubbletomo::io
