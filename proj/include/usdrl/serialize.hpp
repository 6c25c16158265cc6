#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "usdrl/params.hpp"
#include "usdrl/tensor.hpp"

namespace usdrl::io {

using json = nlohmann::json;

// Container layout: 8-byte little-endian header length, JSON header
// {format_version, config, arrays: {name: {shape, dtype, offset}}}, then raw
// little-endian IEEE-754 array data, row-major. Offsets are relative to the
// end of the header.

constexpr int kFormatVersion = 1;

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("container: truncated header length");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

template <class T, class Bits>
void write_scalars(std::ostream& os, const std::vector<T>& vals) {
    for (T t : vals) {
        const auto bits = std::bit_cast<Bits>(t);
        unsigned char b[sizeof(Bits)];
        for (std::size_t i = 0; i < sizeof(Bits); ++i)
            b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), sizeof(Bits));
    }
}

template <class T, class Bits>
std::vector<T> read_scalars(std::istream& is, std::size_t count) {
    std::vector<T> out(count);
    for (std::size_t j = 0; j < count; ++j) {
        unsigned char b[sizeof(Bits)];
        is.read(reinterpret_cast<char*>(b), sizeof(Bits));
        if (!is) throw std::runtime_error("container: truncated array data");
        Bits bits = 0;
        for (std::size_t i = 0; i < sizeof(Bits); ++i)
            bits |= static_cast<Bits>(b[i]) << (8 * i);
        out[j] = std::bit_cast<T>(bits);
    }
    return out;
}

template <class Real>
constexpr const char* dtype_name() {
    if constexpr (sizeof(Real) == 4)
        return "f32";
    else
        return "f64";
}

}  // namespace detail

/// Named arrays in insertion order; the in-memory image of a container file.
template <class Real>
struct Container {
    json config;
    std::vector<std::pair<std::string, Mat<Real>>> arrays;

    const Mat<Real>* find(const std::string& name) const {
        for (const auto& [n, m] : arrays)
            if (n == name) return &m;
        return nullptr;
    }
};

template <class Real>
void write_container(const std::string& path, const Container<Real>& c) {
    json header;
    header["format_version"] = kFormatVersion;
    header["config"] = c.config;
    json dir = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, m] : c.arrays) {
        dir[name] = {{"shape", {m.rows(), m.cols()}},
                     {"dtype", detail::dtype_name<Real>()},
                     {"offset", offset}};
        offset += m.size() * sizeof(Real);
    }
    header["arrays"] = std::move(dir);
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write container '" + path + "'");
    detail::put_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, m] : c.arrays) {
        if constexpr (sizeof(Real) == 4)
            detail::write_scalars<Real, std::uint32_t>(os, m.vec());
        else
            detail::write_scalars<Real, std::uint64_t>(os, m.vec());
    }
    if (!os) throw std::runtime_error("write failed for container '" + path + "'");
}

template <class Real>
Container<Real> read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open container '" + path + "'");
    const std::uint64_t hlen = detail::get_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("container: truncated header");
    json header = json::parse(hs);
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw std::runtime_error("container: unsupported format version");

    Container<Real> c;
    c.config = header.at("config");
    // read in offset order so a single forward pass suffices
    std::vector<std::pair<std::uint64_t, std::string>> order;
    for (auto& [name, meta] : header.at("arrays").items())
        order.emplace_back(meta.at("offset").template get<std::uint64_t>(), name);
    std::sort(order.begin(), order.end());
    const std::streampos data_start = is.tellg();
    for (auto& [offset, name] : order) {
        const auto& meta = header.at("arrays").at(name);
        const auto shape = meta.at("shape").template get<std::vector<std::size_t>>();
        const std::string dtype = meta.at("dtype").template get<std::string>();
        const std::size_t count = shape.at(0) * shape.at(1);
        is.seekg(data_start + static_cast<std::streamoff>(offset));
        Mat<Real> m;
        if (dtype == "f32") {
            auto raw = detail::read_scalars<float, std::uint32_t>(is, count);
            std::vector<Real> vals(raw.begin(), raw.end());
            m = Mat<Real>::from(shape[0], shape[1], std::move(vals));
        } else if (dtype == "f64") {
            auto raw = detail::read_scalars<double, std::uint64_t>(is, count);
            std::vector<Real> vals(raw.begin(), raw.end());
            m = Mat<Real>::from(shape[0], shape[1], std::move(vals));
        } else {
            throw std::runtime_error("container: unknown dtype '" + dtype + "'");
        }
        c.arrays.emplace_back(name, std::move(m));
    }
    return c;
}

}  // namespace usdrl::io
