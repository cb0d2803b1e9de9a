#pragma once

// Uncompressed .npz (zip of .npy arrays) reader/writer, the portable array
// container used for checkpoints. Arrays written here load with numpy as-is.

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "tilesemi/tensor.hpp"

namespace tilesemi::npz {

struct Array {
    std::string dtype;  // numpy descr: "<f4", "<f8", "<i4", "<i8", "<u8"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> data;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

using Archive = std::map<std::string, Array>;

void save(const std::string& path, const Archive& archive);
Archive load(const std::string& path);

template <class T>
const char* dtype_of();

template <class T>
Array from_tensor(const Tensor<T>& t) {
    Array a;
    a.dtype = dtype_of<T>();
    a.shape = t.shape();
    a.data.resize(static_cast<std::size_t>(t.numel()) * sizeof(T));
    std::memcpy(a.data.data(), t.data(), a.data.size());
    return a;
}

template <class T>
Tensor<T> to_tensor(const Array& a) {
    if (a.dtype != dtype_of<T>())
        throw std::runtime_error("npz: dtype mismatch, stored " + a.dtype);
    Tensor<T> t(a.shape);
    if (a.data.size() != static_cast<std::size_t>(t.numel()) * sizeof(T))
        throw std::runtime_error("npz: payload size mismatch");
    std::memcpy(t.data(), a.data.data(), a.data.size());
    return t;
}

Array from_scalar_u64(std::uint64_t v);
std::uint64_t to_scalar_u64(const Array& a);
Array from_u64_vector(const std::vector<std::uint64_t>& v);
std::vector<std::uint64_t> to_u64_vector(const Array& a);

}  // namespace tilesemi::npz
