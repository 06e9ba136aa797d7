#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "budgetnet/errors.hpp"

namespace bnet {

// Dense row-major n-d array with an optional same-shape gradient buffer.
// The gradient is absent until ensure_grad() (or an op that writes it) is
// called; absent is represented by an empty vector.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;
    std::vector<T> grad;

    Tensor() = default;

    explicit Tensor(std::vector<int64_t> s, T fill = T(0)) : shape(std::move(s)) {
        for (int64_t d : shape) {
            if (d <= 0) throw UsageError("tensor dimensions must be positive, got " + dims_str(shape));
        }
        data.assign(static_cast<size_t>(count(shape)), fill);
    }

    Tensor(std::vector<int64_t> s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != count(shape)) {
            throw UsageError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + dims_str(shape));
        }
    }

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int64_t dim(int i) const {
        if (i < 0 || i >= rank()) throw UsageError("dim index " + std::to_string(i) + " out of range for rank " + std::to_string(rank()));
        return shape[static_cast<size_t>(i)];
    }

    bool has_grad() const { return !grad.empty(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T* gptr() { return grad.data(); }
    const T* gptr() const { return grad.data(); }

    T& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& at(int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static std::string dims_str(const std::vector<int64_t>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }

    std::string shape_str() const { return dims_str(shape); }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline void check_rank(const std::vector<int64_t>& shape, int want, const char* what) {
    if (static_cast<int>(shape.size()) != want) {
        throw UsageError(std::string(what) + ": expected rank " + std::to_string(want) +
                         ", got " + TensorF::dims_str(shape));
    }
}

}  // namespace bnet
