#pragma once

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "cliffm/common.hpp"
#include "cliffm/parallel.hpp"

namespace cliffm {

using Shape = std::vector<i64>;

inline i64 numel_of(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) {
        if (d < 0) throw ConfigError("negative extent in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor, last axis fastest. The universal value type for
// features (B x C x H x W), parameters, labels and images.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape))) {}
    TensorT(Shape s, T fill)
        : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), fill) {}

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, T value) { return TensorT(std::move(s), value); }

    i64 numel() const { return static_cast<i64>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    i64 dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool empty() const { return v.empty() && shape.empty(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](i64 i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](i64 i) const { return v[static_cast<size_t>(i)]; }

    T& at(i64 a) { return v[static_cast<size_t>(a)]; }
    T& at(i64 a, i64 b) { return v[static_cast<size_t>(a * shape[1] + b)]; }
    T& at(i64 a, i64 b, i64 c) {
        return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    T& at(i64 a, i64 b, i64 c, i64 d) {
        return v[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    const T& at(i64 a) const { return v[static_cast<size_t>(a)]; }
    const T& at(i64 a, i64 b) const { return v[static_cast<size_t>(a * shape[1] + b)]; }
    const T& at(i64 a, i64 b, i64 c) const {
        return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    const T& at(i64 a, i64 b, i64 c, i64 d) const {
        return v[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;
using TensorU8 = TensorT<u8>;

template <typename T>
void require_shape(const TensorT<T>& t, const Shape& s, const char* what) {
    if (t.shape != s)
        throw ConfigError(std::string(what) + ": expected shape " + shape_str(s) + ", got " +
                          shape_str(t.shape));
}

template <typename T>
void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
    if (dst.empty()) {
        dst = TensorT<T>::zeros(src.shape);
    }
    if (!dst.same_shape(src)) throw ConfigError("accumulate: shape mismatch");
    T* d = dst.data();
    const T* s = src.data();
    parallel_for(dst.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) d[i] += s[i];
    });
}

template <typename To, typename From>
TensorT<To> cast_tensor(const TensorT<From>& x) {
    TensorT<To> out(x.shape);
    for (i64 i = 0; i < x.numel(); ++i) out[i] = static_cast<To>(x[i]);
    return out;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) throw ConfigError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) {
        double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        if (d > m) m = d;
    }
    return m;
}

}  // namespace cliffm
