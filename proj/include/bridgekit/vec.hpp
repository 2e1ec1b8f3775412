#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bridgekit {

/// State vectors are small dense arrays (dimension d is 1 or 2 for the toy tasks).
using Vec = std::vector<double>;

inline void require_same_dim(std::size_t a, std::size_t b, const char* where) {
    if (a != b) {
        throw std::invalid_argument(std::string(where) + ": dimension mismatch (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

/// out = ka*a + kb*b + kc*c, elementwise.
inline Vec combine(double ka, std::span<const double> a, double kb, std::span<const double> b,
                   double kc, std::span<const double> c) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = ka * a[i] + kb * b[i] + kc * c[i];
    return out;
}

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace bridgekit
