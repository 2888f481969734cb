#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "xprompt/rng.hpp"

namespace xp {

// Dense row-major matrix. Vectors are 1 x n or n x 1 as convenient.
template <typename S>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<S> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, S(0)) {}

    S* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const S* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    S& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    S at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    size_t size() const { return a.size(); }
    void fill(S v) { std::fill(a.begin(), a.end(), v); }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(static_cast<size_t>(r) * c, S(0));
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

template <typename S>
uint64_t checksum(const Mat<S>& m, uint64_t state = 0xcbf29ce484222325ull) {
    return fnv1a64(m.a.data(), m.a.size() * sizeof(S), state);
}

template <typename S>
Mat<S> transposed(const Mat<S>& m) {
    Mat<S> t(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            t.at(j, i) = m.at(i, j);
        }
    }
    return t;
}

template <typename From, typename To>
Mat<To> cast_mat(const Mat<From>& m) {
    Mat<To> out(m.rows, m.cols);
    for (size_t i = 0; i < m.a.size(); ++i) {
        out.a[i] = static_cast<To>(m.a[i]);
    }
    return out;
}

}  // namespace xp
