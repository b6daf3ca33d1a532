#pragma once
// Dense row-major matrix of 64-bit reals plus the few linear-algebra
// operations the toolkit needs. All reductions run in a fixed order so
// repeated runs produce identical bits.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodkit {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool empty() const { return rows == 0 || cols == 0; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// a^T * b without materializing the transpose.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows, "matmul_at_b: row counts differ");
    Matrix out(a.cols, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        const double* brow = b.row(i);
        for (std::size_t r = 0; r < a.cols; ++r) {
            const double air = arow[r];
            double* orow = out.row(r);
            for (std::size_t c = 0; c < b.cols; ++c) orow[c] += air * brow[c];
        }
    }
    return out;
}

// a * b^T
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    require(a.cols == b.cols, "matmul_a_bt: column counts differ");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t r = 0; r < b.rows; ++r) {
            const double* brow = b.row(r);
            double acc = 0.0;
            for (std::size_t c = 0; c < a.cols; ++c) acc += arow[c] * brow[c];
            orow[r] = acc;
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

inline std::vector<double> column_sums(const Matrix& a) {
    std::vector<double> out(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) out[j] += arow[j];
    }
    return out;
}

inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
    if (top.empty()) return bottom;
    if (bottom.empty()) return top;
    require(top.cols == bottom.cols, "vstack: column counts differ");
    Matrix out(top.rows + bottom.rows, top.cols);
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + top.data.size());
    return out;
}

inline Matrix take_rows(const Matrix& a, std::size_t begin, std::size_t end) {
    require(begin <= end && end <= a.rows, "take_rows: range out of bounds");
    Matrix out(end - begin, a.cols);
    std::copy(a.data.begin() + begin * a.cols, a.data.begin() + end * a.cols, out.data.begin());
    return out;
}

inline Matrix gather_rows(const Matrix& a, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), a.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < a.rows, "gather_rows: index out of bounds");
        std::copy(a.row(idx[i]), a.row(idx[i]) + a.cols, out.row(i));
    }
    return out;
}

}  // namespace oodkit
