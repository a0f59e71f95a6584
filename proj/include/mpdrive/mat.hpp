#pragma once
#include <cstddef>
#include <vector>

#include "mpdrive/errors.hpp"

namespace mpdrive {

// Dense row-major f64 matrix. Doubles as a weight block (rows = out,
// cols = in) and as a sample batch (rows = batch, cols = features).
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { a.assign(a.size(), v); }
};

// z = x * w^T + b, with x (n x in), w (out x in), b (out). Row-against-row
// dot products keep both operands contiguous.
inline void affine_forward(const Mat& x, const Mat& w, const std::vector<double>& b, Mat& z) {
    if (x.cols != w.cols || static_cast<int>(b.size()) != w.rows)
        throw ContractViolation("affine_forward: shape mismatch");
    z.rows = x.rows;
    z.cols = w.rows;
    z.a.assign(static_cast<std::size_t>(z.rows) * z.cols, 0.0);
    const int in = x.cols, out = w.rows;
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* zi = z.row(i);
        for (int j = 0; j < out; ++j) {
            const double* wj = w.row(j);
            double acc = 0.0;
            for (int k = 0; k < in; ++k) acc += xi[k] * wj[k];
            zi[j] = acc + b[j];
        }
    }
}

// dx = dz * w, with dz (n x out), w (out x in). Accumulates rows of w scaled
// by dz entries so the inner loop stays contiguous.
inline void affine_backward_input(const Mat& dz, const Mat& w, Mat& dx) {
    if (dz.cols != w.rows) throw ContractViolation("affine_backward_input: shape mismatch");
    dx.rows = dz.rows;
    dx.cols = w.cols;
    dx.a.assign(static_cast<std::size_t>(dx.rows) * dx.cols, 0.0);
    const int in = w.cols, out = w.rows;
    for (int i = 0; i < dz.rows; ++i) {
        const double* gi = dz.row(i);
        double* di = dx.row(i);
        for (int j = 0; j < out; ++j) {
            const double g = gi[j];
            if (g == 0.0) continue;
            const double* wj = w.row(j);
            for (int k = 0; k < in; ++k) di[k] += g * wj[k];
        }
    }
}

// dw += dz^T * x and db += column sums of dz.
inline void affine_backward_params(const Mat& dz, const Mat& x, Mat& dw, std::vector<double>& db) {
    if (dz.rows != x.rows || dw.rows != dz.cols || dw.cols != x.cols ||
        static_cast<int>(db.size()) != dz.cols)
        throw ContractViolation("affine_backward_params: shape mismatch");
    const int in = x.cols, out = dz.cols;
    for (int i = 0; i < dz.rows; ++i) {
        const double* gi = dz.row(i);
        const double* xi = x.row(i);
        for (int j = 0; j < out; ++j) {
            const double g = gi[j];
            db[j] += g;
            if (g == 0.0) continue;
            double* wj = dw.row(j);
            for (int k = 0; k < in; ++k) wj[k] += g * xi[k];
        }
    }
}

} // namespace mpdrive
