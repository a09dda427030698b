#include "adaptfed/matrix.hpp"

#include <cmath>

namespace adaptfed {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: dimension mismatch " +
                                    std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                    " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    Matrix out(a.rows, b.cols);
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        double* oi = &out.data[i * m];
        const double* ai = &a.data[i * k];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = &b.data[p * m];
            for (std::size_t j = 0; j < m; ++j) oi[j] += av * bp[j];
        }
    }
    if (!all_finite(out)) throw std::runtime_error("matmul: non-finite entry in product");
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_bt: dimension mismatch");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = &a.data[i * a.cols];
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* bj = &b.data[j * b.cols];
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols; ++p) s += ai[p] * bj[p];
            out.data[i * b.rows + j] = s;
        }
    }
    if (!all_finite(out)) throw std::runtime_error("matmul_bt: non-finite entry in product");
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_at: dimension mismatch");
    Matrix out(a.cols, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = &a.data[i * a.cols];
        const double* bi = &b.data[i * b.cols];
        for (std::size_t p = 0; p < a.cols; ++p) {
            const double av = ai[p];
            double* op = &out.data[p * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) op[j] += av * bi[j];
        }
    }
    if (!all_finite(out)) throw std::runtime_error("matmul_at: non-finite entry in product");
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            out.data[j * a.rows + i] = a.data[i * a.cols + j];
    return out;
}

void add_inplace(Matrix& a, const Matrix& b, double scale) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += scale * b.data[i];
}

void scale_inplace(Matrix& a, double s) {
    for (double& v : a.data) v *= s;
}

bool all_finite(const Matrix& a) { return all_finite(a.data); }

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const std::vector<double>& v) {
    return std::sqrt(dot(v, v));
}

}  // namespace adaptfed
