#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaptfed {

/// Dense row-major matrix of doubles. Small and value-semantic; this is the
/// only tensor type in the project.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Matrix: data length != rows*cols");
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// Standard matrix product, accumulated row by row (i,k,j loop order).
/// Throws std::invalid_argument on a dimension mismatch and
/// std::runtime_error if the product contains non-finite entries.
Matrix matmul(const Matrix& a, const Matrix& b);

/// a * b^T without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);

/// a^T * b without materializing the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

void add_inplace(Matrix& a, const Matrix& b, double scale = 1.0);
void scale_inplace(Matrix& a, double s);

/// True iff every entry is finite.
bool all_finite(const Matrix& a);
bool all_finite(const std::vector<double>& v);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& v);

}  // namespace adaptfed
