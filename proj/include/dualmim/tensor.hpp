#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace dualmim {

/// Dense row-major tensor of doubles with an explicit shape.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(element_count(shape), fill) {}

    std::size_t size() const { return data.size(); }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Row-major matrix used for token activations.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

}  // namespace dualmim
