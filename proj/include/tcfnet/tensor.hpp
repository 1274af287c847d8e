// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tcfnet {

// Dense n-dimensional array of 64-bit reals, row-major.
using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> d);

    static Tensor scalar(double v);
    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data.size()); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    double item() const;  // scalar tensors only
};

bool all_finite(const Tensor& t);

// Truncated normal in [-2 sd, 2 sd], the usual conv/dense initializer.
Tensor truncated_normal(const Shape& shape, double stddev, std::mt19937_64& rng);

// He-style fan-in scaling: sd = sqrt(scale / fan_in).
Tensor fan_in_init(const Shape& shape, int fan_in, std::mt19937_64& rng);

}  // namespace tcfnet
