// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tcfnet {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("shape extent must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel(shape)), 0.0);
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

double Tensor::item() const {
    if (data.size() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str(shape));
    return data[0];
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor truncated_normal(const Shape& shape, double stddev, std::mt19937_64& rng) {
    Tensor t(shape);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data) {
        double x = dist(rng);
        while (std::abs(x) > 2.0 * stddev) x = dist(rng);
        v = x;
    }
    return t;
}

Tensor fan_in_init(const Shape& shape, int fan_in, std::mt19937_64& rng) {
    if (fan_in <= 0) throw std::invalid_argument("fan_in must be positive");
    return truncated_normal(shape, std::sqrt(2.0 / fan_in), rng);
}

}  // namespace tcfnet
