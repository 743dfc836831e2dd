#include "degan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace degan {

namespace {
long shape_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
        if (d < 0) throw std::invalid_argument("tensor dimension must be nonnegative");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    v_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::initializer_list<long> shape) : Tensor(std::vector<long>(shape)) {}

Tensor Tensor::full(std::vector<long> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

long Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) throw std::out_of_range("tensor dim index out of range");
    return shape_[static_cast<size_t>(i)];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

double& Tensor::at(long n, long c, long h, long w) {
    if (shape_.size() == 4)
        return v_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    // (C, H, W) with an implicit leading batch of one; n must be 0.
    return v_[static_cast<size_t>(((n + c) * shape_[1] + h) * shape_[2] + w)];
}

double Tensor::at(long n, long c, long h, long w) const {
    if (shape_.size() == 4)
        return v_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    return v_[static_cast<size_t>(((n + c) * shape_[1] + h) * shape_[2] + w)];
}

double& Tensor::at(long n, long f) { return v_[static_cast<size_t>(n * shape_[1] + f)]; }

double Tensor::at(long n, long f) const { return v_[static_cast<size_t>(n * shape_[1] + f)]; }

void Tensor::fill(double value) { std::fill(v_.begin(), v_.end(), value); }

Tensor Tensor::reshaped(std::vector<long> new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw std::invalid_argument("reshape element count mismatch");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.v_ = v_;
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
}

double Tensor::min() const { return *std::min_element(v_.begin(), v_.end()); }

double Tensor::max() const { return *std::max_element(v_.begin(), v_.end()); }

void Tensor::add_(const Tensor& other) {
    if (!same_shape(other)) throw std::invalid_argument("tensor shape mismatch in add_");
    for (size_t i = 0; i < v_.size(); ++i) v_[i] += other.v_[i];
}

void Tensor::scale_(double s) {
    for (double& x : v_) x *= s;
}

double Tensor::squared_norm() const {
    return std::inner_product(v_.begin(), v_.end(), v_.begin(), 0.0);
}

}  // namespace degan
