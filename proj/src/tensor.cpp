#include "plip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace plip {

const char* category_name(ErrorCategory c) noexcept {
    switch (c) {
        case ErrorCategory::config: return "config";
        case ErrorCategory::data: return "data";
        case ErrorCategory::numeric: return "numeric";
    }
    return "unknown";
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
    }
}

std::int64_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::int64_t> index) const {
    if (index.size() != shape_.size()) {
        throw ShapeError("index rank does not match shape " + shape_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range for shape " + shape_string(shape_));
        off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return off;
}

double& Tensor::at(std::initializer_list<std::int64_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::int64_t> index) const { return data_[offset(index)]; }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_inplace(const Tensor& other) {
    if (other.data_.size() != data_.size()) {
        throw ShapeError("add_inplace shape mismatch " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace plip
