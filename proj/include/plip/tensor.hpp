#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "plip/errors.hpp"

namespace plip {

using Shape = std::vector<std::int64_t>;

std::string shape_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const Shape& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t axis) const;
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::initializer_list<std::int64_t> index);
    double at(std::initializer_list<std::int64_t> index) const;

    double item() const;

    /// Same data, new shape. Element count must match.
    Tensor reshaped(Shape shape) const;

    void fill(double v);
    void add_inplace(const Tensor& other);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::size_t offset(std::initializer_list<std::int64_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace plip
