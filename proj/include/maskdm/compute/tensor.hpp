#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maskdm/errors.hpp"

namespace maskdm::compute {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array. Rank-0 tensors (empty shape) hold one element.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : Tensor(Shape{}) {}

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != element_count(shape_)) {
            throw ShapeError("tensor buffer has " + std::to_string(data_.size()) +
                             " elements, shape " + shape_string(shape_) + " needs " +
                             std::to_string(element_count(shape_)));
        }
    }

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& buffer() noexcept { return data_; }
    const std::vector<T>& buffer() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T item() const {
        if (data_.size() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_string(shape_));
        }
        return data_[0];
    }

    // Same buffer viewed under a new shape with equal element count.
    Tensor reshaped(Shape shape) const {
        if (element_count(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace maskdm::compute
