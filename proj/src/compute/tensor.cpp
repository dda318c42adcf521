#include "maskdm/compute/tensor.hpp"

#include <cmath>

namespace maskdm::compute {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace maskdm::compute
