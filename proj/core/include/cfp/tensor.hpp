#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cfp/errors.hpp"

namespace cfp {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor. 4-D feature maps use [batch, channels, height, width].
// Invariants: every shape entry >= 1, data.size() == product of shape.
// Values are immutable by convention once an op has produced the tensor;
// in-place mutation is reserved for construction and parameter loading.
template <typename T>
class BasicTensor {
public:
    BasicTensor() = default;

    explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }

    BasicTensor(Shape shape, std::initializer_list<T> data)
        : BasicTensor(std::move(shape), std::vector<T>(data)) {}

    static BasicTensor full(Shape shape, T value) {
        BasicTensor t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return {data_.data(), data_.size()}; }
    std::span<const T> data() const noexcept { return {data_.data(), data_.size()}; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Row-major offset for a 4-D tensor.
    std::int64_t offset4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    T at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(offset4(b, c, h, w))];
    }
    T& at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(offset4(b, c, h, w))];
    }

    bool same_shape(const BasicTensor& o) const { return shape_ == o.shape_; }

    BasicTensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                             " changes element count");
        BasicTensor out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> d(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
        return BasicTensor<U>(shape_, std::move(d));
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void validate_shape() const {
        for (auto d : shape_)
            if (d < 1) throw ShapeError("shape entry < 1 in " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string(what) + " produced or received a non-finite value");
}

} // namespace cfp
