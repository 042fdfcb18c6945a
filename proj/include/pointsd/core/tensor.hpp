#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pointsd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Renders a shape as "32x1x3x3"; rank-0 renders as "scalar".
inline std::string shape_string(const Shape& shape) {
    if (shape.empty()) return "scalar";
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return os.str();
}

/// Allocates on 64-byte boundaries. Eigen peels reductions up to the first
/// packet-aligned element, so with malloc's 16-byte guarantee the float summation
/// order (and the result bits) would depend on where the heap put the buffer.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }

    template <class U>
    bool operator==(const AlignedAllocator<U, Align>&) const noexcept { return true; }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

template <class T>
bool operator==(const Storage<T>& a, const std::vector<T>& b) {
    return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

/// Dense row-major tensor with value semantics.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage<T>(data.begin(), data.end())) {}
    Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel(shape_)) {
            throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                        " values do not fill shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    Storage<T>& storage() noexcept { return data_; }
    const Storage<T>& storage() const noexcept { return data_; }
    std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D accessors; caller guarantees rank 2.
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.size() < 2 ? 1 : size() / shape_.at(0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void reshape(Shape shape) {
        if (numel(shape) != data_.size()) {
            throw std::invalid_argument("Tensor::reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
        }
        shape_ = std::move(shape);
    }
    Tensor reshaped(Shape shape) const {
        Tensor out = *this;
        out.reshape(std::move(shape));
        return out;
    }

    Tensor& operator+=(const Tensor& other) {
        if (other.size() != size()) throw std::invalid_argument("Tensor::operator+=: size mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    template <class U>
    Tensor<U> cast() const {
        Storage<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    Storage<T> data_;
};

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// Views a tensor as a rows x cols row-major matrix (rows = first dim).
template <class T>
MatMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return MatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MatMap<T> as_matrix(Tensor<T>& t) {
    return as_matrix(t, t.rows(), t.cols());
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
    return as_matrix(t, t.rows(), t.cols());
}

}  // namespace pointsd
