#pragma once

#include <cstddef>
#include <cstdlib>
#include <initializer_list>
#include <new>
#include <string>
#include <vector>

namespace degan {

/// 64-byte aligned storage. Keeping every buffer on the same alignment makes
/// the SIMD head/tail split of downstream kernels depend only on the shape,
/// never on where the allocator happened to place the data, so results are
/// bit-reproducible across runs and heap layouts.
template <class T>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = (n * sizeof(T) + 63) / 64 * 64;
        void* p = std::aligned_alloc(64, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { std::free(p); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
    template <class U>
    bool operator!=(const AlignedAllocator<U>&) const {
        return false;
    }
};

using AlignedDoubleVec = std::vector<double, AlignedAllocator<double>>;

/// Dense double tensor with a dynamic shape. Row-major; image batches are
/// laid out as (N, C, H, W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<long> shape);
    Tensor(std::initializer_list<long> shape);

    static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<long> shape, double value);

    long numel() const { return static_cast<long>(v_.size()); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    long dim(int i) const;
    const std::vector<long>& shape() const { return shape_; }
    std::string shape_str() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double& operator[](long i) { return v_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return v_[static_cast<size_t>(i)]; }

    // (n, c, h, w) indexing for 4-d tensors, (n, f) for 2-d.
    double& at(long n, long c, long h, long w);
    double at(long n, long c, long h, long w) const;
    double& at(long n, long f);
    double at(long n, long f) const;

    void fill(double value);
    void zero() { fill(0.0); }

    /// Same data, new shape; numel must match.
    Tensor reshaped(std::vector<long> new_shape) const;

    bool all_finite() const;
    double min() const;
    double max() const;

    void add_(const Tensor& other);           // elementwise +=
    void scale_(double s);                    // elementwise *=
    double squared_norm() const;

private:
    std::vector<long> shape_;
    AlignedDoubleVec v_;
};

}  // namespace degan
