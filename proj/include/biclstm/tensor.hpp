#ifndef BICLSTM_TENSOR_HPP
#define BICLSTM_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "biclstm/errors.hpp"

namespace biclstm {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

// Dense n-d array of doubles, row-major. No broadcasting anywhere: binary ops
// demand identical shapes and throw shape_error otherwise. Tensors are treated
// as immutable except through *_inplace operations.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        for (std::size_t d : shape_)
            if (d == 0) throw argument_error("tensor dimension must be positive, got shape " + shape_str(shape_));
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw shape_error("data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Checked multi-index access; hot loops index flat via data().
    double& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    double at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

    double sqnorm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return s;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size())
            throw argument_error("index rank " + std::to_string(idx.size()) +
                                 " does not match tensor rank " + std::to_string(shape_.size()));
        std::size_t off = 0, k = 0;
        for (std::size_t i : idx) {
            if (i >= shape_[k])
                throw argument_error("index " + std::to_string(i) + " out of range for dim " +
                                     std::to_string(k) + " of shape " + shape_str(shape_));
            off = off * shape_[k] + i;
            ++k;
        }
        return off;
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

// a += b
inline void add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add_inplace");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// a += s * b
inline void axpy_inplace(Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy_inplace");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

inline void scale_inplace(Tensor& a, double s) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor map_sigmoid(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = sigmoid(a[i]);
    return out;
}

inline Tensor map_tanh(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace biclstm

#endif
