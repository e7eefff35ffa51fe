#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "safecompress/error.hpp"

namespace safecompress {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixT<double>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const std::vector<Index>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array with an optional gradient accumulator.
///
/// Storage is always a 2-D matrix: a rank-1 tensor of length n is a 1 x n
/// row, and rank > 2 tensors fold trailing dimensions into columns. The
/// logical shape is kept separately so callers see what they asked for.
template <typename Scalar>
class Tensor {
public:
    using Storage = MatrixT<Scalar>;

    Tensor() = default;

    explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
        check_shape(shape_);
        values_ = Storage::Zero(rows_of(shape_), cols_of(shape_));
    }

    Tensor(std::vector<Index> shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
        if (static_cast<Index>(values.size()) != values_.size())
            throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                             std::to_string(values.size()) + " values");
        std::copy(values.begin(), values.end(), values_.data());
    }

    /// Wraps a matrix as a rank-2 tensor.
    explicit Tensor(Storage values) : shape_{values.rows(), values.cols()}, values_(std::move(values)) {
        check_shape(shape_);
    }

    static Tensor vector(std::initializer_list<Scalar> values) {
        return Tensor({static_cast<Index>(values.size())}, values);
    }

    static Tensor scalar(Scalar v) {
        Tensor t({1});
        t.values_(0, 0) = v;
        return t;
    }

    const std::vector<Index>& shape() const noexcept { return shape_; }
    Index size() const noexcept { return values_.size(); }
    Index rows() const noexcept { return values_.rows(); }
    Index cols() const noexcept { return values_.cols(); }

    Storage& values() noexcept { return values_; }
    const Storage& values() const noexcept { return values_; }

    Scalar& operator[](Index i) { return values_.data()[i]; }
    Scalar operator[](Index i) const { return values_.data()[i]; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    const Storage& grad() const {
        if (!grad_) throw MissingGradientError("tensor has no gradient");
        return *grad_;
    }

    /// Adds `g` into the gradient accumulator, creating it at zero first.
    void accumulate_grad(const Storage& g) {
        if (g.rows() != values_.rows() || g.cols() != values_.cols())
            throw ShapeError("gradient shape does not match tensor " + shape_string(shape_));
        if (!grad_) grad_ = Storage::Zero(values_.rows(), values_.cols());
        *grad_ += g;
    }

    void set_grad(Storage g) {
        if (g.rows() != values_.rows() || g.cols() != values_.cols())
            throw ShapeError("gradient shape does not match tensor " + shape_string(shape_));
        grad_ = std::move(g);
    }

    void clear_grad() noexcept { grad_.reset(); }

    bool all_finite() const { return values_.allFinite() && (!grad_ || grad_->allFinite()); }

private:
    static void check_shape(const std::vector<Index>& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
        for (Index d : shape)
            if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    static Index rows_of(const std::vector<Index>& shape) { return shape.size() == 1 ? 1 : shape[0]; }
    static Index cols_of(const std::vector<Index>& shape) {
        if (shape.size() == 1) return shape[0];
        return std::accumulate(shape.begin() + 1, shape.end(), Index{1}, std::multiplies<>());
    }

    std::vector<Index> shape_;
    Storage values_;
    std::optional<Storage> grad_;
};

/// Named parameter tensors of one model. Ordered so iteration (and hence
/// any reduction over parameters) is deterministic.
template <typename Scalar>
using ParameterMapT = std::map<std::string, Tensor<Scalar>>;

using ParameterMap = ParameterMapT<double>;

}  // namespace safecompress
