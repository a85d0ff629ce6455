#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "errors.hpp"

namespace sgic {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A point in the ambient parameter space: a length-p vector or a p1 x p2
/// matrix. Vectors are stored as p x 1 matrices; the inner product is the
/// trace inner product in both cases.
class ParamPoint {
  public:
    ParamPoint() = default;

    static ParamPoint vector(Vec v) {
        ParamPoint out;
        out.values_ = std::move(v);
        out.is_matrix_ = false;
        out.require_finite();
        return out;
    }

    static ParamPoint matrix(Mat m) {
        ParamPoint out;
        out.values_ = std::move(m);
        out.is_matrix_ = true;
        out.require_finite();
        return out;
    }

    static ParamPoint zeros(Index p) { return vector(Vec::Zero(p)); }
    static ParamPoint zeros(Index p1, Index p2) { return matrix(Mat::Zero(p1, p2)); }

    /// Zero point with the same shape as `like`.
    static ParamPoint zeros_like(const ParamPoint &like) {
        ParamPoint out = like;
        out.values_.setZero();
        return out;
    }

    bool is_matrix() const { return is_matrix_; }
    Index rows() const { return values_.rows(); }
    Index cols() const { return values_.cols(); }
    Index size() const { return values_.size(); }

    const Mat &values() const { return values_; }
    Eigen::Map<const Vec> flat() const { return {values_.data(), values_.size()}; }

    bool same_shape(const ParamPoint &other) const {
        return is_matrix_ == other.is_matrix_ && rows() == other.rows() &&
               cols() == other.cols();
    }

    double dot(const ParamPoint &other) const {
        require_same_shape(other);
        return flat().dot(other.flat());
    }

    double norm() const { return values_.norm(); }

    std::string shape_string() const {
        if (is_matrix_)
            return "matrix(" + std::to_string(rows()) + "x" + std::to_string(cols()) + ")";
        return "vector(" + std::to_string(rows()) + ")";
    }

    void require_same_shape(const ParamPoint &other) const {
        if (!same_shape(other))
            throw InvalidShape("shape mismatch: " + shape_string() + " vs " +
                               other.shape_string());
    }

    friend ParamPoint operator+(const ParamPoint &a, const ParamPoint &b) {
        a.require_same_shape(b);
        return a.with_values(a.values_ + b.values_);
    }
    friend ParamPoint operator-(const ParamPoint &a, const ParamPoint &b) {
        a.require_same_shape(b);
        return a.with_values(a.values_ - b.values_);
    }
    friend ParamPoint operator*(double c, const ParamPoint &a) {
        return a.with_values(c * a.values_);
    }

    /// Same shape tag, new entries (entries must have this point's dimensions).
    ParamPoint with_values(Mat v) const {
        if (v.rows() != rows() || v.cols() != cols())
            throw InvalidShape("with_values: dimension change");
        return is_matrix_ ? matrix(std::move(v)) : vector(std::move(v));
    }

  private:
    void require_finite() const {
        if (!values_.allFinite())
            throw std::invalid_argument("ParamPoint entries must be finite");
    }

    Mat values_;
    bool is_matrix_ = false;
};

} // namespace sgic
