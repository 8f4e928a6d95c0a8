#pragma once

#include <Eigen/Dense>

namespace boolmeta {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A twice-differentiable scalar function of a flat parameter vector.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Eigen::Index dimension() const = 0;
  virtual double value(const Vector& theta) const = 0;
  // Returns the value and writes the gradient into `grad`.
  virtual double value_and_grad(const Vector& theta, Vector& grad) const = 0;
  // Hessian at `theta` applied to `v`.
  virtual Vector hvp(const Vector& theta, const Vector& v) const = 0;
};

// f(θ) = ½ θᵀAθ − bᵀθ + c with symmetric A.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(Matrix a, Vector b, double c = 0.0) : a_(std::move(a)), b_(std::move(b)), c_(c) {}
  explicit QuadraticObjective(Matrix a) : QuadraticObjective(a, Vector::Zero(a.rows())) {}

  Eigen::Index dimension() const override { return a_.rows(); }
  double value(const Vector& theta) const override { return 0.5 * theta.dot(a_ * theta) - b_.dot(theta) + c_; }
  double value_and_grad(const Vector& theta, Vector& grad) const override {
    grad = a_ * theta - b_;
    return value(theta);
  }
  Vector hvp(const Vector&, const Vector& v) const override { return a_ * v; }

  const Matrix& hessian() const { return a_; }

 private:
  Matrix a_;
  Vector b_;
  double c_;
};

}  // namespace boolmeta
