#pragma once

#include <Eigen/Dense>

#include "sketchalign/geometry.hpp"

namespace sketchalign {

/// Residual equations for one sketch + constraint set, with analytic Jacobian.
///
/// Branch-dependent constraints (tangent side, endpoint attachment) freeze
/// their branch at construction from the build geometry so the objective stays
/// smooth over the whole solve.
class ResidualSystem {
 public:
  ResidualSystem(const Sketch& sketch, const ConstraintSequence& constraints);

  int num_residuals() const { return num_residuals_; }
  int num_variables() const { return packed_.size(); }
  const PackedParams& packed() const { return packed_; }

  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;

 private:
  struct Item {
    ConstraintInstance constraint;
    int row = 0;       // first residual row
    int rows = 0;      // residual count
    int branch = 0;    // tangent side / endpoint index, fixed at construction
    int branch2 = 0;   // second sign for circle-circle tangency
  };

  // Param lookup spanning fixed (from the sketch) and free (from x) primitives.
  void primitive_params(const Eigen::VectorXd& x, int id, double* out, int* var_base) const;
  void eval(const Eigen::VectorXd& x, Eigen::VectorXd* r, Eigen::MatrixXd* jac) const;

  Sketch sketch_;
  PackedParams packed_;
  std::vector<Item> items_;
  int num_residuals_ = 0;
};

}  // namespace sketchalign
