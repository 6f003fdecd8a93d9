#include "sketchalign/residuals.hpp"

#include <cmath>
#include <stdexcept>

namespace sketchalign {

namespace {

constexpr double kDegenerate = 1e-12;

double dist2(double ax, double ay, double bx, double by) {
  return (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
}

}  // namespace

ResidualSystem::ResidualSystem(const Sketch& sketch, const ConstraintSequence& constraints)
    : sketch_(sketch), packed_(pack_parameters(sketch)) {
  items_.reserve(constraints.items.size());
  int row = 0;
  for (const auto& c : constraints.items) {
    std::vector<PrimitiveKind> kinds;
    for (int ref : c.refs) kinds.push_back(sketch_.at(ref).kind);
    Item item;
    item.constraint = c;
    item.row = row;
    item.rows = residual_arity(c.kind, kinds);

    // Freeze branch choices from the build geometry.
    if (c.kind == ConstraintKind::Coincident && kinds[1] != PrimitiveKind::Point) {
      const auto& p = sketch_.at(c.refs[0]).params;
      const auto& curve = sketch_.at(c.refs[1]);
      Vec2 e0 = curve_endpoint(curve, 0);
      Vec2 e1 = curve_endpoint(curve, 1);
      item.branch =
          dist2(p[0], p[1], e0.x, e0.y) <= dist2(p[0], p[1], e1.x, e1.y) ? 0 : 1;
    } else if (c.kind == ConstraintKind::Tangent && kinds[0] == PrimitiveKind::Line) {
      const auto& line = sketch_.at(c.refs[0]).params;
      const auto& circ = sketch_.at(c.refs[1]).params;
      double dx = line[2] - line[0], dy = line[3] - line[1];
      double cross = dx * (circ[1] - line[1]) - dy * (circ[0] - line[0]);
      item.branch = cross >= 0.0 ? 1 : -1;
    } else if (c.kind == ConstraintKind::Tangent) {
      const auto& a = sketch_.at(c.refs[0]).params;
      const auto& b = sketch_.at(c.refs[1]).params;
      double n = std::hypot(a[0] - b[0], a[1] - b[1]);
      double best = std::numeric_limits<double>::infinity();
      const int signs[3][2] = {{1, 1}, {1, -1}, {-1, 1}};
      for (const auto& s : signs) {
        double res = std::abs(n - s[0] * a[2] - s[1] * b[2]);
        if (res < best) {
          best = res;
          item.branch = s[0];
          item.branch2 = s[1];
        }
      }
    }

    row += item.rows;
    items_.push_back(std::move(item));
  }
  num_residuals_ = row;
}

void ResidualSystem::primitive_params(const Eigen::VectorXd& x, int id, double* out,
                                      int* var_base) const {
  const auto& prim = sketch_.at(id);
  const auto& slice = packed_.slices[static_cast<size_t>(id)];
  if (slice) {
    for (int k = 0; k < slice->length; ++k) out[k] = x[slice->offset + k];
    *var_base = slice->offset;
  } else {
    for (size_t k = 0; k < prim.params.size(); ++k) out[k] = prim.params[k];
    *var_base = -1;
  }
}

Eigen::VectorXd ResidualSystem::residuals(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r(num_residuals_);
  eval(x, &r, nullptr);
  return r;
}

Eigen::MatrixXd ResidualSystem::jacobian(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r(num_residuals_);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(num_residuals_, num_variables());
  eval(x, &r, &jac);
  return jac;
}

void ResidualSystem::eval(const Eigen::VectorXd& x, Eigen::VectorXd* r,
                          Eigen::MatrixXd* jac) const {
  if (static_cast<int>(x.size()) != num_variables()) {
    throw std::invalid_argument("parameter vector length mismatch");
  }
  for (const auto& item : items_) {
    const auto& c = item.constraint;
    double prm[2][5];
    int base[2];
    for (size_t i = 0; i < c.refs.size(); ++i) {
      primitive_params(x, c.refs[i], prm[i], &base[i]);
    }
    // kinds needed for the few shape-dependent cases
    PrimitiveKind k0 = sketch_.at(c.refs[0]).kind;

    auto add = [&](int row, int operand, int param_idx, double val) {
      if (jac && base[operand] >= 0) {
        (*jac)(item.row + row, base[operand] + param_idx) += val;
      }
    };
    auto set_res = [&](int row, double val) { (*r)[item.row + row] = val; };

    // Line direction helpers for operand i.
    auto dir_x = [&](int i) { return prm[i][2] - prm[i][0]; };
    auto dir_y = [&](int i) { return prm[i][3] - prm[i][1]; };
    auto length = [&](int i) { return std::hypot(dir_x(i), dir_y(i)); };

    // d(residual)/d(direction of line i) = (gx, gy) chained onto endpoints.
    auto add_dir_grad = [&](int row, int i, double gx, double gy) {
      add(row, i, 0, -gx);
      add(row, i, 1, -gy);
      add(row, i, 2, gx);
      add(row, i, 3, gy);
    };

    switch (c.kind) {
      case ConstraintKind::Coincident: {
        if (sketch_.at(c.refs[1]).kind == PrimitiveKind::Point) {
          set_res(0, prm[0][0] - prm[1][0]);
          set_res(1, prm[0][1] - prm[1][1]);
          add(0, 0, 0, 1.0);
          add(0, 1, 0, -1.0);
          add(1, 0, 1, 1.0);
          add(1, 1, 1, -1.0);
        } else if (sketch_.at(c.refs[1]).kind == PrimitiveKind::Line) {
          int ex = item.branch == 0 ? 0 : 2;
          set_res(0, prm[0][0] - prm[1][ex]);
          set_res(1, prm[0][1] - prm[1][ex + 1]);
          add(0, 0, 0, 1.0);
          add(0, 1, ex, -1.0);
          add(1, 0, 1, 1.0);
          add(1, 1, ex + 1, -1.0);
        } else {  // arc endpoint: c + r*(cos t, sin t)
          int ti = item.branch == 0 ? 3 : 4;
          double t = prm[1][ti], rad = prm[1][2];
          double ct = std::cos(t), st = std::sin(t);
          set_res(0, prm[0][0] - (prm[1][0] + rad * ct));
          set_res(1, prm[0][1] - (prm[1][1] + rad * st));
          add(0, 0, 0, 1.0);
          add(0, 1, 0, -1.0);
          add(0, 1, 2, -ct);
          add(0, 1, ti, rad * st);
          add(1, 0, 1, 1.0);
          add(1, 1, 1, -1.0);
          add(1, 1, 2, -st);
          add(1, 1, ti, -rad * ct);
        }
        break;
      }
      case ConstraintKind::Horizontal:
      case ConstraintKind::Vertical: {
        int axis = c.kind == ConstraintKind::Horizontal ? 1 : 0;  // y for H, x for V
        if (k0 == PrimitiveKind::Line) {
          set_res(0, prm[0][2 + axis] - prm[0][axis]);
          add(0, 0, axis, -1.0);
          add(0, 0, 2 + axis, 1.0);
        } else {
          set_res(0, prm[1][axis] - prm[0][axis]);
          add(0, 0, axis, -1.0);
          add(0, 1, axis, 1.0);
        }
        break;
      }
      case ConstraintKind::Parallel: {
        double d1x = dir_x(0), d1y = dir_y(0), d2x = dir_x(1), d2y = dir_y(1);
        set_res(0, d1x * d2y - d1y * d2x);
        add_dir_grad(0, 0, d2y, -d2x);
        add_dir_grad(0, 1, -d1y, d1x);
        break;
      }
      case ConstraintKind::Perpendicular: {
        double d1x = dir_x(0), d1y = dir_y(0), d2x = dir_x(1), d2y = dir_y(1);
        set_res(0, d1x * d2x + d1y * d2y);
        add_dir_grad(0, 0, d2x, d2y);
        add_dir_grad(0, 1, d1x, d1y);
        break;
      }
      case ConstraintKind::Tangent: {
        if (k0 == PrimitiveKind::Line) {
          // signed point-line distance minus radius
          double dx = dir_x(0), dy = dir_y(0);
          double len = length(0);
          double wx = prm[1][0] - prm[0][0], wy = prm[1][1] - prm[0][1];
          double cross = dx * wy - dy * wx;
          double s = static_cast<double>(item.branch);
          set_res(0, cross / len - s * prm[1][2]);
          if (jac) {
            double ux = dx / len, uy = dy / len;
            double inv = 1.0 / len;
            double q = cross / (len * len);
            // d(cross)/d endpoints, then quotient rule against |d|
            add(0, 0, 0, (dy - wy) * inv + q * ux);
            add(0, 0, 1, (wx - dx) * inv + q * uy);
            add(0, 0, 2, wy * inv - q * ux);
            add(0, 0, 3, -wx * inv - q * uy);
            add(0, 1, 0, -dy * inv);
            add(0, 1, 1, dx * inv);
            add(0, 1, 2, -s);
          }
        } else {
          double vx = prm[0][0] - prm[1][0], vy = prm[0][1] - prm[1][1];
          double n = std::hypot(vx, vy);
          double s1 = static_cast<double>(item.branch);
          double s2 = static_cast<double>(item.branch2);
          set_res(0, n - s1 * prm[0][2] - s2 * prm[1][2]);
          if (jac && n > kDegenerate) {
            add(0, 0, 0, vx / n);
            add(0, 0, 1, vy / n);
            add(0, 1, 0, -vx / n);
            add(0, 1, 1, -vy / n);
          }
          add(0, 0, 2, -s1);
          add(0, 1, 2, -s2);
        }
        break;
      }
      case ConstraintKind::Midpoint: {
        set_res(0, prm[0][0] - 0.5 * (prm[1][0] + prm[1][2]));
        set_res(1, prm[0][1] - 0.5 * (prm[1][1] + prm[1][3]));
        add(0, 0, 0, 1.0);
        add(0, 1, 0, -0.5);
        add(0, 1, 2, -0.5);
        add(1, 0, 1, 1.0);
        add(1, 1, 1, -0.5);
        add(1, 1, 3, -0.5);
        break;
      }
      case ConstraintKind::Equal: {
        if (k0 == PrimitiveKind::Line) {
          double l1 = length(0), l2 = length(1);
          set_res(0, l1 - l2);
          if (jac) {
            add_dir_grad(0, 0, dir_x(0) / l1, dir_y(0) / l1);
            add_dir_grad(0, 1, -dir_x(1) / l2, -dir_y(1) / l2);
          }
        } else {
          set_res(0, prm[0][2] - prm[1][2]);
          add(0, 0, 2, 1.0);
          add(0, 1, 2, -1.0);
        }
        break;
      }
      case ConstraintKind::Concentric: {
        // operand centers live at params [0,1] for points, circles, and arcs
        set_res(0, prm[0][0] - prm[1][0]);
        set_res(1, prm[0][1] - prm[1][1]);
        add(0, 0, 0, 1.0);
        add(0, 1, 0, -1.0);
        add(1, 0, 1, 1.0);
        add(1, 1, 1, -1.0);
        break;
      }
      case ConstraintKind::DistanceDim: {
        double vx = prm[0][0] - prm[1][0], vy = prm[0][1] - prm[1][1];
        double n = std::hypot(vx, vy);
        set_res(0, n - *c.value);
        if (jac && n > kDegenerate) {
          add(0, 0, 0, vx / n);
          add(0, 0, 1, vy / n);
          add(0, 1, 0, -vx / n);
          add(0, 1, 1, -vy / n);
        }
        break;
      }
      case ConstraintKind::LengthDim: {
        double len = length(0);
        set_res(0, len - *c.value);
        if (jac && len > kDegenerate) {
          add_dir_grad(0, 0, dir_x(0) / len, dir_y(0) / len);
        }
        break;
      }
      case ConstraintKind::RadiusDim:
        set_res(0, prm[0][2] - *c.value);
        add(0, 0, 2, 1.0);
        break;
      case ConstraintKind::DiameterDim:
        set_res(0, 2.0 * prm[0][2] - *c.value);
        add(0, 0, 2, 2.0);
        break;
      case ConstraintKind::AngleDim: {
        // dot(d1,d2) - cos(v)*|d1||d2| == 0  iff  angle(d1,d2) == v in [0,pi]
        double d1x = dir_x(0), d1y = dir_y(0), d2x = dir_x(1), d2y = dir_y(1);
        double l1 = length(0), l2 = length(1);
        double cv = std::cos(*c.value);
        set_res(0, d1x * d2x + d1y * d2y - cv * l1 * l2);
        if (jac) {
          add_dir_grad(0, 0, d2x - cv * (d1x / l1) * l2, d2y - cv * (d1y / l1) * l2);
          add_dir_grad(0, 1, d1x - cv * (d2x / l2) * l1, d1y - cv * (d2y / l2) * l1);
        }
        break;
      }
    }
  }
}

}  // namespace sketchalign
