#include "sketchalign/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace sketchalign::ad {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Tape::Var Tape::push(Mat value, bool requires_grad, std::function<void()> back) {
  Node node;
  node.value = std::move(value);
  if (requires_grad) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
  node.back = std::move(back);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::constant(Mat value) { return push(std::move(value), false); }

Tape::Var Tape::leaf(Mat value) { return push(std::move(value), true); }

Tape::Var Tape::matmul(Var a, Var b) {
  Mat out = value(a) * value(b);
  bool track = tracked(a) || tracked(b);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      const Mat& g = grad(res);
      if (tracked(a)) grad_ref(a).noalias() += g * value(b).transpose();
      if (tracked(b)) grad_ref(b).noalias() += value(a).transpose() * g;
    };
  }
  return res;
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  Mat out = value(a) * value(b).transpose();
  bool track = tracked(a) || tracked(b);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      const Mat& g = grad(res);
      if (tracked(a)) grad_ref(a).noalias() += g * value(b);
      if (tracked(b)) grad_ref(b).noalias() += g.transpose() * value(a);
    };
  }
  return res;
}

Tape::Var Tape::add(Var a, Var b) {
  bool track = tracked(a) || tracked(b);
  Var res = push(value(a) + value(b), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      if (tracked(a)) grad_ref(a) += grad(res);
      if (tracked(b)) grad_ref(b) += grad(res);
    };
  }
  return res;
}

Tape::Var Tape::sub(Var a, Var b) {
  bool track = tracked(a) || tracked(b);
  Var res = push(value(a) - value(b), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      if (tracked(a)) grad_ref(a) += grad(res);
      if (tracked(b)) grad_ref(b) -= grad(res);
    };
  }
  return res;
}

Tape::Var Tape::add_rowvec(Var m, Var row) {
  Mat out = value(m).rowwise() + value(row).row(0);
  bool track = tracked(m) || tracked(row);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, m, row, res] {
      if (tracked(m)) grad_ref(m) += grad(res);
      if (tracked(row)) grad_ref(row) += grad(res).colwise().sum();
    };
  }
  return res;
}

Tape::Var Tape::scale(Var a, double s) {
  bool track = tracked(a);
  Var res = push(value(a) * s, track);
  if (track) {
    nodes_.back().back = [this, a, s, res] { grad_ref(a) += s * grad(res); };
  }
  return res;
}

Tape::Var Tape::hadamard(Var a, Var b) {
  bool track = tracked(a) || tracked(b);
  Var res = push(value(a).cwiseProduct(value(b)), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      if (tracked(a)) grad_ref(a) += grad(res).cwiseProduct(value(b));
      if (tracked(b)) grad_ref(b) += grad(res).cwiseProduct(value(a));
    };
  }
  return res;
}

Tape::Var Tape::gelu(Var a) {
  const double c = std::sqrt(2.0 / M_PI);
  const Mat& x = value(a);
  Mat out = x.unaryExpr([c](double v) {
    return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
  });
  bool track = tracked(a);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, c, res] {
      const Mat& x = value(a);
      Mat d = x.unaryExpr([c](double v) {
        double u = c * (v + 0.044715 * v * v * v);
        double t = std::tanh(u);
        double du = c * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
      grad_ref(a) += grad(res).cwiseProduct(d);
    };
  }
  return res;
}

Tape::Var Tape::layer_norm(Var a, Var gain, Var bias, double eps) {
  const Mat& x = value(a);
  const int rows = static_cast<int>(x.rows());
  const int cols = static_cast<int>(x.cols());
  Mat normed(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(i) = is;
    normed.row(i) = (x.row(i).array() - mu) * is;
  }
  Mat out = (normed.array().rowwise() * value(gain).row(0).array()).rowwise() +
            value(bias).row(0).array();
  bool track = tracked(a) || tracked(gain) || tracked(bias);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, gain, bias, res, normed, inv_std] {
      const Mat& g = grad(res);
      const int cols = static_cast<int>(g.cols());
      if (tracked(gain)) grad_ref(gain) += g.cwiseProduct(normed).colwise().sum();
      if (tracked(bias)) grad_ref(bias) += g.colwise().sum();
      if (tracked(a)) {
        Mat& ga = grad_ref(a);
        for (int i = 0; i < g.rows(); ++i) {
          Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(value(gain).row(0));
          double sum_dxhat = dxhat.sum();
          double dot = dxhat.cwiseProduct(normed.row(i)).sum();
          ga.row(i) += inv_std(i) *
                       (dxhat.array() - sum_dxhat / cols -
                        normed.row(i).array() * (dot / cols))
                           .matrix();
        }
      }
    };
  }
  return res;
}

Tape::Var Tape::softmax_rows(Var a, const Mat& additive_mask) {
  Mat logits = value(a) + additive_mask;
  Mat probs(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e =
        (logits.row(i).array() - mx).exp().matrix();
    for (int j = 0; j < e.size(); ++j) {
      if (logits(i, j) == kNegInf) e(j) = 0.0;
    }
    probs.row(i) = e / e.sum();
  }
  bool track = tracked(a);
  Var res = push(std::move(probs), track);
  if (track) {
    nodes_.back().back = [this, a, res] {
      const Mat& p = value(res);
      const Mat& g = grad(res);
      Mat& ga = grad_ref(a);
      for (int i = 0; i < p.rows(); ++i) {
        double dot = g.row(i).cwiseProduct(p.row(i)).sum();
        ga.row(i) += p.row(i).cwiseProduct(g.row(i).array().matrix() -
                                           Eigen::RowVectorXd::Constant(p.cols(), dot));
      }
    };
  }
  return res;
}

Tape::Var Tape::gather_rows(Var a, const std::vector<int>& rows) {
  Mat out(static_cast<int>(rows.size()), value(a).cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int>(i)) = value(a).row(rows[i]);
  bool track = tracked(a);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, rows, res] {
      const Mat& g = grad(res);
      Mat& ga = grad_ref(a);
      for (size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<int>(i));
    };
  }
  return res;
}

Tape::Var Tape::concat_cols(Var a, Var b) {
  Mat out(value(a).rows(), value(a).cols() + value(b).cols());
  out << value(a), value(b);
  bool track = tracked(a) || tracked(b);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      const Mat& g = grad(res);
      int ca = static_cast<int>(value(a).cols());
      if (tracked(a)) grad_ref(a) += g.leftCols(ca);
      if (tracked(b)) grad_ref(b) += g.rightCols(g.cols() - ca);
    };
  }
  return res;
}

Tape::Var Tape::concat_rows(Var a, Var b) {
  Mat out(value(a).rows() + value(b).rows(), value(a).cols());
  out << value(a), value(b);
  bool track = tracked(a) || tracked(b);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, b, res] {
      const Mat& g = grad(res);
      int ra = static_cast<int>(value(a).rows());
      if (tracked(a)) grad_ref(a) += g.topRows(ra);
      if (tracked(b)) grad_ref(b) += g.bottomRows(g.rows() - ra);
    };
  }
  return res;
}

Tape::Var Tape::slice_cols(Var a, int begin, int count) {
  bool track = tracked(a);
  Var res = push(value(a).middleCols(begin, count), track);
  if (track) {
    nodes_.back().back = [this, a, begin, count, res] {
      grad_ref(a).middleCols(begin, count) += grad(res);
    };
  }
  return res;
}

Tape::Var Tape::masked_log_softmax_pick(Var a, const Mat& additive_mask,
                                        const std::vector<int>& picks) {
  Mat logits = value(a) + additive_mask;
  const int rows = static_cast<int>(logits.rows());
  Mat probs(rows, logits.cols());
  Mat out(rows, 1);
  for (int i = 0; i < rows; ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    for (int j = 0; j < e.size(); ++j) {
      if (logits(i, j) == kNegInf) e(j) = 0.0;
    }
    double z = e.sum();
    probs.row(i) = e / z;
    out(i, 0) = logits(i, picks[static_cast<size_t>(i)]) - (mx + std::log(z));
  }
  bool track = tracked(a);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, picks, probs, res] {
      const Mat& g = grad(res);
      Mat& ga = grad_ref(a);
      for (int i = 0; i < g.rows(); ++i) {
        ga.row(i) -= g(i, 0) * probs.row(i);
        ga(i, picks[static_cast<size_t>(i)]) += g(i, 0);
      }
    };
  }
  return res;
}

Tape::Var Tape::sum(Var a) {
  bool track = tracked(a);
  Var res = push(Mat::Constant(1, 1, value(a).sum()), track);
  if (track) {
    nodes_.back().back = [this, a, res] {
      grad_ref(a).array() += grad(res)(0, 0);
    };
  }
  return res;
}

Tape::Var Tape::weighted_sum(Var a, const Mat& weights) {
  bool track = tracked(a);
  Var res = push(Mat::Constant(1, 1, value(a).cwiseProduct(weights).sum()), track);
  if (track) {
    nodes_.back().back = [this, a, weights, res] {
      grad_ref(a) += grad(res)(0, 0) * weights;
    };
  }
  return res;
}

Tape::Var Tape::mean(Var a) {
  double n = static_cast<double>(value(a).size());
  return scale(sum(a), 1.0 / n);
}

Tape::Var Tape::sigmoid(Var a) {
  Mat out = value(a).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  bool track = tracked(a);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, res] {
      const Mat& s = value(res);
      grad_ref(a) += grad(res).cwiseProduct(
          s.cwiseProduct(Mat::Ones(s.rows(), s.cols()) - s));
    };
  }
  return res;
}

Tape::Var Tape::log_sigmoid(Var a) {
  Mat out = value(a).unaryExpr([](double v) {
    return v < 0.0 ? v - std::log1p(std::exp(v)) : -std::log1p(std::exp(-v));
  });
  bool track = tracked(a);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, res] {
      Mat d = value(a).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(v)); });
      grad_ref(a) += grad(res).cwiseProduct(d);  // d/dx log sigmoid = sigmoid(-x)
    };
  }
  return res;
}

Tape::Var Tape::exp(Var a) {
  Mat out = value(a).array().exp().matrix();
  bool track = tracked(a);
  Var res = push(std::move(out), track);
  if (track) {
    nodes_.back().back = [this, a, res] {
      grad_ref(a) += grad(res).cwiseProduct(value(res));
    };
  }
  return res;
}

Tape::Var Tape::clipped_surrogate(Var delta, const Mat& advantages, double clip_eps,
                                  double kl_beta) {
  const Mat& d = value(delta);
  const int rows = static_cast<int>(d.rows());
  double total = 0.0;
  Mat ddelta = Mat::Zero(rows, 1);
  for (int i = 0; i < rows; ++i) {
    double rho = std::exp(d(i, 0));
    double adv = advantages(i, 0);
    double clipped_rho = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
    double unclipped = rho * adv;
    double clipped = clipped_rho * adv;
    if (unclipped <= clipped) {
      total += unclipped;
      ddelta(i, 0) += rho * adv;  // d(rho*A)/d(delta) = rho*A
    } else {
      total += clipped;  // clip saturated; zero slope
    }
    total -= kl_beta * (1.0 / rho + d(i, 0) - 1.0);
    ddelta(i, 0) -= kl_beta * (1.0 - 1.0 / rho);
  }
  double inv_n = rows > 0 ? 1.0 / rows : 0.0;
  bool track = tracked(delta);
  Var res = push(Mat::Constant(1, 1, total * inv_n), track);
  if (track) {
    nodes_.back().back = [this, delta, ddelta, inv_n, res] {
      grad_ref(delta) += grad(res)(0, 0) * inv_n * ddelta;
    };
  }
  return res;
}

void Tape::backward(Var root) {
  Node& r = nodes_[static_cast<size_t>(root.idx)];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw std::invalid_argument("backward root must be scalar");
  }
  if (!r.requires_grad) return;
  r.grad(0, 0) = 1.0;
  for (int i = root.idx; i >= 0; --i) {
    Node& node = nodes_[static_cast<size_t>(i)];
    if (node.back && node.requires_grad) node.back();
  }
}

}  // namespace sketchalign::ad
