#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace sketchalign::ad {

using Mat = Eigen::MatrixXd;

/// Reverse-mode tape over dense matrices. Build a forward graph, call
/// backward() on a 1x1 root, then read gradients off any tracked node.
class Tape {
 public:
  struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
  };

  /// Untracked constant.
  Var constant(Mat value);
  /// Gradient-tracked leaf (parameters).
  Var leaf(Mat value);

  const Mat& value(Var v) const { return nodes_[static_cast<size_t>(v.idx)].value; }
  const Mat& grad(Var v) const { return nodes_[static_cast<size_t>(v.idx)].grad; }

  Var matmul(Var a, Var b);     // A * B
  Var matmul_nt(Var a, Var b);  // A * B^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_rowvec(Var m, Var row);  // broadcast a 1xC row over all rows
  Var scale(Var a, double s);
  Var hadamard(Var a, Var b);
  Var gelu(Var a);
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
  /// Row-wise softmax of (a + mask); use -inf mask entries to forbid columns.
  Var softmax_rows(Var a, const Mat& additive_mask);
  Var gather_rows(Var a, const std::vector<int>& rows);
  Var concat_cols(Var a, Var b);
  Var concat_rows(Var a, Var b);
  Var slice_cols(Var a, int begin, int count);
  /// Per-row log softmax of (a + mask) evaluated at one picked column:
  /// out(i,0) = log softmax(a.row(i) + mask.row(i))[picks[i]].
  Var masked_log_softmax_pick(Var a, const Mat& additive_mask, const std::vector<int>& picks);
  Var sum(Var a);                        // 1x1
  Var weighted_sum(Var a, const Mat& weights);  // 1x1, sum(A .* W)
  Var mean(Var a);                       // 1x1
  Var sigmoid(Var a);
  Var log_sigmoid(Var a);
  Var exp(Var a);

  /// Mean over rows of the clipped surrogate with ratio-form KL:
  ///   mean_t[ min(rho_t*A_t, clip(rho_t,1-eps,1+eps)*A_t)
  ///           - kl_beta*(1/rho_t + log rho_t - 1) ],  rho_t = exp(delta(t)).
  /// `delta` holds log pi_theta - log pi_ref per row.
  Var clipped_surrogate(Var delta, const Mat& advantages, double clip_eps, double kl_beta);

  void backward(Var root);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;
    bool requires_grad = false;
  };

  Var push(Mat value, bool requires_grad, std::function<void()> back = {});
  Mat& grad_ref(Var v) { return nodes_[static_cast<size_t>(v.idx)].grad; }
  bool tracked(Var v) const { return nodes_[static_cast<size_t>(v.idx)].requires_grad; }

  std::vector<Node> nodes_;
};

}  // namespace sketchalign::ad
