#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbsfm/linalg.hpp"
#include "dbsfm/param_store.hpp"

namespace dbsfm::ad {

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

/// Reverse-mode tape over matrix-valued nodes. Operations append nodes in
/// evaluation order; backward() walks them in reverse and accumulates
/// gradients into every node that depends on a parameter.
///
/// A tape is single-use and not thread-safe. Build one per forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Var constant(Matrix value);
  /// Leaf bound to a named tensor. Repeated calls for the same name return the
  /// same node so gradients accumulate in one place.
  Var param(const ParamStore& store, const std::string& name);

  /// Appends an interior node. `parents` decide whether the node needs a
  /// gradient; `fn` receives this node's accumulated gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Adds `delta` into the gradient of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& delta);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& delta);

  /// Gradient of `v` after backward(); an empty matrix means zero.
  const Matrix& grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws StateError when the
  /// tape holds no recorded forward pass, the node is foreign, or backward
  /// already ran; ValidationError when the loss is not 1 x 1; NumericError
  /// when it is not finite.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  /// Gradients laid out like `like`. Tensors the loss does not reach are
  /// zero.
  ParamStore gradients(const ParamStore& like) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
  };
  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

template <typename Expr>
void Tape::accumulate_expr(Var v, const Expr& delta) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

// ---- operations -----------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
/// x + 1 * row, broadcasting a 1 x n row over every row of x.
Var add_row(Tape& t, Var x, Var row);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double factor);
Var relu(Tape& t, Var x);

/// Row-wise layer normalization with learned gain and bias (1 x n each).
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps);

/// Per-head attention weights, recorded when a trace is requested.
struct AttentionMap {
  std::size_t head = 0;
  std::size_t sequence = 0;
  Matrix weights;  ///< positions x positions, rows are queries
};

/// Scaled dot-product attention applied independently to each block of
/// `positions` consecutive rows and each of `heads` column groups. q, k, v
/// are (blocks * positions) x d.
Var multi_head_attention(Tape& t, Var q, Var k, Var v, std::size_t heads, std::size_t positions,
                         std::vector<AttentionMap>* capture = nullptr);

/// Interleaves one copy of the 1 x d `cls` row before every block of
/// `tokens_per_block` rows of `tokens`.
Var prepend_cls(Tape& t, Var cls, Var tokens, std::size_t tokens_per_block);

/// Adds the positions x d table to each block of rows.
Var add_tiled(Tape& t, Var x, Var table);

/// Removes the first row of every block of `positions` rows.
Var drop_cls(Tape& t, Var x, std::size_t positions);

/// sum over flagged rows of |w_j (target_ij - pred_ij)| / normalizer.
Var weighted_masked_abs(Tape& t, Var pred, const Matrix& target, const RowVector& weights,
                        const std::vector<char>& row_flagged, double normalizer);

/// sum of (pred - target)^2 / normalizer over all elements.
Var squared_error(Tape& t, Var pred, const Matrix& target, double normalizer);

// ---- shared numerics (also used directly by tests) ------------------------

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Row-wise standardization (x - mean) / sqrt(var + eps) with population
/// variance.
Matrix normalize_rows(const Matrix& x, double eps);

}  // namespace dbsfm::ad
