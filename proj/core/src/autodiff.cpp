#include "dbsfm/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "dbsfm/error.hpp"

namespace dbsfm::ad {

// ---- tape -----------------------------------------------------------------

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{it->second};
  nodes_.push_back(Node{store.at(name).as_matrix(), Matrix(), nullptr, true});
  param_nodes_.emplace(name, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool needs = false;
  for (Var p : parents) needs = needs || node(p).needs_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(fn) : nullptr, needs});
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).needs_grad; }

void Tape::accumulate(Var v, const Matrix& delta) { accumulate_expr(v, delta); }

const Matrix& Tape::grad(Var v) const { return node(v).grad; }

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward called before any forward pass was recorded");
  if (!loss.valid() || loss.id >= nodes_.size()) throw StateError("loss variable does not belong to this tape");
  if (backward_done_) throw StateError("backward already ran on this tape");
  Node& root = nodes_[loss.id];
  if (root.value.rows() != 1 || root.value.cols() != 1) throw ValidationError("backward needs a scalar loss");
  if (!std::isfinite(root.value(0, 0))) throw NumericError("loss is not finite");
  backward_done_ = true;
  if (!root.needs_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

ParamStore Tape::gradients(const ParamStore& like) const {
  ParamStore out = like.zeros_like();
  for (const auto& name : like.names()) {
    auto it = param_nodes_.find(name);
    if (it == param_nodes_.end()) continue;
    const Matrix& g = nodes_[it->second].grad;
    if (g.size() == 0) continue;
    Tensor& t = out.at(name);
    if (g.rows() != t.rows() || g.cols() != t.cols()) throw StateError("gradient shape mismatch for '" + name + "'");
    t.view() = g;
  }
  return out;
}

// ---- elementary ops -------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw ValidationError("matmul shape mismatch: " + std::to_string(av.rows()) + "x" + std::to_string(av.cols()) +
                          " * " + std::to_string(bv.rows()) + "x" + std::to_string(bv.cols()));
  }
  Matrix y = av * bv;
  return t.record(std::move(y), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(a)) tape.accumulate_expr(a, g * tape.value(b).transpose());
    if (tape.requires_grad(b)) tape.accumulate_expr(b, tape.value(a).transpose() * g);
  });
}

Var add_row(Tape& t, Var x, Var row) {
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw ValidationError("add_row: row width mismatch");
  Matrix y = xv.rowwise() + rv.row(0);
  return t.record(std::move(y), {x, row}, [x, row](Tape& tape, const Matrix& g) {
    tape.accumulate(x, g);
    if (tape.requires_grad(row)) tape.accumulate_expr(row, g.colwise().sum());
  });
}

Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ValidationError("add: shape mismatch");
  Matrix y = av + bv;
  return t.record(std::move(y), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var scale(Tape& t, Var x, double factor) {
  Matrix y = t.value(x) * factor;
  return t.record(std::move(y), {x}, [x, factor](Tape& tape, const Matrix& g) { tape.accumulate_expr(x, g * factor); });
}

Var relu(Tape& t, Var x) {
  Matrix y = t.value(x).cwiseMax(0.0);
  return t.record(std::move(y), {x}, [x](Tape& tape, const Matrix& g) {
    const Matrix& xv = tape.value(x);
    tape.accumulate(x, Matrix((xv.array() > 0.0).select(g.array(), 0.0)));
  });
}

// ---- normalization --------------------------------------------------------

Matrix normalize_rows(const Matrix& x, double eps) {
  const Eigen::Index n = x.cols();
  const Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Vector var = centered.array().square().rowwise().sum() / static_cast<double>(n);
  const Vector inv_std = (var.array() + eps).rsqrt();
  return centered.array().colwise() * inv_std.array();
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  if (gv.cols() != xv.cols() || bv.cols() != xv.cols()) throw ValidationError("layer_norm: width mismatch");

  const Eigen::Index n = xv.cols();
  const Vector mean = xv.rowwise().mean();
  auto xhat = std::make_shared<Matrix>(xv.colwise() - mean);
  const Vector var = xhat->array().square().rowwise().sum() / static_cast<double>(n);
  auto inv_std = std::make_shared<Vector>((var.array() + eps).rsqrt());
  xhat->array().colwise() *= inv_std->array();

  Matrix y = (xhat->array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();
  return t.record(std::move(y), {x, gain, bias}, [x, gain, bias, xhat, inv_std, n](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(gain)) tape.accumulate_expr(gain, (g.array() * xhat->array()).colwise().sum().matrix());
    if (tape.requires_grad(bias)) tape.accumulate_expr(bias, g.colwise().sum());
    if (!tape.requires_grad(x)) return;
    const RowVector gv = tape.value(gain).row(0);
    const Matrix gxhat = g.array().rowwise() * gv.array();
    const Vector mean_g = gxhat.rowwise().mean();
    const Vector mean_gx = (gxhat.array() * xhat->array()).rowwise().sum() / static_cast<double>(n);
    Matrix gx = gxhat.colwise() - mean_g;
    gx -= (xhat->array().colwise() * mean_gx.array()).matrix();
    gx.array().colwise() *= inv_std->array();
    tape.accumulate(x, gx);
  });
}

// ---- attention ------------------------------------------------------------

Matrix softmax_rows(const Matrix& logits) {
  const Vector row_max = logits.rowwise().maxCoeff();
  Matrix e = (logits.colwise() - row_max).array().exp();
  const Vector sums = e.rowwise().sum();
  e.array().colwise() /= sums.array();
  return e;
}

Var multi_head_attention(Tape& t, Var q, Var k, Var v, std::size_t heads, std::size_t positions,
                         std::vector<AttentionMap>* capture) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const Eigen::Index d = qv.cols();
  const auto P = static_cast<Eigen::Index>(positions);
  if (heads == 0 || d % static_cast<Eigen::Index>(heads) != 0) throw ValidationError("attention: width not divisible by heads");
  if (P == 0 || qv.rows() % P != 0) throw ValidationError("attention: rows not a multiple of positions");
  if (kv.rows() != qv.rows() || vv.rows() != qv.rows() || kv.cols() != d || vv.cols() != d)
    throw ValidationError("attention: q/k/v shape mismatch");

  const Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
  const Eigen::Index blocks = qv.rows() / P;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[b * heads + h] holds the P x P weights of block b, head h.
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(blocks) * heads);
  Matrix out(qv.rows(), d);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      const auto qb = qv.block(b * P, c0, P, dh);
      const auto kb = kv.block(b * P, c0, P, dh);
      const auto vb = vv.block(b * P, c0, P, dh);
      Matrix a = softmax_rows((qb * kb.transpose()) * inv_sqrt);
      out.block(b * P, c0, P, dh).noalias() = a * vb;
      if (capture != nullptr) capture->push_back(AttentionMap{h, static_cast<std::size_t>(b), a});
      probs->push_back(std::move(a));
    }
  }

  return t.record(std::move(out), {q, k, v},
                  [q, k, v, probs, heads, P, dh, blocks, inv_sqrt](Tape& tape, const Matrix& g) {
                    const Matrix& qv = tape.value(q);
                    const Matrix& kv = tape.value(k);
                    const Matrix& vv = tape.value(v);
                    Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
                    Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
                    Matrix gv = Matrix::Zero(vv.rows(), vv.cols());
                    for (Eigen::Index b = 0; b < blocks; ++b) {
                      for (std::size_t h = 0; h < heads; ++h) {
                        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
                        const Matrix& a = (*probs)[static_cast<std::size_t>(b) * heads + h];
                        const auto go = g.block(b * P, c0, P, dh);
                        gv.block(b * P, c0, P, dh).noalias() = a.transpose() * go;
                        const Matrix ga = go * vv.block(b * P, c0, P, dh).transpose();
                        const Vector dot = (ga.array() * a.array()).rowwise().sum();
                        const Matrix gs = (a.array() * (ga.colwise() - dot).array()).matrix() * inv_sqrt;
                        gq.block(b * P, c0, P, dh).noalias() = gs * kv.block(b * P, c0, P, dh);
                        gk.block(b * P, c0, P, dh).noalias() = gs.transpose() * qv.block(b * P, c0, P, dh);
                      }
                    }
                    tape.accumulate(q, gq);
                    tape.accumulate(k, gk);
                    tape.accumulate(v, gv);
                  });
}

// ---- sequence bookkeeping -------------------------------------------------

Var prepend_cls(Tape& t, Var cls, Var tokens, std::size_t tokens_per_block) {
  const Matrix& cv = t.value(cls);
  const Matrix& tv = t.value(tokens);
  const auto T = static_cast<Eigen::Index>(tokens_per_block);
  if (cv.rows() != 1 || cv.cols() != tv.cols()) throw ValidationError("prepend_cls: width mismatch");
  if (T == 0 || tv.rows() % T != 0) throw ValidationError("prepend_cls: rows not a multiple of the block size");
  const Eigen::Index blocks = tv.rows() / T;
  Matrix y(blocks * (T + 1), tv.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    y.row(b * (T + 1)) = cv.row(0);
    y.block(b * (T + 1) + 1, 0, T, tv.cols()) = tv.block(b * T, 0, T, tv.cols());
  }
  return t.record(std::move(y), {cls, tokens}, [cls, tokens, T, blocks](Tape& tape, const Matrix& g) {
    const Eigen::Index w = g.cols();
    if (tape.requires_grad(cls)) {
      RowVector gc = RowVector::Zero(w);
      for (Eigen::Index b = 0; b < blocks; ++b) gc += g.row(b * (T + 1));
      tape.accumulate_expr(cls, gc);
    }
    if (tape.requires_grad(tokens)) {
      Matrix gt(blocks * T, w);
      for (Eigen::Index b = 0; b < blocks; ++b) gt.block(b * T, 0, T, w) = g.block(b * (T + 1) + 1, 0, T, w);
      tape.accumulate(tokens, gt);
    }
  });
}

Var add_tiled(Tape& t, Var x, Var table) {
  const Matrix& xv = t.value(x);
  const Matrix& tv = t.value(table);
  const Eigen::Index P = tv.rows();
  if (tv.cols() != xv.cols() || P == 0 || xv.rows() % P != 0) throw ValidationError("add_tiled: shape mismatch");
  const Eigen::Index blocks = xv.rows() / P;
  Matrix y = xv;
  for (Eigen::Index b = 0; b < blocks; ++b) y.block(b * P, 0, P, xv.cols()) += tv;
  return t.record(std::move(y), {x, table}, [x, table, P, blocks](Tape& tape, const Matrix& g) {
    tape.accumulate(x, g);
    if (tape.requires_grad(table)) {
      Matrix gt = Matrix::Zero(P, g.cols());
      for (Eigen::Index b = 0; b < blocks; ++b) gt += g.block(b * P, 0, P, g.cols());
      tape.accumulate(table, gt);
    }
  });
}

Var drop_cls(Tape& t, Var x, std::size_t positions) {
  const Matrix& xv = t.value(x);
  const auto P = static_cast<Eigen::Index>(positions);
  if (P < 1 || xv.rows() % P != 0) throw ValidationError("drop_cls: rows not a multiple of positions");
  const Eigen::Index blocks = xv.rows() / P;
  const Eigen::Index w = xv.cols();
  Matrix y(blocks * (P - 1), w);
  for (Eigen::Index b = 0; b < blocks; ++b) y.block(b * (P - 1), 0, P - 1, w) = xv.block(b * P + 1, 0, P - 1, w);
  return t.record(std::move(y), {x}, [x, P, blocks, w](Tape& tape, const Matrix& g) {
    Matrix gx = Matrix::Zero(blocks * P, w);
    for (Eigen::Index b = 0; b < blocks; ++b) gx.block(b * P + 1, 0, P - 1, w) = g.block(b * (P - 1), 0, P - 1, w);
    tape.accumulate(x, gx);
  });
}

// ---- losses ---------------------------------------------------------------

Var weighted_masked_abs(Tape& t, Var pred, const Matrix& target, const RowVector& weights,
                        const std::vector<char>& row_flagged, double normalizer) {
  const Matrix& pv = t.value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) throw ValidationError("masked loss: shape mismatch");
  if (weights.size() != pv.cols()) throw ValidationError("masked loss: weight length mismatch");
  if (static_cast<Eigen::Index>(row_flagged.size()) != pv.rows()) throw ValidationError("masked loss: mask length mismatch");
  if (!(normalizer > 0.0)) throw ValidationError("masked loss: normalizer must be positive");

  double total = 0.0;
  for (Eigen::Index i = 0; i < pv.rows(); ++i) {
    if (!row_flagged[static_cast<std::size_t>(i)]) continue;
    total += ((target.row(i) - pv.row(i)).array() * weights.array()).abs().sum();
  }
  Matrix y(1, 1);
  y(0, 0) = total / normalizer;

  auto tgt = std::make_shared<Matrix>(target);
  return t.record(std::move(y), {pred},
                  [pred, tgt, weights, row_flagged, normalizer](Tape& tape, const Matrix& g) {
                    const Matrix& pv = tape.value(pred);
                    const double s = g(0, 0) / normalizer;
                    const RowVector abs_w = weights.cwiseAbs();
                    Matrix gp = Matrix::Zero(pv.rows(), pv.cols());
                    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
                      if (!row_flagged[static_cast<std::size_t>(i)]) continue;
                      for (Eigen::Index j = 0; j < pv.cols(); ++j) {
                        const double r = pv(i, j) - (*tgt)(i, j);
                        // Subgradient of |.| at zero is taken as zero.
                        const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
                        gp(i, j) = s * abs_w(j) * sign;
                      }
                    }
                    tape.accumulate(pred, gp);
                  });
}

Var squared_error(Tape& t, Var pred, const Matrix& target, double normalizer) {
  const Matrix& pv = t.value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) throw ValidationError("squared_error: shape mismatch");
  if (!(normalizer > 0.0)) throw ValidationError("squared_error: normalizer must be positive");
  auto resid = std::make_shared<Matrix>(pv - target);
  Matrix y(1, 1);
  y(0, 0) = resid->squaredNorm() / normalizer;
  return t.record(std::move(y), {pred}, [pred, resid, normalizer](Tape& tape, const Matrix& g) {
    tape.accumulate_expr(pred, *resid * (2.0 * g(0, 0) / normalizer));
  });
}

}  // namespace dbsfm::ad
