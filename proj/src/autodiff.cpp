#include "mvd/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "mvd/common.hpp"

namespace mvd::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), record_, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::make(Matrix value, std::initializer_list<Var> inputs,
               std::function<void(const Matrix&)> back) {
  return make(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(back));
}

Var Tape::make(Matrix value, std::span<const Var> inputs, std::function<void(const Matrix&)> back) {
  bool needs = false;
  if (record_) {
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(back) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::ensure_grad(Node& n) {
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

std::size_t Tape::bytes() const {
  std::size_t n = 0;
  for (const Node& node : nodes_) {
    n += sizeof(double) * static_cast<std::size_t>(node.value.size() + node.grad.size());
  }
  return n;
}

void Tape::backward(const Var& scalar) {
  Node& root = nodes_[scalar.id()];
  require(root.value.size() == 1, "backward() needs a scalar");
  if (!root.needs_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (int i = scalar.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() != 0) n.back(n.grad);
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& tape = *a.tape();
  Matrix out = a.value() * b.value();
  return tape.make(std::move(out), {a, b}, [a, b, &tape](const Matrix& g) {
    if (tape.needs_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.needs_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape& tape = *a.tape();
  return tape.make(a.value() + b.value(), {a, b}, [a, b, &tape](const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var add_row(const Var& x, const Var& row) {
  require(row.rows() == 1 && row.cols() == x.cols(), "add_row: shape mismatch");
  Tape& tape = *x.tape();
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  return tape.make(std::move(out), {x, row}, [x, row, &tape](const Matrix& g) {
    tape.accumulate(x, g);
    if (tape.needs_grad(row)) tape.accumulate(row, g.colwise().sum());
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x.cols() == weight.rows(), "linear: input width differs from weight rows");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape");
  Tape& tape = *x.tape();
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape.make(std::move(out), {x, weight, bias}, [x, weight, bias, &tape](const Matrix& g) {
    if (tape.needs_grad(x)) tape.accumulate(x, g * weight.value().transpose());
    if (tape.needs_grad(weight)) tape.accumulate(weight, x.value().transpose() * g);
    if (tape.needs_grad(bias)) tape.accumulate(bias, g.colwise().sum());
  });
}

Var scale(const Var& x, double s) {
  Tape& tape = *x.tape();
  return tape.make(x.value() * s, {x}, [x, s, &tape](const Matrix& g) { tape.accumulate(x, g * s); });
}

Var silu(const Var& x) {
  Tape& tape = *x.tape();
  const Matrix& in = x.value();
  Matrix out(in.rows(), in.cols());
  const Eigen::Index n = in.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = in.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  return tape.make(std::move(out), {x}, [x, &tape](const Matrix& g) {
    const Matrix& in = x.value();
    tape.accumulate_with(x, [&](Matrix& dx) {
      const Eigen::Index n = in.size();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = in.data()[i];
        const double s = 1.0 / (1.0 + std::exp(-v));
        dx.data()[i] += g.data()[i] * s * (1.0 + v * (1.0 - s));
      }
    });
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index d = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d,
          "layer_norm: parameter shape");
  Tape& tape = *x.tape();
  const Matrix& in = x.value();
  Matrix xhat(in.rows(), d);
  std::vector<double> inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mean) * inv_std[r];
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return tape.make(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                    &tape](const Matrix& g) {
                     if (tape.needs_grad(gamma)) {
                       tape.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                     }
                     if (tape.needs_grad(beta)) tape.accumulate(beta, g.colwise().sum());
                     if (!tape.needs_grad(x)) return;
                     const Eigen::Index d = xhat.cols();
                     Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
                     Matrix dx(xhat.rows(), d);
                     for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                       const double s1 = dxhat.row(r).sum();
                       const double s2 = dxhat.row(r).dot(xhat.row(r));
                       dx.row(r) = (inv_std[r] / d) *
                                   (d * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
                     }
                     tape.accumulate(x, dx);
                   });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape& tape = *parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.make(std::move(out), parts, [inputs, offsets, &tape](const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (tape.needs_grad(inputs[i])) {
        tape.accumulate(inputs[i], g.middleCols(offsets[i], inputs[i].cols()));
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Tape& tape = *parts[0].tape();
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.make(std::move(out), parts, [inputs, offsets, &tape](const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (tape.needs_grad(inputs[i])) {
        tape.accumulate(inputs[i], g.middleRows(offsets[i], inputs[i].rows()));
      }
    }
  });
}

Var select_rows(const Var& x, std::vector<int> rows) {
  Tape& tape = *x.tape();
  const Matrix& in = x.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), in.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < in.rows(), "select_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = in.row(rows[i]);
  }
  return tape.make(std::move(out), {x}, [x, rows = std::move(rows), &tape](const Matrix& g) {
    tape.accumulate_with(x, [&](Matrix& dx) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        dx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      }
    });
  });
}

Var mse(const Var& pred, const Matrix& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse: shape mismatch");
  Tape& tape = *pred.tape();
  Matrix diff = pred.value() - target;
  const double n = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return tape.make(std::move(out), {pred}, [pred, diff = std::move(diff), n, &tape](const Matrix& g) {
    tape.accumulate(pred, diff * (2.0 * g(0, 0) / n));
  });
}

// ---------------------------------------------------------------------------

namespace {

Matrix im2col(const Matrix& in, const ConvSpec& s) {
  const int cin = static_cast<int>(in.cols());
  const int oh = s.out_height();
  const int ow = s.out_width();
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(oh) * ow,
                            static_cast<Eigen::Index>(s.kernel) * s.kernel * cin);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* dst = col.data() + (static_cast<Eigen::Index>(oy) * ow + ox) * col.cols();
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride + ky - s.pad;
        if (iy < 0 || iy >= s.height) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride + kx - s.pad;
          if (ix < 0 || ix >= s.width) continue;
          const double* src = in.data() + (static_cast<Eigen::Index>(iy) * s.width + ix) * cin;
          std::copy(src, src + cin, dst + (ky * s.kernel + kx) * cin);
        }
      }
    }
  }
  return col;
}

void col2im_add(const Matrix& col, const ConvSpec& s, Matrix& dx) {
  const int cin = static_cast<int>(dx.cols());
  const int oh = s.out_height();
  const int ow = s.out_width();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* src = col.data() + (static_cast<Eigen::Index>(oy) * ow + ox) * col.cols();
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride + ky - s.pad;
        if (iy < 0 || iy >= s.height) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride + kx - s.pad;
          if (ix < 0 || ix >= s.width) continue;
          double* dst = dx.data() + (static_cast<Eigen::Index>(iy) * s.width + ix) * cin;
          const double* from = src + (ky * s.kernel + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += from[c];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  require(x.rows() == static_cast<Eigen::Index>(spec.height) * spec.width,
          "conv2d: input rows differ from height*width");
  require(weight.rows() == spec.kernel * spec.kernel * x.cols(), "conv2d: weight rows");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "conv2d: bias shape");
  Tape& tape = *x.tape();
  Matrix col = im2col(x.value(), spec);
  Matrix out = col * weight.value();
  out.rowwise() += bias.value().row(0);
  if (!tape.recording()) col.resize(0, 0);
  return tape.make(std::move(out), {x, weight, bias},
                   [x, weight, bias, spec, col = std::move(col), &tape](const Matrix& g) {
                     if (tape.needs_grad(weight)) tape.accumulate(weight, col.transpose() * g);
                     if (tape.needs_grad(bias)) tape.accumulate(bias, g.colwise().sum());
                     if (tape.needs_grad(x)) {
                       const Matrix dcol = g * weight.value().transpose();
                       tape.accumulate_with(x, [&](Matrix& dx) { col2im_add(dcol, spec, dx); });
                     }
                   });
}

Var upsample_nearest2x(const Var& x, int height, int width) {
  require(x.rows() == static_cast<Eigen::Index>(height) * width, "upsample: input rows");
  Tape& tape = *x.tape();
  const Matrix& in = x.value();
  const int ow = 2 * width;
  Matrix out(static_cast<Eigen::Index>(4) * height * width, in.cols());
  for (int y = 0; y < 2 * height; ++y) {
    for (int xx = 0; xx < ow; ++xx) {
      out.row(static_cast<Eigen::Index>(y) * ow + xx) = in.row((y / 2) * width + xx / 2);
    }
  }
  return tape.make(std::move(out), {x}, [x, height, width, &tape](const Matrix& g) {
    tape.accumulate_with(x, [&](Matrix& dx) {
      const int ow = 2 * width;
      for (int y = 0; y < 2 * height; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          dx.row((y / 2) * width + xx / 2) += g.row(static_cast<Eigen::Index>(y) * ow + xx);
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------

Var grouped_attention(const Var& q, const Var& k, const Var& v, const AttentionShape& s,
                      std::span<const std::uint8_t> key_mask) {
  const Eigen::Index dm = q.cols();
  require(k.cols() == dm && v.cols() == dm, "attention: model widths differ");
  require(q.rows() == static_cast<Eigen::Index>(s.groups) * s.query_len, "attention: query rows");
  require(k.rows() == static_cast<Eigen::Index>(s.groups) * s.key_len &&
              v.rows() == k.rows(),
          "attention: key rows");
  require(s.heads >= 1 && dm % s.heads == 0, "attention: width not divisible by heads");
  require(key_mask.empty() || key_mask.size() == static_cast<std::size_t>(k.rows()),
          "attention: key mask size");
  Tape& tape = *q.tape();
  const int dh = static_cast<int>(dm / s.heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* Q = q.value().data();
  const double* K = k.value().data();
  const double* V = v.value().data();

  // probs[((g * heads + h) * lq + i) * lk + j]
  std::vector<double> probs(static_cast<std::size_t>(s.groups) * s.heads * s.query_len * s.key_len,
                            0.0);
  Matrix out = Matrix::Zero(q.rows(), dm);
  std::vector<double> scores(s.key_len);
  for (int g = 0; g < s.groups; ++g) {
    const std::uint8_t* mask =
        key_mask.empty() ? nullptr : key_mask.data() + static_cast<std::size_t>(g) * s.key_len;
    for (int h = 0; h < s.heads; ++h) {
      for (int i = 0; i < s.query_len; ++i) {
        const Eigen::Index qi = static_cast<Eigen::Index>(g) * s.query_len + i;
        const double* qrow = Q + qi * dm + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < s.key_len; ++j) {
          if (mask && !mask[j]) continue;
          const double* krow = K + (static_cast<Eigen::Index>(g) * s.key_len + j) * dm + h * dh;
          double dot = 0.0;
          for (int c = 0; c < dh; ++c) dot += qrow[c] * krow[c];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        if (!std::isfinite(mx)) continue;
        double* p = probs.data() + ((static_cast<std::size_t>(g) * s.heads + h) * s.query_len + i) *
                                       s.key_len;
        double denom = 0.0;
        for (int j = 0; j < s.key_len; ++j) {
          if (mask && !mask[j]) continue;
          p[j] = std::exp(scores[j] - mx);
          denom += p[j];
        }
        double* orow = out.data() + qi * dm + h * dh;
        for (int j = 0; j < s.key_len; ++j) {
          p[j] /= denom;
          if (p[j] == 0.0) continue;
          const double* vrow = V + (static_cast<Eigen::Index>(g) * s.key_len + j) * dm + h * dh;
          for (int c = 0; c < dh; ++c) orow[c] += p[j] * vrow[c];
        }
      }
    }
  }

  return tape.make(
      std::move(out), {q, k, v},
      [q, k, v, s, dh, inv_sqrt, probs = std::move(probs), &tape](const Matrix& g_out) {
        const Eigen::Index dm = q.cols();
        const double* Q = q.value().data();
        const double* K = k.value().data();
        const double* V = v.value().data();
        const double* G = g_out.data();
        Matrix dQ = Matrix::Zero(q.rows(), dm);
        Matrix dK = Matrix::Zero(k.rows(), dm);
        Matrix dV = Matrix::Zero(v.rows(), dm);
        std::vector<double> dp(s.key_len);
        for (int g = 0; g < s.groups; ++g) {
          for (int h = 0; h < s.heads; ++h) {
            for (int i = 0; i < s.query_len; ++i) {
              const Eigen::Index qi = static_cast<Eigen::Index>(g) * s.query_len + i;
              const double* p =
                  probs.data() +
                  ((static_cast<std::size_t>(g) * s.heads + h) * s.query_len + i) * s.key_len;
              const double* grow = G + qi * dm + h * dh;
              double dot_pdp = 0.0;
              for (int j = 0; j < s.key_len; ++j) {
                if (p[j] == 0.0) {
                  dp[j] = 0.0;
                  continue;
                }
                const Eigen::Index kj = static_cast<Eigen::Index>(g) * s.key_len + j;
                const double* vrow = V + kj * dm + h * dh;
                double* dvrow = dV.data() + kj * dm + h * dh;
                double acc = 0.0;
                for (int c = 0; c < dh; ++c) {
                  acc += grow[c] * vrow[c];
                  dvrow[c] += p[j] * grow[c];
                }
                dp[j] = acc;
                dot_pdp += p[j] * acc;
              }
              const double* qrow = Q + qi * dm + h * dh;
              double* dqrow = dQ.data() + qi * dm + h * dh;
              for (int j = 0; j < s.key_len; ++j) {
                if (p[j] == 0.0) continue;
                const double ds = p[j] * (dp[j] - dot_pdp) * inv_sqrt;
                const Eigen::Index kj = static_cast<Eigen::Index>(g) * s.key_len + j;
                const double* krow = K + kj * dm + h * dh;
                double* dkrow = dK.data() + kj * dm + h * dh;
                for (int c = 0; c < dh; ++c) {
                  dqrow[c] += ds * krow[c];
                  dkrow[c] += ds * qrow[c];
                }
              }
            }
          }
        }
        tape.accumulate(q, dQ);
        tape.accumulate(k, dK);
        tape.accumulate(v, dV);
      });
}

Var masked_softmax_pool(const Var& logits, const Var& values, int len,
                        std::span<const std::uint8_t> mask, std::vector<double>* weights_out) {
  require(logits.cols() == 1 && logits.rows() == values.rows(), "softmax_pool: logits shape");
  require(len >= 1 && values.rows() % len == 0, "softmax_pool: rows not a multiple of len");
  require(mask.empty() || mask.size() == static_cast<std::size_t>(values.rows()),
          "softmax_pool: mask size");
  Tape& tape = *logits.tape();
  const Eigen::Index groups = values.rows() / len;
  const Matrix& L = logits.value();
  const Matrix& X = values.value();
  std::vector<double> w(static_cast<std::size_t>(values.rows()), 0.0);
  Matrix out = Matrix::Zero(groups, X.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < len; ++j) {
      const Eigen::Index r = g * len + j;
      if (!mask.empty() && !mask[r]) continue;
      mx = std::max(mx, L(r, 0));
    }
    if (!std::isfinite(mx)) continue;
    double denom = 0.0;
    for (int j = 0; j < len; ++j) {
      const Eigen::Index r = g * len + j;
      if (!mask.empty() && !mask[r]) continue;
      w[r] = std::exp(L(r, 0) - mx);
      denom += w[r];
    }
    for (int j = 0; j < len; ++j) {
      const Eigen::Index r = g * len + j;
      w[r] /= denom;
      if (w[r] != 0.0) out.row(g) += w[r] * X.row(r);
    }
  }
  if (weights_out) *weights_out = w;
  return tape.make(std::move(out), {logits, values},
                   [logits, values, len, w = std::move(w), &tape](const Matrix& g) {
                     const Matrix& X = values.value();
                     const Eigen::Index groups = X.rows() / len;
                     Matrix dL = Matrix::Zero(X.rows(), 1);
                     Matrix dX = Matrix::Zero(X.rows(), X.cols());
                     for (Eigen::Index gi = 0; gi < groups; ++gi) {
                       double mean_dw = 0.0;
                       for (int j = 0; j < len; ++j) {
                         const Eigen::Index r = gi * len + j;
                         if (w[r] == 0.0) continue;
                         const double dw = g.row(gi).dot(X.row(r));
                         dL(r, 0) = dw;
                         mean_dw += w[r] * dw;
                         dX.row(r) = w[r] * g.row(gi);
                       }
                       for (int j = 0; j < len; ++j) {
                         const Eigen::Index r = gi * len + j;
                         dL(r, 0) = w[r] == 0.0 ? 0.0 : w[r] * (dL(r, 0) - mean_dw);
                       }
                     }
                     tape.accumulate(logits, dL);
                     tape.accumulate(values, dX);
                   });
}

Var append_group_token(const Var& x, const Var& token, int len) {
  require(token.rows() == 1 && token.cols() == x.cols(), "append_group_token: token shape");
  require(len >= 1 && x.rows() % len == 0, "append_group_token: rows not a multiple of len");
  Tape& tape = *x.tape();
  const Eigen::Index groups = x.rows() / len;
  Matrix out(groups * (len + 1), x.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    out.middleRows(g * (len + 1), len) = x.value().middleRows(g * len, len);
    out.row(g * (len + 1) + len) = token.value().row(0);
  }
  return tape.make(std::move(out), {x, token}, [x, token, len, groups, &tape](const Matrix& g) {
    tape.accumulate_with(x, [&](Matrix& dx) {
      for (Eigen::Index gi = 0; gi < groups; ++gi) {
        dx.middleRows(gi * len, len) += g.middleRows(gi * (len + 1), len);
      }
    });
    tape.accumulate_with(token, [&](Matrix& dt) {
      for (Eigen::Index gi = 0; gi < groups; ++gi) dt.row(0) += g.row(gi * (len + 1) + len);
    });
  });
}

Var bilinear_gather(std::span<const Var> sources, std::vector<GatherTap> taps) {
  require(!sources.empty(), "bilinear_gather: no sources");
  Tape& tape = *sources[0].tape();
  const Eigen::Index cols = sources[0].cols();
  for (const Var& s : sources) require(s.cols() == cols, "bilinear_gather: source widths differ");
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(taps.size()), cols);
  for (std::size_t r = 0; r < taps.size(); ++r) {
    const GatherTap& tap = taps[r];
    if (tap.source < 0) continue;
    require(tap.source < static_cast<int>(sources.size()), "bilinear_gather: bad source");
    const Matrix& src = sources[tap.source].value();
    for (int k = 0; k < 4; ++k) {
      if (tap.weight[k] != 0.0) out.row(static_cast<Eigen::Index>(r)) += tap.weight[k] * src.row(tap.index[k]);
    }
  }
  std::vector<Var> inputs(sources.begin(), sources.end());
  return tape.make(std::move(out), sources, [inputs, taps = std::move(taps), &tape](const Matrix& g) {
    for (std::size_t si = 0; si < inputs.size(); ++si) {
      tape.accumulate_with(inputs[si], [&](Matrix& dx) {
        for (std::size_t r = 0; r < taps.size(); ++r) {
          const GatherTap& tap = taps[r];
          if (tap.source != static_cast<int>(si)) continue;
          for (int k = 0; k < 4; ++k) {
            if (tap.weight[k] != 0.0) dx.row(tap.index[k]) += tap.weight[k] * g.row(static_cast<Eigen::Index>(r));
          }
        }
      });
    }
  });
}

Matrix timestep_embedding(int t, int dim) {
  Matrix out = Matrix::Zero(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out(0, i) = std::sin(t * freq);
    out(0, half + i) = std::cos(t * freq);
  }
  return out;
}

}  // namespace mvd::nn
