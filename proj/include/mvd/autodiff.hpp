#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace mvd::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Ops append nodes in evaluation order; backward() walks
// them in reverse. With recording disabled the same ops only compute values.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var variable(Matrix value);

  // Appends a node computed from `inputs`. `back` receives the gradient of
  // the node and must accumulate into the inputs via accumulate().
  Var make(Matrix value, std::initializer_list<Var> inputs,
           std::function<void(const Matrix&)> back);
  Var make(Matrix value, std::span<const Var> inputs, std::function<void(const Matrix&)> back);

  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  void accumulate(const Var& v, const Matrix& g);
  template <typename Fn>
  void accumulate_with(const Var& v, Fn&& fn) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    ensure_grad(n);
    fn(n.grad);
  }

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  // Gradient after backward(); zero matrix when nothing reached the node.
  Matrix grad(const Var& v) const;

  void backward(const Var& scalar);

  std::size_t size() const { return nodes_.size(); }
  // Bytes held by node values and gradients.
  std::size_t bytes() const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(const Matrix&)> back;
  };

  void ensure_grad(Node& n);

  bool record_;
  std::deque<Node> nodes_;
};

// ---- elementwise / dense -------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& row);  // x + broadcast(row), row is 1 x C
Var linear(const Var& x, const Var& weight, const Var& bias);
Var scale(const Var& x, double s);
Var silu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var select_rows(const Var& x, std::vector<int> rows);
Var mse(const Var& pred, const Matrix& target);

// ---- image ops on (H*W) x C matrices -------------------------------------
struct ConvSpec {
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// weight is (kernel*kernel*Cin) x Cout, ordered (ky, kx, cin).
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);
Var upsample_nearest2x(const Var& x, int height, int width);

// ---- grouped attention -----------------------------------------------------
// Rows are grouped: group g owns query rows [g*lq, (g+1)*lq) and key/value
// rows [g*lk, (g+1)*lk). key_mask (size groups*lk, may be empty) disables
// keys; a query whose keys are all masked produces zeros.
struct AttentionShape {
  int groups = 0;
  int query_len = 0;
  int key_len = 0;
  int heads = 1;
};
Var grouped_attention(const Var& q, const Var& k, const Var& v, const AttentionShape& shape,
                      std::span<const std::uint8_t> key_mask);

// Softmax over logits within each group of `len` rows (masked rows excluded),
// then the weighted sum of `values` rows. Output is groups x C. If `weights`
// is non-null it receives the per-row weights (zero for masked rows).
Var masked_softmax_pool(const Var& logits, const Var& values, int len,
                        std::span<const std::uint8_t> mask, std::vector<double>* weights);

// Inserts `token` (1 x d) after every group of `len` rows.
Var append_group_token(const Var& x, const Var& token, int len);

// ---- bilinear gathering --------------------------------------------------
struct GatherTap {
  int source = -1;  // -1 yields a zero row
  int index[4] = {0, 0, 0, 0};
  double weight[4] = {0, 0, 0, 0};
};
// Row r of the output is sum_k weight[k] * sources[source].row(index[k]).
Var bilinear_gather(std::span<const Var> sources, std::vector<GatherTap> taps);

// Sinusoidal embedding of an integer step: [sin(t w_i), cos(t w_i)],
// w_i = 10000^(-i / (dim/2)).
Matrix timestep_embedding(int t, int dim);

}  // namespace mvd::nn
