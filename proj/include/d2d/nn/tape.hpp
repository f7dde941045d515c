#pragma once

#include <functional>
#include <span>
#include <utility>

#include "d2d/nn/param_store.hpp"

namespace d2d::nn {

// Handle into a tape's node list.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct ConvKernel {
  int width = 0;
  Var weight;  // [width * d, filters], rows are the flattened window
  Var bias;    // [filters]
};

// Define-by-run reverse-mode tape. Forward values are computed eagerly at op
// creation; backward() walks the nodes in reverse creation order. One tape
// per training step (or BPTT block); parameters live in the ParamStore and
// their gradients accumulate there across tapes until sgd_step.
//
// Shapes are rank 1 (vectors) or rank 2 (matrices); reductions return
// rank-1 arrays of length 1. Loss-bound reductions (sum, dot, logsumexp)
// accumulate in double before narrowing.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr, bool train = false, uint64_t dropout_seed = 0)
      : store_(store), train_(train), rng_(dropout_seed) {}

  Var input(Array v);
  Var constant(float v) { return input(Array::vec({v})); }
  // Store-backed leaf; repeated calls with one name share the node.
  Var param(const std::string& name);

  const Array& val(Var v) const { return v_(check(v)); }
  double scalar(Var v) const;
  bool train_mode() const { return train_; }
  int size() const { return int(nodes_.size()); }

  // --- elementwise / scalar ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var relu(Var a);
  Var exp_(Var a);
  Var log_sigmoid(Var a);

  // --- shape & selection ---
  Var concat(std::span<const Var> parts);      // rank-1 parts
  Var concat_cols(std::span<const Var> parts); // rank-2 parts, same row count
  Var slice(Var v, int lo, int hi);            // rank-1
  Var row(Var m, int r);                       // matrix row as vector
  Var rows(Var m, std::span<const int> ids);   // gather rows -> [n, d]
  Var stack_rows(std::span<const Var> rows);   // n vectors [d] -> [n, d]
  Var gather(Var v, std::span<const int> ids); // rank-1 gather

  // --- reductions & linear algebra ---
  Var matmul(Var a, Var b);  // [m,k]x[k,n], [m,k]x[k], [m]x[m,k]
  Var linear(Var x, Var W, Var b);  // x[a] * W[a,b] + b[b]
  Var add_rowwise(Var m, Var b);    // each row of m [n,d] plus b [d]
  Var mean_rows(Var m);
  Var maxpool_rows(Var m);   // column-wise max over rows
  Var reduce_max(Var v);
  Var sum(Var v);
  Var dot(Var a, Var b);
  Var abs_diff_sum(Var a, Var b);  // sum |a - b|

  // --- probability ---
  Var softmax(Var v);
  Var log_softmax(Var v);
  Var logsumexp(Var v);
  Var nll(Var logprobs, int index);                       // -logprobs[index]
  Var marginal_nll(Var logprobs, std::span<const int> index_set);  // -log sum exp over set

  // --- structured / fused ---
  // Standard LSTM cell. x[a], h[k], c[k], W[(a+k), 4k] with gate order
  // (input, forget, cell, output), b[4k]. Returns (h', c').
  std::pair<Var, Var> lstm_cell(Var x, Var h, Var c, Var W, Var b);

  // Temporal conv + ReLU + max-over-time per kernel, concatenated in kernel
  // order. X is [T, d]. When T < width the window is zero-padded at the end.
  Var conv1d_maxpool(Var X, std::span<const ConvKernel> kernels);

  // Inverted dropout: train mode zeroes units w.p. rate and scales survivors
  // by 1/(1-rate); eval mode is the identity.
  Var dropout(Var v, double rate);

  // Accumulates d(loss)/d(param) into the store. loss must be scalar.
  void backward(Var loss);

 private:
  struct Node {
    Array value;
    Array grad;  // allocated on first contribution
    std::function<void()> back;  // null for leaves
    int param = -1;              // ParamStore index for param leaves
  };

  int check(Var v) const;
  // param leaves keep an empty value and read through to the store
  const Array& v_(int id) const {
    const Node& n = nodes_[size_t(id)];
    return n.param >= 0 && n.value.data.empty() ? store_->by_index(n.param).value : n.value;
  }
  Array& g_(int id);                      // ensure-allocated gradient
  bool has_grad(int id) const { return !nodes_[size_t(id)].grad.data.empty(); }
  Var push(Array value, std::function<void()> back = nullptr, int param = -1);
  Var unary(Var a, const char* name, float (*f)(float), float (*df)(float, float));

  ParamStore* store_;
  bool train_;
  Rng rng_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
};

}  // namespace d2d::nn
