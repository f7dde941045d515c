#pragma once

#include "d2d/nn/tape.hpp"

namespace d2d::nn {

struct Attention {
  Var scores;   // unnormalized dot products, used raw by the joint copy head
  Var weights;  // softmax(scores)
  Var context;  // weights-averaged keys
};

// Dot-product attention over keys [J,k] with query [k]. Parameterized
// variants pre-transform the query.
inline Attention attention(Tape& t, Var query, Var keys) {
  Attention a;
  a.scores = t.matmul(keys, query);
  a.weights = t.softmax(a.scores);
  a.context = t.matmul(a.weights, keys);
  return a;
}

// Single-layer biLSTM over xs [T,d]; per-step forward/backward states are
// concatenated to [2k] and max-pooled over time.
inline Var bilstm_maxpool(Tape& t, Var xs, Var Wf, Var bf, Var Wb, Var bb) {
  int T = t.val(xs).rows();
  int k = t.val(bf).len() / 4;
  std::vector<Var> fwd(static_cast<size_t>(T)), bwd(static_cast<size_t>(T));
  Var h = t.input(Array({k})), c = t.input(Array({k}));
  for (int i = 0; i < T; ++i) {
    auto [h2, c2] = t.lstm_cell(t.row(xs, i), h, c, Wf, bf);
    fwd[size_t(i)] = h = h2;
    c = c2;
  }
  h = t.input(Array({k}));
  c = t.input(Array({k}));
  for (int i = T - 1; i >= 0; --i) {
    auto [h2, c2] = t.lstm_cell(t.row(xs, i), h, c, Wb, bb);
    bwd[size_t(i)] = h = h2;
    c = c2;
  }
  std::vector<Var> steps(static_cast<size_t>(T));
  for (int i = 0; i < T; ++i) {
    Var parts[2] = {fwd[size_t(i)], bwd[size_t(i)]};
    steps[size_t(i)] = t.concat(parts);
  }
  return t.maxpool_rows(t.stack_rows(steps));
}

}  // namespace d2d::nn
