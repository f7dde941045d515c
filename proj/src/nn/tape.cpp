#include "d2d/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace d2d::nn {

namespace {

void axpy(float* y, float a, const float* x, int n) {
#pragma omp simd
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

float sdot(const float* a, const float* b, int n) {
  float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

float f_sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
float df_sigmoid(float y, float) { return y * (1.0f - y); }
float f_tanh(float x) { return std::tanh(x); }
float df_tanh(float y, float) { return 1.0f - y * y; }
float f_relu(float x) { return x > 0.0f ? x : 0.0f; }
float df_relu(float, float x) { return x > 0.0f ? 1.0f : 0.0f; }
float f_exp(float x) { return std::exp(x); }
float df_exp(float y, float) { return y; }
float f_logsig(float x) {
  // stable log sigmoid on both tails
  return x >= 0.0f ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}
float df_logsig(float y, float) { return 1.0f - std::exp(y); }

}  // namespace

int Tape::check(Var v) const {
  if (v.id < 0 || v.id >= int(nodes_.size()))
    throw ContractError(cat("Var id ", v.id, " not on this tape"));
  return v.id;
}

Array& Tape::g_(int id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.data.empty()) {
    const Array& v = n.param >= 0 && n.value.data.empty()
                         ? store_->by_index(n.param).value
                         : n.value;
    n.grad = Array(v.shape);
  }
  return n.grad;
}

Var Tape::push(Array value, std::function<void()> back, int param) {
  nodes_.push_back(Node{std::move(value), Array{}, std::move(back), param});
  return Var{int(nodes_.size()) - 1};
}

Var Tape::input(Array v) { return push(std::move(v)); }

Var Tape::param(const std::string& name) {
  if (!store_) throw ContractError("tape has no parameter store");
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var{it->second};
  int idx = store_->index_of(name);
  // empty value: val() reads through to the store, avoiding a copy
  Var v = push(Array{}, nullptr, idx);
  param_nodes_.emplace(name, v.id);
  return v;
}

double Tape::scalar(Var v) const {
  const Array& a = val(v);
  if (a.numel() != 1) throw DimError(cat("scalar() on shape ", a.shape_str()));
  return double(a.data[0]);
}

void Tape::backward(Var loss) {
  int lid = check(loss);
  if (val(loss).numel() != 1)
    throw DimError(cat("backward on non-scalar shape ", val(loss).shape_str()));
  g_(lid).data[0] = 1.0f;
  for (int id = lid; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.data.empty() || !n.back) continue;
    n.back();
  }
  for (auto& n : nodes_) {
    if (n.param < 0 || n.grad.data.empty()) continue;
    Array& pg = store_->by_index(n.param).grad;
    axpy(pg.data.data(), 1.0f, n.grad.data.data(), pg.numel());
  }
}

// The const_cast pattern in backward closures: closures capture node ids and
// `this`; node storage is only appended to, so ids stay valid.

Var Tape::add(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Array &va = v_(ia), &vb = v_(ib);
  if (!va.same_shape(vb))
    throw DimError(cat("add shapes ", va.shape_str(), " vs ", vb.shape_str()));
  Array out(va.shape);
  for (int i = 0; i < out.numel(); ++i) out.data[size_t(i)] = va.data[size_t(i)] + vb.data[size_t(i)];
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, ib, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    axpy(g_(ia).data.data(), 1.0f, go.data.data(), go.numel());
    axpy(g_(ib).data.data(), 1.0f, go.data.data(), go.numel());
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Array &va = v_(ia), &vb = v_(ib);
  if (!va.same_shape(vb))
    throw DimError(cat("sub shapes ", va.shape_str(), " vs ", vb.shape_str()));
  Array out(va.shape);
  for (int i = 0; i < out.numel(); ++i) out.data[size_t(i)] = va.data[size_t(i)] - vb.data[size_t(i)];
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, ib, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    axpy(g_(ia).data.data(), 1.0f, go.data.data(), go.numel());
    axpy(g_(ib).data.data(), -1.0f, go.data.data(), go.numel());
  };
  return o;
}

Var Tape::mul(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Array &va = v_(ia), &vb = v_(ib);
  if (!va.same_shape(vb))
    throw DimError(cat("mul shapes ", va.shape_str(), " vs ", vb.shape_str()));
  Array out(va.shape);
  for (int i = 0; i < out.numel(); ++i) out.data[size_t(i)] = va.data[size_t(i)] * vb.data[size_t(i)];
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, ib, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    const Array &va2 = v_(ia), &vb2 = v_(ib);
    Array &ga = g_(ia), &gb = g_(ib);
    for (int i = 0; i < go.numel(); ++i) {
      ga.data[size_t(i)] += go.data[size_t(i)] * vb2.data[size_t(i)];
      gb.data[size_t(i)] += go.data[size_t(i)] * va2.data[size_t(i)];
    }
  };
  return o;
}

Var Tape::scale(Var a, double s) {
  int ia = check(a);
  const Array& va = v_(ia);
  Array out(va.shape);
  float fs = float(s);
  for (int i = 0; i < out.numel(); ++i) out.data[size_t(i)] = va.data[size_t(i)] * fs;
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, fs, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    axpy(g_(ia).data.data(), fs, go.data.data(), go.numel());
  };
  return o;
}

Var Tape::unary(Var a, const char*, float (*f)(float), float (*df)(float, float)) {
  int ia = check(a);
  const Array& va = v_(ia);
  Array out(va.shape);
  for (int i = 0; i < out.numel(); ++i) out.data[size_t(i)] = f(va.data[size_t(i)]);
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, df, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    const Array &vo = v_(io), &va2 = v_(ia);
    Array& ga = g_(ia);
    for (int i = 0; i < go.numel(); ++i)
      ga.data[size_t(i)] += go.data[size_t(i)] * df(vo.data[size_t(i)], va2.data[size_t(i)]);
  };
  return o;
}

Var Tape::sigmoid(Var a) { return unary(a, "sigmoid", f_sigmoid, df_sigmoid); }
Var Tape::tanh_(Var a) { return unary(a, "tanh", f_tanh, df_tanh); }
Var Tape::relu(Var a) { return unary(a, "relu", f_relu, df_relu); }
Var Tape::exp_(Var a) { return unary(a, "exp", f_exp, df_exp); }
Var Tape::log_sigmoid(Var a) { return unary(a, "log_sigmoid", f_logsig, df_logsig); }

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat of nothing");
  int total = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    int ip = check(p);
    total += v_(ip).len();
    ids.push_back(ip);
  }
  Array out({total});
  int off = 0;
  for (int ip : ids) {
    const Array& vp = v_(ip);
    std::memcpy(out.data.data() + off, vp.data.data(), size_t(vp.numel()) * 4);
    off += vp.numel();
  }
  Var o = push(std::move(out));
  nodes_.back().back = [this, ids, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    int off2 = 0;
    for (int ip : ids) {
      Array& gp = g_(ip);
      axpy(gp.data.data(), 1.0f, go.data.data() + off2, gp.numel());
      off2 += gp.numel();
    }
  };
  return o;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  std::vector<int> ids;
  int n = -1, total = 0;
  for (Var p : parts) {
    int ip = check(p);
    const Array& vp = v_(ip);
    if (n < 0) n = vp.rows();
    else if (vp.rows() != n) throw DimError("concat_cols with ragged row counts");
    total += vp.cols();
    ids.push_back(ip);
  }
  Array out({n, total});
  int off = 0;
  for (int ip : ids) {
    const Array& vp = v_(ip);
    for (int i = 0; i < n; ++i)
      std::memcpy(out.row_ptr(i) + off, vp.row_ptr(i), size_t(vp.cols()) * 4);
    off += vp.cols();
  }
  Var o = push(std::move(out));
  nodes_.back().back = [this, ids, n, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    int off2 = 0;
    for (int ip : ids) {
      Array& gp = g_(ip);
      int d = gp.cols();
      for (int i = 0; i < n; ++i) axpy(gp.row_ptr(i), 1.0f, go.row_ptr(i) + off2, d);
      off2 += d;
    }
  };
  return o;
}

Var Tape::slice(Var v, int lo, int hi) {
  int iv = check(v);
  const Array& vv = v_(iv);
  if (lo < 0 || hi > vv.len() || lo >= hi)
    throw DimError(cat("slice [", lo, ",", hi, ") of ", vv.shape_str()));
  Array out({hi - lo});
  std::memcpy(out.data.data(), vv.data.data() + lo, size_t(hi - lo) * 4);
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, lo, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    axpy(g_(iv).data.data() + lo, 1.0f, go.data.data(), go.numel());
  };
  return o;
}

Var Tape::row(Var m, int r) {
  int im = check(m);
  const Array& vm = v_(im);
  if (r < 0 || r >= vm.rows()) throw DimError(cat("row ", r, " of ", vm.shape_str()));
  Array out({vm.cols()});
  std::memcpy(out.data.data(), vm.row_ptr(r), size_t(vm.cols()) * 4);
  Var o = push(std::move(out));
  nodes_.back().back = [this, im, r, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    axpy(g_(im).row_ptr(r), 1.0f, go.data.data(), go.numel());
  };
  return o;
}

Var Tape::rows(Var m, std::span<const int> ids) {
  int im = check(m);
  const Array& vm = v_(im);
  int d = vm.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  for (int r : idv)
    if (r < 0 || r >= vm.rows()) throw DimError(cat("rows id ", r, " of ", vm.shape_str()));
  Array out({int(idv.size()), d});
  for (size_t i = 0; i < idv.size(); ++i)
    std::memcpy(out.row_ptr(int(i)), vm.row_ptr(idv[i]), size_t(d) * 4);
  Var o = push(std::move(out));
  nodes_.back().back = [this, im, idv, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    Array& gm = g_(im);
    for (size_t i = 0; i < idv.size(); ++i)
      axpy(gm.row_ptr(idv[i]), 1.0f, go.row_ptr(int(i)), go.cols());
  };
  return o;
}

Var Tape::stack_rows(std::span<const Var> rs) {
  if (rs.empty()) throw ContractError("stack_rows of nothing");
  std::vector<int> ids;
  int d = -1;
  for (Var r : rs) {
    int ir = check(r);
    int len = v_(ir).len();
    if (d < 0) d = len;
    else if (d != len) throw DimError("stack_rows with ragged lengths");
    ids.push_back(ir);
  }
  Array out({int(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.row_ptr(int(i)), v_(ids[i]).data.data(), size_t(d) * 4);
  Var o = push(std::move(out));
  nodes_.back().back = [this, ids, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    for (size_t i = 0; i < ids.size(); ++i)
      axpy(g_(ids[i]).data.data(), 1.0f, go.row_ptr(int(i)), go.cols());
  };
  return o;
}

Var Tape::gather(Var v, std::span<const int> ids) {
  int iv = check(v);
  const Array& vv = v_(iv);
  std::vector<int> idv(ids.begin(), ids.end());
  for (int i : idv)
    if (i < 0 || i >= vv.len()) throw DimError(cat("gather id ", i, " of ", vv.shape_str()));
  Array out({int(idv.size())});
  for (size_t i = 0; i < idv.size(); ++i) out.data[i] = vv.data[size_t(idv[i])];
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, idv, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    Array& gv = g_(iv);
    for (size_t i = 0; i < idv.size(); ++i) gv.data[size_t(idv[i])] += go.data[i];
  };
  return o;
}

Var Tape::matmul(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Array &va = v_(ia), &vb = v_(ib);

  if (va.ndim() == 2 && vb.ndim() == 2) {
    int m = va.rows(), k = va.cols(), n = vb.cols();
    if (vb.rows() != k)
      throw DimError(cat("matmul ", va.shape_str(), " x ", vb.shape_str()));
    Array out({m, n});
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p)
        axpy(out.row_ptr(i), va.at(i, p), vb.row_ptr(p), n);
    Var o = push(std::move(out));
    nodes_.back().back = [this, ia, ib, m, k, n, io = o.id] {
      const Array& go = nodes_[size_t(io)].grad;
      const Array &va2 = v_(ia), &vb2 = v_(ib);
      Array &ga = g_(ia), &gb = g_(ib);
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          ga.at(i, p) += sdot(go.row_ptr(i), vb2.row_ptr(p), n);
          axpy(gb.row_ptr(p), va2.at(i, p), go.row_ptr(i), n);
        }
    };
    return o;
  }

  if (va.ndim() == 2 && vb.ndim() == 1) {  // A[m,k] x[k] -> y[m]
    int m = va.rows(), k = va.cols();
    if (vb.len() != k)
      throw DimError(cat("matmul ", va.shape_str(), " x ", vb.shape_str()));
    Array out({m});
    for (int i = 0; i < m; ++i) out.data[size_t(i)] = sdot(va.row_ptr(i), vb.data.data(), k);
    Var o = push(std::move(out));
    nodes_.back().back = [this, ia, ib, m, io = o.id] {
      const Array& go = nodes_[size_t(io)].grad;
      const Array &va2 = v_(ia), &vb2 = v_(ib);
      Array &ga = g_(ia), &gb = g_(ib);
      int k2 = va2.cols();
      for (int i = 0; i < m; ++i) {
        float gi = go.data[size_t(i)];
        if (gi == 0.0f) continue;
        axpy(ga.row_ptr(i), gi, vb2.data.data(), k2);
        axpy(gb.data.data(), gi, va2.row_ptr(i), k2);
      }
    };
    return o;
  }

  if (va.ndim() == 1 && vb.ndim() == 2) {  // x[m] A[m,k] -> y[k]
    int m = vb.rows(), k = vb.cols();
    if (va.len() != m)
      throw DimError(cat("matmul ", va.shape_str(), " x ", vb.shape_str()));
    Array out({k});
    for (int i = 0; i < m; ++i) axpy(out.data.data(), va.data[size_t(i)], vb.row_ptr(i), k);
    Var o = push(std::move(out));
    nodes_.back().back = [this, ia, ib, m, k, io = o.id] {
      const Array& go = nodes_[size_t(io)].grad;
      const Array &va2 = v_(ia), &vb2 = v_(ib);
      Array &ga = g_(ia), &gb = g_(ib);
      for (int i = 0; i < m; ++i) {
        ga.data[size_t(i)] += sdot(go.data.data(), vb2.row_ptr(i), k);
        axpy(gb.row_ptr(i), va2.data[size_t(i)], go.data.data(), k);
      }
    };
    return o;
  }

  throw DimError(cat("matmul ranks ", va.ndim(), " x ", vb.ndim(), " unsupported"));
}

Var Tape::linear(Var x, Var W, Var b) {
  int ix = check(x), iw = check(W), ib = check(b);
  const Array &vx = v_(ix), &vw = v_(iw), &vb = v_(ib);
  int a = vw.rows(), out_d = vw.cols();
  if (vx.ndim() != 1 || vx.len() != a || vb.len() != out_d)
    throw DimError(cat("linear x", vx.shape_str(), " W", vw.shape_str(), " b", vb.shape_str()));
  Array out({out_d});
  std::memcpy(out.data.data(), vb.data.data(), size_t(out_d) * 4);
  for (int i = 0; i < a; ++i) axpy(out.data.data(), vx.data[size_t(i)], vw.row_ptr(i), out_d);
  Var o = push(std::move(out));
  nodes_.back().back = [this, ix, iw, ib, a, out_d, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    const Array &vx2 = v_(ix), &vw2 = v_(iw);
    Array &gx = g_(ix), &gw = g_(iw), &gb = g_(ib);
    axpy(gb.data.data(), 1.0f, go.data.data(), out_d);
    for (int i = 0; i < a; ++i) {
      gx.data[size_t(i)] += sdot(go.data.data(), vw2.row_ptr(i), out_d);
      axpy(gw.row_ptr(i), vx2.data[size_t(i)], go.data.data(), out_d);
    }
  };
  return o;
}

Var Tape::add_rowwise(Var m, Var b) {
  int im = check(m), ib = check(b);
  const Array &vm = v_(im), &vb = v_(ib);
  if (vm.ndim() != 2 || vb.ndim() != 1 || vb.len() != vm.cols())
    throw DimError(cat("add_rowwise ", vm.shape_str(), " + ", vb.shape_str()));
  int n = vm.rows(), d = vm.cols();
  Array out({n, d});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.row_ptr(i), vm.row_ptr(i), size_t(d) * 4);
    axpy(out.row_ptr(i), 1.0f, vb.data.data(), d);
  }
  Var o = push(std::move(out));
  nodes_.back().back = [this, im, ib, n, d, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    Array &gm = g_(im), &gb = g_(ib);
    for (int i = 0; i < n; ++i) {
      axpy(gm.row_ptr(i), 1.0f, go.row_ptr(i), d);
      axpy(gb.data.data(), 1.0f, go.row_ptr(i), d);
    }
  };
  return o;
}

Var Tape::mean_rows(Var m) {
  int im = check(m);
  const Array& vm = v_(im);
  int n = vm.rows(), d = vm.cols();
  if (n == 0) throw DimError("mean_rows of empty matrix");
  Array out({d});
  for (int i = 0; i < n; ++i) axpy(out.data.data(), 1.0f / float(n), vm.row_ptr(i), d);
  Var o = push(std::move(out));
  nodes_.back().back = [this, im, n, d, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    Array& gm = g_(im);
    for (int i = 0; i < n; ++i) axpy(gm.row_ptr(i), 1.0f / float(n), go.data.data(), d);
  };
  return o;
}

Var Tape::maxpool_rows(Var m) {
  int im = check(m);
  const Array& vm = v_(im);
  int n = vm.rows(), d = vm.cols();
  if (n == 0) throw DimError("maxpool_rows of empty matrix");
  Array out({d});
  std::vector<int> arg(size_t(d), 0);
  std::memcpy(out.data.data(), vm.row_ptr(0), size_t(d) * 4);
  for (int i = 1; i < n; ++i) {
    const float* r = vm.row_ptr(i);
    for (int j = 0; j < d; ++j)
      if (r[j] > out.data[size_t(j)]) {  // strict: ties go to the lowest row
        out.data[size_t(j)] = r[j];
        arg[size_t(j)] = i;
      }
  }
  Var o = push(std::move(out));
  nodes_.back().back = [this, im, arg, d, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    Array& gm = g_(im);
    for (int j = 0; j < d; ++j) gm.at(arg[size_t(j)], j) += go.data[size_t(j)];
  };
  return o;
}

Var Tape::reduce_max(Var v) {
  int iv = check(v);
  const Array& vv = v_(iv);
  if (vv.ndim() != 1 || vv.len() == 0) throw DimError("reduce_max needs a nonempty vector");
  int arg = 0;
  for (int i = 1; i < vv.len(); ++i)
    if (vv.data[size_t(i)] > vv.data[size_t(arg)]) arg = i;
  Array out({1});
  out.data[0] = vv.data[size_t(arg)];
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, arg, io = o.id] {
    g_(iv).data[size_t(arg)] += nodes_[size_t(io)].grad.data[0];
  };
  return o;
}

Var Tape::sum(Var v) {
  int iv = check(v);
  const Array& vv = v_(iv);
  double acc = 0.0;
  for (float x : vv.data) acc += double(x);
  Array out({1});
  out.data[0] = float(acc);
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, io = o.id] {
    float g0 = nodes_[size_t(io)].grad.data[0];
    Array& gv = g_(iv);
    for (float& g : gv.data) g += g0;
  };
  return o;
}

Var Tape::dot(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Array &va = v_(ia), &vb = v_(ib);
  if (va.ndim() != 1 || !va.same_shape(vb))
    throw DimError(cat("dot shapes ", va.shape_str(), " vs ", vb.shape_str()));
  double acc = 0.0;
  for (int i = 0; i < va.numel(); ++i) acc += double(va.data[size_t(i)]) * double(vb.data[size_t(i)]);
  Array out({1});
  out.data[0] = float(acc);
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, ib, io = o.id] {
    float g0 = nodes_[size_t(io)].grad.data[0];
    const Array &va2 = v_(ia), &vb2 = v_(ib);
    axpy(g_(ia).data.data(), g0, vb2.data.data(), vb2.numel());
    axpy(g_(ib).data.data(), g0, va2.data.data(), va2.numel());
  };
  return o;
}

Var Tape::abs_diff_sum(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Array &va = v_(ia), &vb = v_(ib);
  if (!va.same_shape(vb))
    throw DimError(cat("abs_diff_sum shapes ", va.shape_str(), " vs ", vb.shape_str()));
  double acc = 0.0;
  for (int i = 0; i < va.numel(); ++i)
    acc += std::abs(double(va.data[size_t(i)]) - double(vb.data[size_t(i)]));
  Array out({1});
  out.data[0] = float(acc);
  Var o = push(std::move(out));
  nodes_.back().back = [this, ia, ib, io = o.id] {
    float g0 = nodes_[size_t(io)].grad.data[0];
    const Array &va2 = v_(ia), &vb2 = v_(ib);
    Array &ga = g_(ia), &gb = g_(ib);
    for (int i = 0; i < va2.numel(); ++i) {
      float d = va2.data[size_t(i)] - vb2.data[size_t(i)];
      float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
      ga.data[size_t(i)] += g0 * s;
      gb.data[size_t(i)] -= g0 * s;
    }
  };
  return o;
}

Var Tape::softmax(Var v) {
  int iv = check(v);
  const Array& vv = v_(iv);
  if (vv.ndim() != 1 || vv.len() == 0) throw DimError("softmax needs a nonempty vector");
  float mx = *std::max_element(vv.data.begin(), vv.data.end());
  Array out({vv.len()});
  double z = 0.0;
  for (int i = 0; i < vv.len(); ++i) {
    out.data[size_t(i)] = std::exp(vv.data[size_t(i)] - mx);
    z += double(out.data[size_t(i)]);
  }
  for (float& x : out.data) x = float(double(x) / z);
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    const Array& y = v_(io);
    double gy = 0.0;
    for (int i = 0; i < y.numel(); ++i) gy += double(go.data[size_t(i)]) * double(y.data[size_t(i)]);
    Array& gv = g_(iv);
    for (int i = 0; i < y.numel(); ++i)
      gv.data[size_t(i)] += y.data[size_t(i)] * (go.data[size_t(i)] - float(gy));
  };
  return o;
}

Var Tape::log_softmax(Var v) {
  int iv = check(v);
  const Array& vv = v_(iv);
  if (vv.ndim() != 1 || vv.len() == 0) throw DimError("log_softmax needs a nonempty vector");
  float mx = *std::max_element(vv.data.begin(), vv.data.end());
  double z = 0.0;
  for (float x : vv.data) z += std::exp(double(x) - double(mx));
  float lz = float(std::log(z)) + mx;
  Array out({vv.len()});
  for (int i = 0; i < vv.len(); ++i) out.data[size_t(i)] = vv.data[size_t(i)] - lz;
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    const Array& lp = v_(io);
    double gsum = 0.0;
    for (float g : go.data) gsum += double(g);
    Array& gv = g_(iv);
    for (int i = 0; i < lp.numel(); ++i)
      gv.data[size_t(i)] += go.data[size_t(i)] - float(std::exp(double(lp.data[size_t(i)])) * gsum);
  };
  return o;
}

Var Tape::logsumexp(Var v) {
  int iv = check(v);
  const Array& vv = v_(iv);
  if (vv.ndim() != 1 || vv.len() == 0) throw DimError("logsumexp needs a nonempty vector");
  float mx = *std::max_element(vv.data.begin(), vv.data.end());
  double z = 0.0;
  for (float x : vv.data) z += std::exp(double(x) - double(mx));
  Array out({1});
  out.data[0] = float(std::log(z)) + mx;
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, io = o.id] {
    float g0 = nodes_[size_t(io)].grad.data[0];
    const Array& vv2 = v_(iv);
    float L = v_(io).data[0];
    Array& gv = g_(iv);
    for (int i = 0; i < vv2.numel(); ++i)
      gv.data[size_t(i)] += g0 * std::exp(vv2.data[size_t(i)] - L);
  };
  return o;
}

Var Tape::nll(Var logprobs, int index) {
  const Array& lp = val(logprobs);
  if (index < 0 || index >= lp.len())
    throw ContractError(cat("nll index ", index, " out of range ", lp.shape_str()));
  int ids[1] = {index};
  return scale(gather(logprobs, ids), -1.0);
}

Var Tape::marginal_nll(Var logprobs, std::span<const int> index_set) {
  if (index_set.empty()) throw ContractError("marginal_nll with empty index set");
  return scale(logsumexp(gather(logprobs, index_set)), -1.0);
}

std::pair<Var, Var> Tape::lstm_cell(Var x, Var h, Var c, Var W, Var b) {
  int ix = check(x), ih = check(h), ic = check(c), iw = check(W), ib = check(b);
  const Array &vx = v_(ix), &vh = v_(ih), &vc = v_(ic), &vw = v_(iw), &vb = v_(ib);
  int a = vx.len(), k = vh.len();
  if (vc.len() != k || vw.rows() != a + k || vw.cols() != 4 * k || vb.len() != 4 * k)
    throw DimError(cat("lstm_cell x", vx.shape_str(), " h", vh.shape_str(), " W",
                       vw.shape_str(), " b", vb.shape_str()));

  // gates: z = [x;h] W + b, order (input, forget, cell, output)
  Array gates({4 * k});
  std::memcpy(gates.data.data(), vb.data.data(), size_t(4 * k) * 4);
  for (int j = 0; j < a; ++j) axpy(gates.data.data(), vx.data[size_t(j)], vw.row_ptr(j), 4 * k);
  for (int j = 0; j < k; ++j) axpy(gates.data.data(), vh.data[size_t(j)], vw.row_ptr(a + j), 4 * k);
  float* gi = gates.data.data();
  float* gf = gi + k;
  float* gg = gf + k;
  float* go_ = gg + k;
  for (int j = 0; j < k; ++j) {
    gi[j] = f_sigmoid(gi[j]);
    gf[j] = f_sigmoid(gf[j]);
    gg[j] = f_tanh(gg[j]);
    go_[j] = f_sigmoid(go_[j]);
  }
  Array hc({2 * k});  // [h'; c']
  for (int j = 0; j < k; ++j) {
    float cn = gf[j] * vc.data[size_t(j)] + gi[j] * gg[j];
    hc.data[size_t(k + j)] = cn;
    hc.data[size_t(j)] = go_[j] * f_tanh(cn);
  }
  Var o = push(std::move(hc));
  nodes_.back().back = [this, ix, ih, ic, iw, ib, a, k, gates = std::move(gates),
                        io = o.id] {
    const Array& gout = nodes_[size_t(io)].grad;  // [dh'; dc']
    const Array& hc2 = v_(io);
    const Array &vx2 = v_(ix), &vh2 = v_(ih), &vc2 = v_(ic), &vw2 = v_(iw);
    const float* gi2 = gates.data.data();
    const float* gf2 = gi2 + k;
    const float* gg2 = gf2 + k;
    const float* go2 = gg2 + k;

    Array dz({4 * k});
    float* dzi = dz.data.data();
    float* dzf = dzi + k;
    float* dzg = dzf + k;
    float* dzo = dzg + k;
    Array dc_in({k});
    for (int j = 0; j < k; ++j) {
      float dh = gout.data[size_t(j)];
      float dc_out = gout.data[size_t(k + j)];
      float cn = hc2.data[size_t(k + j)];
      float tc = f_tanh(cn);
      float d_o = dh * tc;
      float dct = dc_out + dh * go2[j] * (1.0f - tc * tc);
      float d_i = dct * gg2[j];
      float d_f = dct * vc2.data[size_t(j)];
      float d_g = dct * gi2[j];
      dc_in.data[size_t(j)] = dct * gf2[j];
      dzi[j] = d_i * gi2[j] * (1.0f - gi2[j]);
      dzf[j] = d_f * gf2[j] * (1.0f - gf2[j]);
      dzg[j] = d_g * (1.0f - gg2[j] * gg2[j]);
      dzo[j] = d_o * go2[j] * (1.0f - go2[j]);
    }
    Array &gx = g_(ix), &gh = g_(ih), &gc = g_(ic), &gw = g_(iw), &gb = g_(ib);
    axpy(gc.data.data(), 1.0f, dc_in.data.data(), k);
    axpy(gb.data.data(), 1.0f, dz.data.data(), 4 * k);
    for (int j = 0; j < a; ++j) {
      gx.data[size_t(j)] += sdot(vw2.row_ptr(j), dz.data.data(), 4 * k);
      axpy(gw.row_ptr(j), vx2.data[size_t(j)], dz.data.data(), 4 * k);
    }
    for (int j = 0; j < k; ++j) {
      gh.data[size_t(j)] += sdot(vw2.row_ptr(a + j), dz.data.data(), 4 * k);
      axpy(gw.row_ptr(a + j), vh2.data[size_t(j)], dz.data.data(), 4 * k);
    }
  };
  Var hnew = slice(o, 0, k);
  Var cnew = slice(o, k, 2 * k);
  return {hnew, cnew};
}

Var Tape::conv1d_maxpool(Var X, std::span<const ConvKernel> kernels) {
  int ix = check(X);
  const Array& vx = v_(ix);
  int T = vx.rows(), d = vx.cols();
  if (T == 0) throw DimError("conv1d_maxpool on empty input");
  if (kernels.empty()) throw ContractError("conv1d_maxpool without kernels");

  struct KernelInfo {
    int width, filters, iw, ib;
  };
  std::vector<KernelInfo> infos;
  int total = 0;
  for (const auto& kn : kernels) {
    int iw = check(kn.weight), ib = check(kn.bias);
    const Array &vw = v_(iw), &vb = v_(ib);
    if (kn.width <= 0 || vw.rows() != kn.width * d)
      throw DimError(cat("conv kernel width ", kn.width, " weight ", vw.shape_str(),
                         " input ", vx.shape_str()));
    if (vb.len() != vw.cols()) throw DimError("conv bias mismatch");
    infos.push_back({kn.width, vw.cols(), iw, ib});
    total += vw.cols();
  }

  Array out({total});
  std::vector<int> argwin(size_t(total), 0);
  int off = 0;
  std::vector<float> pad;
  for (const auto& ki : infos) {
    const Array& vw = v_(ki.iw);
    const Array& vb = v_(ki.ib);
    int F = ki.filters, w = ki.width;
    int wd = w * d;
    int n_win = std::max(1, T - w + 1);
    std::vector<float> scores(static_cast<size_t>(F));
    float* best = out.data.data() + off;
    int* arg = argwin.data() + off;
    std::fill(best, best + F, 0.0f);  // ReLU floor; arg stays 0 for dead filters
    bool padded = T < w;
    if (padded) {
      pad.assign(size_t(wd), 0.0f);
      std::memcpy(pad.data(), vx.data.data(), size_t(T * d) * 4);
    }
    for (int t = 0; t < n_win; ++t) {
      const float* u = padded ? pad.data() : vx.row_ptr(t);
      std::memcpy(scores.data(), vb.data.data(), size_t(F) * 4);
      for (int j = 0; j < wd; ++j) axpy(scores.data(), u[j], vw.row_ptr(j), F);
      for (int f = 0; f < F; ++f) {
        float s = scores[size_t(f)] > 0.0f ? scores[size_t(f)] : 0.0f;
        if (s > best[f]) {
          best[f] = s;
          arg[f] = t;
        }
      }
    }
    off += F;
  }

  Var o = push(std::move(out));
  nodes_.back().back = [this, ix, infos, argwin, T, d, io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    const Array& vo = v_(io);
    const Array& vx2 = v_(ix);
    Array& gx = g_(ix);
    int off2 = 0;
    std::vector<float> pad;
    for (const auto& ki : infos) {
      const Array& vw = v_(ki.iw);
      Array& gw = g_(ki.iw);
      Array& gb = g_(ki.ib);
      int F = ki.filters, w = ki.width, wd = w * d;
      bool padded = T < w;
      if (padded) {
        pad.assign(size_t(wd), 0.0f);
        std::memcpy(pad.data(), vx2.data.data(), size_t(T * d) * 4);
      }
      for (int f = 0; f < F; ++f) {
        float g = go.data[size_t(off2 + f)];
        // vo == 0 means the winning window was ReLU-dead: no gradient
        if (g == 0.0f || vo.data[size_t(off2 + f)] <= 0.0f) continue;
        int t = argwin[size_t(off2 + f)];
        const float* u = padded ? pad.data() : vx2.row_ptr(t);
        gb.data[size_t(f)] += g;
        int live = padded ? T * d : wd;  // padding rows receive no gradient
        float* gxw = padded ? nullptr : gx.row_ptr(t);
        for (int j = 0; j < wd; ++j) {
          gw.at(j, f) += g * u[j];
          if (j < live) {
            if (padded) gx.data[size_t(j)] += g * vw.at(j, f);
            else gxw[j] += g * vw.at(j, f);
          }
        }
      }
      off2 += F;
    }
  };
  return o;
}

Var Tape::dropout(Var v, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError(cat("dropout rate ", rate));
  if (!train_ || rate == 0.0) return v;  // identity in eval mode
  int iv = check(v);
  const Array& vv = v_(iv);
  Array mask(vv.shape);
  float keep_scale = float(1.0 / (1.0 - rate));
  for (float& m : mask.data) m = rng_.real() < rate ? 0.0f : keep_scale;
  Array out(vv.shape);
  for (int i = 0; i < vv.numel(); ++i) out.data[size_t(i)] = vv.data[size_t(i)] * mask.data[size_t(i)];
  Var o = push(std::move(out));
  nodes_.back().back = [this, iv, mask = std::move(mask), io = o.id] {
    const Array& go = nodes_[size_t(io)].grad;
    Array& gv = g_(iv);
    for (int i = 0; i < go.numel(); ++i) gv.data[size_t(i)] += go.data[size_t(i)] * mask.data[size_t(i)];
  };
  return o;
}

}  // namespace d2d::nn
