#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "d2d/nn/grad_check.hpp"
#include "d2d/nn/graph.hpp"

using namespace d2d;
using namespace d2d::nn;

namespace {

Array mat(int r, int c, std::initializer_list<float> v) {
  Array a({r, c});
  a.data.assign(v.begin(), v.end());
  return a;
}

std::vector<float> vals(const Tape& t, Var v) { return t.val(v).data; }

}  // namespace

TEST_CASE("elementwise forward values") {
  Tape t;
  Var a = t.input(Array::vec({1, -2, 3}));
  Var b = t.input(Array::vec({0.5, 2, -1}));
  CHECK(vals(t, t.add(a, b)) == std::vector<float>{1.5f, 0.f, 2.f});
  CHECK(vals(t, t.sub(a, b)) == std::vector<float>{0.5f, -4.f, 4.f});
  CHECK(vals(t, t.mul(a, b)) == std::vector<float>{0.5f, -4.f, -3.f});
  CHECK(vals(t, t.scale(a, -2)) == std::vector<float>{-2.f, 4.f, -6.f});
  CHECK(vals(t, t.relu(a)) == std::vector<float>{1.f, 0.f, 3.f});
  CHECK(t.val(t.sigmoid(t.constant(0))).at(0) == doctest::Approx(0.5));
  CHECK(t.val(t.tanh_(t.constant(0))).at(0) == doctest::Approx(0.0));
  CHECK(t.val(t.exp_(t.constant(1))).at(0) == doctest::Approx(std::exp(1.0)));
  CHECK(t.val(t.log_sigmoid(t.constant(0))).at(0) == doctest::Approx(std::log(0.5)));
}

TEST_CASE("shape and selection ops") {
  Tape t;
  Var v = t.input(Array::vec({10, 20, 30, 40}));
  CHECK(vals(t, t.slice(v, 1, 3)) == std::vector<float>{20.f, 30.f});
  std::vector<int> ids = {0, 0, 3};
  CHECK(vals(t, t.gather(v, ids)) == std::vector<float>{10.f, 10.f, 40.f});

  Var m = t.input(mat(2, 2, {1, 2, 3, 4}));
  CHECK(vals(t, t.row(m, 1)) == std::vector<float>{3.f, 4.f});
  std::vector<int> rids = {1, 0, 1};
  Var picked = t.rows(m, rids);
  CHECK(t.val(picked).rows() == 3);
  CHECK(vals(t, picked) == std::vector<float>{3.f, 4.f, 1.f, 2.f, 3.f, 4.f});

  Var parts[2] = {t.input(Array::vec({1, 2})), t.input(Array::vec({3}))};
  CHECK(vals(t, t.concat(parts)) == std::vector<float>{1.f, 2.f, 3.f});

  Var cols[2] = {m, t.input(mat(2, 1, {9, 8}))};
  Var cc = t.concat_cols(cols);
  CHECK(t.val(cc).cols() == 3);
  CHECK(vals(t, cc) == std::vector<float>{1.f, 2.f, 9.f, 3.f, 4.f, 8.f});

  Var rws[2] = {t.input(Array::vec({1, 2})), t.input(Array::vec({3, 4}))};
  Var st = t.stack_rows(rws);
  CHECK(t.val(st).rows() == 2);
  CHECK(vals(t, st) == std::vector<float>{1.f, 2.f, 3.f, 4.f});

  CHECK_THROWS_AS(t.concat(std::span<const Var>{}), ContractError);
  CHECK_THROWS_AS(t.val(Var{9999}), ContractError);
}

TEST_CASE("linear algebra and reductions") {
  Tape t;
  Var M = t.input(mat(2, 2, {1, 2, 3, 4}));
  Var N = t.input(mat(2, 2, {5, 6, 7, 8}));
  CHECK(vals(t, t.matmul(M, N)) == std::vector<float>{19.f, 22.f, 43.f, 50.f});
  CHECK(vals(t, t.matmul(M, t.input(Array::vec({1, -1})))) ==
        std::vector<float>{-1.f, -1.f});
  CHECK(vals(t, t.matmul(t.input(Array::vec({1, 2})), M)) == std::vector<float>{7.f, 10.f});

  Var x = t.input(Array::vec({1, 2}));
  Var W = t.input(mat(2, 3, {1, 0, 2, 3, 1, 0}));
  Var b = t.input(Array::vec({0.5, -1, 0}));
  CHECK(vals(t, t.linear(x, W, b)) == std::vector<float>{7.5f, 1.f, 2.f});

  CHECK(vals(t, t.add_rowwise(M, t.input(Array::vec({10, 20})))) ==
        std::vector<float>{11.f, 22.f, 13.f, 24.f});
  CHECK(vals(t, t.mean_rows(M)) == std::vector<float>{2.f, 3.f});
  CHECK(vals(t, t.maxpool_rows(t.input(mat(2, 2, {1, 5, 3, 2})))) ==
        std::vector<float>{3.f, 5.f});
  CHECK(vals(t, t.reduce_max(t.input(Array::vec({3, -1, 7})))) == std::vector<float>{7.f});
  CHECK(t.scalar(t.sum(t.input(Array::vec({1, 2, 3})))) == doctest::Approx(6.0));
  CHECK(t.scalar(t.dot(t.input(Array::vec({1, 2, 3})), t.input(Array::vec({4, 5, 6})))) ==
        doctest::Approx(32.0));
  CHECK(t.scalar(t.abs_diff_sum(t.input(Array::vec({1, 5})), t.input(Array::vec({2, 3})))) ==
        doctest::Approx(3.0));
}

TEST_CASE("probability ops") {
  Tape t;
  CHECK(vals(t, t.softmax(t.input(Array::vec({0, 0})))) == std::vector<float>{0.5f, 0.5f});
  // large logits must not overflow
  auto w = vals(t, t.softmax(t.input(Array::vec({1000, 1000}))));
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(w[0] + w[1] == doctest::Approx(1.0));

  Var v = t.input(Array::vec({1, 2}));
  double lse = std::log(std::exp(1.0) + std::exp(2.0));
  CHECK(t.scalar(t.logsumexp(v)) == doctest::Approx(lse));
  auto lsm = vals(t, t.log_softmax(v));
  CHECK(lsm[0] == doctest::Approx(1.0 - lse));
  CHECK(lsm[1] == doctest::Approx(2.0 - lse));

  Var lp = t.log_softmax(t.input(Array::vec({0, 0, 0, 0})));
  CHECK(t.scalar(t.nll(lp, 2)) == doctest::Approx(std::log(4.0)));
  std::vector<int> set = {0, 1};
  CHECK(t.scalar(t.marginal_nll(lp, set)) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(t.nll(lp, 4), ContractError);
  CHECK_THROWS_AS(t.marginal_nll(lp, std::span<const int>{}), ContractError);
}

TEST_CASE("lstm_cell follows the input/forget/cell/output gate order") {
  Tape t;
  Var x = t.input(Array::vec({1.0f}));
  Var h = t.input(Array::vec({2.0f}));
  Var c = t.input(Array::vec({0.5f}));
  // asymmetric weights pin the gate layout
  Var W = t.input(mat(2, 4, {0.1f, 0.2f, 0.3f, 0.4f, -0.1f, 0.0f, 0.1f, 0.2f}));
  Var b = t.input(Array::vec({0.01f, 0.02f, 0.03f, 0.04f}));
  auto [h2, c2] = t.lstm_cell(x, h, c, W, b);

  auto sg = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double zi = 0.1 - 0.2 + 0.01, zf = 0.2 + 0.0 + 0.02, zg = 0.3 + 0.2 + 0.03,
         zo = 0.4 + 0.4 + 0.04;
  double cc = sg(zf) * 0.5 + sg(zi) * std::tanh(zg);
  double hh = sg(zo) * std::tanh(cc);
  CHECK(t.val(c2).at(0) == doctest::Approx(cc).epsilon(1e-5));
  CHECK(t.val(h2).at(0) == doctest::Approx(hh).epsilon(1e-5));
}

TEST_CASE("conv1d_maxpool windows, end padding, kernel order") {
  Tape t;
  // T=2 < width=3: a single window, zero-padded at the end
  Var X = t.input(mat(2, 1, {2, 3}));
  ConvKernel k3{3, t.input(mat(3, 1, {1, 10, 100})), t.input(Array::vec({0.5f}))};
  ConvKernel ks1[] = {k3};
  CHECK(vals(t, t.conv1d_maxpool(X, ks1)) == std::vector<float>{32.5f});

  // T=4, width=2: three windows x_t - x_{t+1}, relu, max over time
  Var Y = t.input(mat(4, 1, {1, -1, 2, 0}));
  ConvKernel k2{2, t.input(mat(2, 1, {1, -1})), t.input(Array::vec({0.f}))};
  ConvKernel kneg{1, t.input(mat(1, 1, {-1})), t.input(Array::vec({0.f}))};
  ConvKernel ks2[] = {k2, kneg};
  CHECK(vals(t, t.conv1d_maxpool(Y, ks2)) == std::vector<float>{2.f, 1.f});

  CHECK_THROWS_AS(t.conv1d_maxpool(X, std::span<const ConvKernel>{}), ContractError);
}

TEST_CASE("attention weights normalize and average the keys") {
  Tape t;
  Var keys = t.input(mat(2, 2, {1, 0, 0, 1}));
  Var query = t.input(Array::vec({2, 0}));
  auto att = attention(t, query, keys);
  CHECK(vals(t, att.scores) == std::vector<float>{2.f, 0.f});
  auto w = vals(t, att.weights);
  CHECK(w[0] + w[1] == doctest::Approx(1.0));
  CHECK(w[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)));
  auto ctx = vals(t, att.context);
  CHECK(ctx[0] == doctest::Approx(w[0]));
  CHECK(ctx[1] == doctest::Approx(w[1]));
}

TEST_CASE("dropout is inverted, seeded, and eval-mode identity") {
  Array big({1000});
  for (int i = 0; i < 1000; ++i) big.at(i) = 1.0f;

  Tape eval(nullptr, false);
  CHECK(vals(eval, eval.dropout(eval.input(big), 0.5)) == big.data);
  Tape t0(nullptr, true, 7);
  CHECK(vals(t0, t0.dropout(t0.input(big), 0.0)) == big.data);

  Tape t1(nullptr, true, 7);
  auto d1 = vals(t1, t1.dropout(t1.input(big), 0.4));
  int kept = 0;
  for (float x : d1) {
    CHECK((x == 0.0f || x == doctest::Approx(1.0f / 0.6f)));
    kept += x != 0.0f;
  }
  CHECK(kept > 500);  // ~600 expected
  CHECK(kept < 700);

  Tape t2(nullptr, true, 7);
  CHECK(vals(t2, t2.dropout(t2.input(big), 0.4)) == d1);  // same seed, same mask

  CHECK_THROWS_AS(t1.dropout(t1.input(big), 1.0), ContractError);
  CHECK_THROWS_AS(t1.dropout(t1.input(big), -0.1), ContractError);
}

TEST_CASE("params read through the store and accumulate gradients across tapes") {
  ParamStore store;
  store.add("w", {2}).value = Array::vec({1, 2});
  {
    Tape t(&store);
    Var w = t.param("w");
    CHECK(t.param("w").id == w.id);  // shared leaf
    t.backward(t.sum(t.mul(w, w)));  // d sum(w^2) = 2w
  }
  CHECK(store.at("w").grad.data == std::vector<float>{2.f, 4.f});
  {
    Tape t(&store);
    t.backward(t.sum(t.param("w")));
  }
  CHECK(store.at("w").grad.data == std::vector<float>{3.f, 5.f});
  CHECK(store.grad_norm() == doctest::Approx(std::sqrt(9.0 + 25.0)));

  store.sgd_step(0.1, 0.0);
  CHECK(store.at("w").value.data == std::vector<float>{1.f - 0.3f, 2.f - 0.5f});
  CHECK(store.at("w").grad.data == std::vector<float>{0.f, 0.f});

  Tape t(&store);
  CHECK(t.val(t.param("w")).at(0) == doctest::Approx(0.7f));  // sees the update

  Tape bare;
  CHECK_THROWS_AS(bare.param("w"), ContractError);
}

TEST_CASE("sgd_step clips by global norm and rejects non-finite gradients") {
  ParamStore store;
  store.add("w", {2}).value = Array::vec({0, 0});
  store.at("w").grad = Array::vec({3, 4});  // norm 5
  store.sgd_step(1.0, 1.0);                 // scaled by 1/5
  CHECK(store.at("w").value.data == std::vector<float>{-0.6f, -0.8f});

  store.at("w").grad = Array::vec({std::numeric_limits<float>::infinity(), 0.f});
  CHECK_THROWS_AS(store.sgd_step(1.0, 1.0), TrainError);
  // the step is rejected before any update
  CHECK(store.at("w").value.data == std::vector<float>{-0.6f, -0.8f});
  store.zero_grads();
  CHECK(store.at("w").grad.data == std::vector<float>{0.f, 0.f});
}

TEST_CASE("model files round trip") {
  ParamStore store;
  store.add("a", {2, 3});
  store.add("b", {4});
  Rng rng(3);
  store.init_uniform(rng, 0.5f);

  auto dir = std::filesystem::temp_directory_path() / "d2d_tests";
  std::filesystem::create_directories(dir);
  auto file = dir / "tape_store.d2m";
  store.save(file, {{"dim", 4}, {"note", "x"}});

  nlohmann::json hyper;
  ParamStore back = ParamStore::load(file, &hyper);
  CHECK(back.count() == 2);
  CHECK(back.at("a").value.shape == std::vector<int>{2, 3});
  CHECK(back.at("a").value.data == store.at("a").value.data);
  CHECK(back.at("b").value.data == store.at("b").value.data);
  CHECK(hyper.at("dim") == 4);

  std::ofstream junk(dir / "junk.d2m", std::ios::binary);
  junk << "XXXXnotamodel";
  junk.close();
  CHECK_THROWS_AS(ParamStore::load(dir / "junk.d2m"), ParseError);
}

TEST_CASE("primitive gradients match finite differences") {
  ParamStore store;
  store.add("x", {4}).value = Array::vec({0.3f, -0.7f, 1.2f, 0.4f});
  store.add("W", {4, 3}).value =
      mat(4, 3, {0.2f, -0.1f, 0.4f, 0.7f, 0.3f, -0.6f, -0.2f, 0.5f, 0.1f, 0.3f, -0.4f, 0.2f});
  store.add("q", {3}).value = Array::vec({0.5f, -0.3f, 0.8f});

  auto soft = grad_check(store, [](Tape& t) {
    Var h = t.tanh_(t.matmul(t.param("x"), t.param("W")));
    Var lp = t.log_softmax(t.add(h, t.param("q")));
    std::vector<int> set = {0, 2};
    return t.add(t.marginal_nll(lp, set), t.scale(t.logsumexp(t.param("x")), 0.5));
  });
  CHECK_MESSAGE(soft.pass(1e-3), soft.worst_param, "[", soft.worst_index, "] rel ",
                soft.max_rel_err);

  // kinked ops checked at points far from their kinks; dropout is present but
  // grad_check runs eval-mode tapes so it must behave as the identity
  ParamStore store2;
  store2.add("a", {4}).value = Array::vec({1.0f, -0.8f, 0.5f, 2.0f});
  store2.add("b", {4}).value = Array::vec({0.2f, 0.4f, -0.9f, 1.1f});
  store2.add("M", {2, 3}).value = mat(2, 3, {1.0f, -0.5f, 0.3f, 0.2f, 0.8f, -1.2f});
  auto kinked = grad_check(store2, [](Tape& t) {
    Var a = t.param("a");
    Var b = t.dropout(t.param("b"), 0.5);
    Var reduced = t.add(t.sum(t.maxpool_rows(t.param("M"))), t.reduce_max(a));
    std::vector<int> ids = {0, 0, 3};
    Var gath = t.sum(t.gather(t.relu(a), ids));
    return t.add(t.add(t.abs_diff_sum(a, b), t.dot(a, b)), t.add(reduced, gath));
  });
  CHECK_MESSAGE(kinked.pass(1e-3), kinked.worst_param, "[", kinked.worst_index, "] rel ",
                kinked.max_rel_err);

  // selection plumbing: rows / concat_cols / row / slice / add_rowwise / mean_rows
  ParamStore store3;
  store3.add("M", {3, 2}).value = mat(3, 2, {0.1f, 0.9f, -0.4f, 0.6f, 1.3f, -0.2f});
  store3.add("c", {2}).value = Array::vec({0.25f, -0.75f});
  auto plumbing = grad_check(store3, [](Tape& t) {
    Var M = t.param("M");
    std::vector<int> rid = {2, 0};
    Var sel = t.rows(M, rid);
    Var two[] = {sel, sel};
    Var wide = t.concat_cols(two);             // [2,4]
    Var v = t.slice(t.row(wide, 1), 1, 4);     // [3]
    Var m2 = t.mean_rows(t.add_rowwise(M, t.param("c")));
    return t.add(t.sum(v), t.sum(t.sigmoid(m2)));
  });
  CHECK_MESSAGE(plumbing.pass(1e-3), plumbing.worst_param, "[", plumbing.worst_index,
                "] rel ", plumbing.max_rel_err);
}
