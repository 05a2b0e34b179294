#include <vector>

#include "doctest.h"
#include "somnus/common.hpp"
#include "somnus/nn/graph.hpp"
#include "support/testutil.hpp"

using namespace somnus;
using nn::Mat;
using nn::Var;
using testutil::check_gradients;
using testutil::rand_mat;

namespace {

// Reduces an arbitrary matrix output to a scalar with a fixed random probe so
// every element's gradient participates.
Var probe(const Var& x, uint64_t seed = 7) {
  Rng rng(seed);
  return nn::sum(nn::mul(x, nn::constant(rand_mat(rng, x.rows(), x.cols()))));
}

}  // namespace

TEST_CASE("backward requires a scalar root") {
  Var x(Mat::Ones(2, 2), true);
  CHECK_THROWS_AS(nn::backward(x), Error);
  Var s = nn::sum(x);
  nn::backward(s);
  CHECK(x.grad() == Mat::Ones(2, 2));
}

TEST_CASE("ops on constants are pruned from the tape") {
  Var a = nn::constant(Mat::Ones(3, 3));
  Var b = nn::constant(Mat::Ones(3, 3));
  Var y = nn::sum(nn::matmul(a, b));
  CHECK_FALSE(y.requires_grad());
  nn::backward(y);  // no-op aside from seeding the root
  CHECK_FALSE(a.has_grad());
}

TEST_CASE("detach blocks gradient flow") {
  Var x(Mat::Constant(2, 2, 3.0), true);
  Var y = nn::sum(nn::mul(nn::detach(x), x));
  nn::backward(y);
  CHECK(x.grad() == Mat::Constant(2, 2, 3.0));
}

TEST_CASE("gradient accumulates across repeated use") {
  Var x(Mat::Constant(1, 1, 2.0), true);
  Var y = nn::sum(nn::mul(x, x));
  nn::backward(y);
  CHECK(x.grad()(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("elementwise and arithmetic op gradients") {
  Rng rng(11);
  const Mat a = rand_mat(rng, 3, 4), b = rand_mat(rng, 3, 4);
  check_gradients([](auto& v) { return probe(nn::add(v[0], v[1])); }, {a, b});
  check_gradients([](auto& v) { return probe(nn::sub(v[0], v[1])); }, {a, b});
  check_gradients([](auto& v) { return probe(nn::mul(v[0], v[1])); }, {a, b});
  check_gradients([](auto& v) { return probe(nn::neg(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::scale(v[0], -1.7)); }, {a});
  check_gradients([](auto& v) { return probe(nn::add_scalar(v[0], 0.3)); }, {a});
  check_gradients([](auto& v) { return probe(nn::square(v[0])); }, {a});
}

TEST_CASE("matmul and transpose gradients") {
  Rng rng(12);
  const Mat a = rand_mat(rng, 3, 5), b = rand_mat(rng, 5, 2);
  check_gradients([](auto& v) { return probe(nn::matmul(v[0], v[1])); }, {a, b});
  check_gradients([](auto& v) { return probe(nn::transpose(v[0])); }, {a});
}

TEST_CASE("broadcast op gradients") {
  Rng rng(13);
  const Mat a = rand_mat(rng, 4, 3);
  const Mat r = rand_mat(rng, 1, 3), c = rand_mat(rng, 4, 1);
  check_gradients([](auto& v) { return probe(nn::add_rowvec(v[0], v[1])); },
                  {a, r});
  check_gradients([](auto& v) { return probe(nn::add_colvec(v[0], v[1])); },
                  {a, c});
  check_gradients([](auto& v) { return probe(nn::mul_rowvec(v[0], v[1])); },
                  {a, r});
  check_gradients([](auto& v) { return probe(nn::mul_colvec(v[0], v[1])); },
                  {a, c});
  check_gradients([](auto& v) { return probe(nn::expand_rows(v[0], 5)); }, {r});
}

TEST_CASE("reduction gradients") {
  Rng rng(14);
  const Mat a = rand_mat(rng, 3, 4);
  check_gradients([](auto& v) { return probe(nn::rowwise_sum(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::colwise_sum(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::rowwise_mean(v[0])); }, {a});
  check_gradients([](auto& v) { return nn::sum(v[0]); }, {a});
  check_gradients([](auto& v) { return nn::mean(v[0]); }, {a});
}

TEST_CASE("slicing, concatenation and gather gradients") {
  Rng rng(15);
  const Mat a = rand_mat(rng, 5, 4), b = rand_mat(rng, 2, 4);
  const Mat c = rand_mat(rng, 5, 3);
  check_gradients([](auto& v) { return probe(nn::slice_rows(v[0], 1, 3)); },
                  {a});
  check_gradients([](auto& v) { return probe(nn::slice_cols(v[0], 1, 2)); },
                  {a});
  check_gradients(
      [](auto& v) { return probe(nn::concat_rows({v[0], v[1]})); }, {a, b});
  check_gradients(
      [](auto& v) { return probe(nn::concat_cols({v[0], v[1]})); }, {a, c});
  const std::vector<int> idx{4, 0, 2, 0};
  check_gradients([&](auto& v) { return probe(nn::gather_rows(v[0], idx)); },
                  {a});
}

TEST_CASE("gather with repeated index scatter-adds") {
  Var x(Mat::Identity(3, 3), true);
  Var y = nn::sum(nn::gather_rows(x, {1, 1, 1}));
  nn::backward(y);
  CHECK(x.grad()(1, 1) == doctest::Approx(3.0));
  CHECK(x.grad()(1, 0) == doctest::Approx(3.0));
  CHECK(x.grad()(0, 0) == doctest::Approx(0.0));
  CHECK(x.grad()(2, 0) == doctest::Approx(0.0));
}

TEST_CASE("nonlinearity gradients") {
  Rng rng(16);
  const Mat a = rand_mat(rng, 3, 4);
  const Mat pos = (rand_mat(rng, 3, 4).array().abs() + 0.5).matrix();
  check_gradients([](auto& v) { return probe(nn::exp_op(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::log_op(v[0])); }, {pos});
  check_gradients([](auto& v) { return probe(nn::power(v[0], -0.5)); }, {pos});
  check_gradients([](auto& v) { return probe(nn::tanh_op(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::sigmoid(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::softplus(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::gelu(v[0])); }, {a});
  check_gradients([](auto& v) { return probe(nn::silu(v[0])); }, {a});
}

TEST_CASE("gelu and silu match reference values") {
  Var x(Mat::Constant(1, 1, 1.0));
  CHECK(nn::gelu(x).value()(0, 0) == doctest::Approx(0.8413447461).epsilon(1e-9));
  CHECK(nn::silu(x).value()(0, 0) == doctest::Approx(0.7310585786).epsilon(1e-9));
  Var z(Mat::Constant(1, 1, 0.0));
  CHECK(nn::gelu(z).value()(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("softmax rows: values and gradients") {
  Rng rng(17);
  const Mat a = rand_mat(rng, 4, 5, 2.0);
  Var x(a);
  const Mat s = nn::softmax_rows(x).value();
  for (long i = 0; i < s.rows(); ++i)
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  check_gradients([](auto& v) { return probe(nn::softmax_rows(v[0])); }, {a});
}

TEST_CASE("softmax cross entropy matches manual NLL and gradients") {
  Rng rng(18);
  const Mat logits = rand_mat(rng, 4, 3, 2.0);
  const std::vector<int> labels{2, 0, 1, 1};
  Var x(logits);
  const double loss = nn::softmax_cross_entropy(x, labels).value()(0, 0);
  double expect = 0.0;
  for (long i = 0; i < 4; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double z = (logits.row(i).array() - mx).exp().sum();
    expect -= logits(i, labels[i]) - mx - std::log(z);
  }
  CHECK(loss == doctest::Approx(expect / 4.0).epsilon(1e-12));
  check_gradients(
      [&](auto& v) { return nn::softmax_cross_entropy(v[0], labels); },
      {logits});
}

TEST_CASE("dropout: identity in eval, masked and scaled in train") {
  Rng rng(19);
  const Mat a = Mat::Ones(50, 40);
  Rng mask_rng(5);
  Var x(a, true);
  Var eval_out = nn::dropout(x, 0.5, mask_rng, false);
  CHECK(eval_out.value() == a);

  Var train_out = nn::dropout(x, 0.25, mask_rng, true);
  double kept = 0.0;
  for (long j = 0; j < 40; ++j)
    for (long i = 0; i < 50; ++i) {
      const double v = train_out.value()(i, j);
      CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
      if (v != 0.0) kept += 1.0;
    }
  CHECK(kept / 2000.0 == doctest::Approx(0.75).epsilon(0.05));

  nn::backward(nn::sum(train_out));
  CHECK(x.grad() == train_out.value());  // mask times 1/(1-p) on ones input
}

TEST_CASE("dropout gradient with a replayable mask") {
  Rng rng(20);
  const Mat a = rand_mat(rng, 4, 4);
  check_gradients(
      [](auto& v) {
        Rng mask_rng(99);
        return probe(nn::dropout(v[0], 0.4, mask_rng, true));
      },
      {a});
}

TEST_CASE("causal depthwise conv1d: values and gradients") {
  // Hand value: C=1, K=2, w=[w0 w1], x=[1 2 3]; y_t = w0*x_{t-1} + w1*x_t + b.
  Mat x(3, 1), w(2, 1), b(1, 1);
  x << 1, 2, 3;
  w << 10, 1;
  b << 0.5;
  Var y = nn::causal_conv1d(Var(x), Var(w), Var(b));
  CHECK(y.value()(0, 0) == doctest::Approx(1.5));   // pad*10 + 1*1 + 0.5
  CHECK(y.value()(1, 0) == doctest::Approx(12.5));  // 1*10 + 2*1 + 0.5
  CHECK(y.value()(2, 0) == doctest::Approx(23.5));  // 2*10 + 3*1 + 0.5

  Rng rng(21);
  const Mat xr = rand_mat(rng, 7, 3), wr = rand_mat(rng, 4, 3),
            br = rand_mat(rng, 1, 3);
  check_gradients(
      [](auto& v) { return probe(nn::causal_conv1d(v[0], v[1], v[2])); },
      {xr, wr, br});
}

TEST_CASE("ssm scan: recurrence values and gradients") {
  Mat a(3, 1), bx(3, 1);
  a << 0.5, 0.5, 0.5;
  bx << 1, 1, 1;
  Var h = nn::ssm_scan(Var(a), Var(bx));
  CHECK(h.value()(0, 0) == doctest::Approx(1.0));
  CHECK(h.value()(1, 0) == doctest::Approx(1.5));
  CHECK(h.value()(2, 0) == doctest::Approx(1.75));

  Rng rng(22);
  const Mat ar = (rand_mat(rng, 6, 4).array() * 0.4).matrix();
  const Mat bxr = rand_mat(rng, 6, 4);
  check_gradients([](auto& v) { return probe(nn::ssm_scan(v[0], v[1])); },
                  {ar, bxr});
}

TEST_CASE("rowwise kron and state contraction: values and gradients") {
  Mat u(1, 2), v(1, 3);
  u << 2, 3;
  v << 1, 10, 100;
  const Mat k = nn::rowwise_kron(Var(u), Var(v)).value();
  CHECK(k(0, 0) == 2);
  CHECK(k(0, 2) == 200);
  CHECK(k(0, 3) == 3);
  CHECK(k(0, 5) == 300);

  Mat c(1, 3);
  c << 1, 1, 1;
  const Mat y = nn::contract_state(Var(k), Var(c)).value();
  CHECK(y(0, 0) == doctest::Approx(222.0));
  CHECK(y(0, 1) == doctest::Approx(333.0));

  Rng rng(23);
  const Mat ur = rand_mat(rng, 5, 3), vr = rand_mat(rng, 5, 4);
  check_gradients([](auto& v2) { return probe(nn::rowwise_kron(v2[0], v2[1])); },
                  {ur, vr});
  const Mat hr = rand_mat(rng, 5, 12), cr = rand_mat(rng, 5, 4);
  check_gradients(
      [](auto& v2) { return probe(nn::contract_state(v2[0], v2[1])); },
      {hr, cr});
}

TEST_CASE("composed expression matches finite differences") {
  Rng rng(24);
  const Mat x = rand_mat(rng, 4, 6), w1 = rand_mat(rng, 6, 5),
            w2 = rand_mat(rng, 5, 3);
  check_gradients(
      [](auto& v) {
        auto h = nn::gelu(nn::matmul(v[0], v[1]));
        auto y = nn::softmax_rows(nn::matmul(h, v[2]));
        return nn::mean(nn::square(y));
      },
      {x, w1, w2});
}
