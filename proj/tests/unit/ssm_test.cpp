#include "doctest.h"
#include "somnus/common.hpp"
#include "somnus/nn/ssm.hpp"
#include "support/testutil.hpp"

using namespace somnus;
using nn::Mat;
using nn::Var;
using testutil::check_gradients;
using testutil::rand_mat;

TEST_CASE("sequential and blelloch scans agree") {
  Rng rng(1);
  for (long t_len : {1L, 2L, 3L, 7L, 8L, 37L, 100L}) {
    Mat a(t_len, 5), b(t_len, 5);
    for (long t = 0; t < t_len; ++t)
      for (long j = 0; j < 5; ++j) {
        a(t, j) = rng.uniform(0.05, 0.95);
        b(t, j) = rng.normal();
      }
    const Mat hs = nn::scan_sequential(a, b);
    const Mat hb = nn::scan_blelloch(a, b);
    CHECK((hs - hb).array().abs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("scan on a hand example") {
  Mat a(3, 1), b(3, 1);
  a << 2.0, 3.0, 4.0;
  b << 1.0, 1.0, 1.0;
  // h = [1, 3*1+1, 4*4+1]
  const Mat h = nn::scan_blelloch(a, b);
  CHECK(h(0, 0) == doctest::Approx(1.0));
  CHECK(h(1, 0) == doctest::Approx(4.0));
  CHECK(h(2, 0) == doctest::Approx(17.0));
  CHECK((nn::scan_sequential(a, b) - h).norm() == doctest::Approx(0.0));
}

TEST_CASE("autodiff ssm_scan matches the value-domain scan") {
  Rng rng(2);
  Mat a(9, 4), b(9, 4);
  for (long t = 0; t < 9; ++t)
    for (long j = 0; j < 4; ++j) {
      a(t, j) = rng.uniform(0.1, 0.9);
      b(t, j) = rng.normal();
    }
  const Mat via_graph = nn::ssm_scan(Var(a), Var(b)).value();
  CHECK((via_graph - nn::scan_sequential(a, b)).norm() < 1e-14);
}

TEST_CASE("selective ssm layer: shapes, determinism and dt_rank rule") {
  Rng rng(3);
  nn::SelectiveSsmLayer layer(32, 16, 4, 2, rng);
  CHECK(layer.dt_rank == 2);  // ceil(32/16)
  CHECK(layer.d_inner == 64);
  nn::SelectiveSsmLayer tiny(8, 4, 3, 2, rng);
  CHECK(tiny.dt_rank == 1);

  const Mat u = rand_mat(rng, 10, 32);
  const Mat y1 = layer.forward(Var(u)).value();
  const Mat y2 = layer.forward(Var(u)).value();
  CHECK(y1.rows() == 10);
  CHECK(y1.cols() == 32);
  CHECK((y1 - y2).norm() == doctest::Approx(0.0));
}

TEST_CASE("selective ssm layer with all-zero parameters returns zero") {
  Rng rng(4);
  nn::SsmStack stack(2, 12, 4, 3, 2, rng);
  nn::Params params;
  stack.collect(params, "ssm");
  for (auto& p : params) p.var.value().setZero();
  const Mat u = rand_mat(rng, 6, 12);
  const Mat y = stack.forward(Var(u)).value();
  CHECK(y.norm() == doctest::Approx(0.0));
}

TEST_CASE("selective ssm layer end-to-end gradients") {
  Rng rng(5);
  nn::SelectiveSsmLayer layer(6, 3, 3, 2, rng);
  nn::Params params;
  layer.collect(params, "ssm");
  const Mat u = rand_mat(rng, 5, 6);

  std::vector<Mat> inputs{u};
  for (auto& p : params) inputs.push_back(p.var.value());
  check_gradients(
      [&](auto& v) {
        nn::SelectiveSsmLayer l2(6, 3, 3, 2, rng);
        size_t k = 1;
        l2.in_proj.w = v[k++];
        l2.conv_w = v[k++];
        l2.conv_b = v[k++];
        l2.x_proj.w = v[k++];
        l2.dt_proj.w = v[k++];
        l2.dt_proj.b = v[k++];
        l2.a_log = v[k++];
        l2.d_skip = v[k++];
        l2.out_proj.w = v[k++];
        REQUIRE(k == v.size());
        Rng probe_rng(6);
        return nn::sum(nn::mul(l2.forward(v[0]),
                               nn::constant(rand_mat(probe_rng, 5, 6))));
      },
      inputs, 1e-5, 8);
}

TEST_CASE("ssm stack collects distinct per-layer parameters") {
  Rng rng(7);
  nn::SsmStack stack(2, 8, 4, 3, 2, rng);
  nn::Params params;
  stack.collect(params, "tcm.ssm");
  CHECK(params.size() == 18);  // 9 tensors per layer
  CHECK(params[0].name == "tcm.ssm.layer0.in_proj.w");
  CHECK(params[9].name == "tcm.ssm.layer1.in_proj.w");
}
