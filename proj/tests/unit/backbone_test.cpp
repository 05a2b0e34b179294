#include <cmath>

#include "doctest.h"
#include "somnus/common.hpp"
#include "somnus/model/backbone.hpp"
#include "support/testutil.hpp"

using namespace somnus;
using namespace somnus::nn;
using namespace somnus::model;

namespace {

BackboneConfig toy_cfg() {
  BackboneConfig cfg;
  cfg.enc_dim = 16;
  cfg.enc_depth = 2;
  cfg.enc_heads = 2;
  cfg.dec_dim = 8;
  cfg.dec_depth = 1;
  cfg.dec_heads = 2;
  cfg.projection_hidden = {12, 8};
  cfg.mlp_ratio = 2;
  return cfg;
}

Mat normalize_rows(Mat x) {
  for (long i = 0; i < x.rows(); ++i) x.row(i) /= x.row(i).norm();
  return x;
}

double oracle_interleaved(const Mat& a, const Mat& b, double tau) {
  const long n = a.rows();
  Mat z(2 * n, a.cols());
  for (long k = 0; k < n; ++k) {
    z.row(2 * k) = a.row(k);
    z.row(2 * k + 1) = b.row(k);
  }
  double total = 0.0;
  for (long i = 0; i < 2 * n; ++i) {
    const long partner = i ^ 1;
    double mx = -1e300;
    for (long j = 0; j < 2 * n; ++j) {
      if (j == i) continue;
      mx = std::max(mx, z.row(i).dot(z.row(j)) / tau);
    }
    double denom = 0.0;
    for (long j = 0; j < 2 * n; ++j) {
      if (j == i) continue;
      denom += std::exp(z.row(i).dot(z.row(j)) / tau - mx);
    }
    total += -(z.row(i).dot(z.row(partner)) / tau - mx) + std::log(denom);
  }
  return total / static_cast<double>(2 * n);
}

double oracle_banks(const Mat& a, const Mat& b, double tau) {
  const long n = a.rows();
  auto dir = [&](const Mat& u, const Mat& v) {
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
      double mx = -1e300;
      for (long j = 0; j < n; ++j)
        mx = std::max(mx, u.row(i).dot(v.row(j)) / tau);
      double denom = 0.0;
      for (long j = 0; j < n; ++j)
        denom += std::exp(u.row(i).dot(v.row(j)) / tau - mx);
      total += -(u.row(i).dot(v.row(i)) / tau - mx) + std::log(denom);
    }
    return total / static_cast<double>(n);
  };
  return 0.5 * (dir(a, b) + dir(b, a));
}

}  // namespace

TEST_CASE("nt_xent matches a brute-force oracle in both modes") {
  Rng rng(41);
  const Mat a = normalize_rows(testutil::rand_mat(rng, 5, 4));
  const Mat b = normalize_rows(testutil::rand_mat(rng, 5, 4));
  for (double tau : {0.05, 0.3, 1.7}) {
    CHECK(nt_xent(Var(a), Var(b), tau, NtXentMode::interleaved).value()(0, 0) ==
          doctest::Approx(oracle_interleaved(a, b, tau)).epsilon(1e-12));
    CHECK(nt_xent(Var(a), Var(b), tau, NtXentMode::banks).value()(0, 0) ==
          doctest::Approx(oracle_banks(a, b, tau)).epsilon(1e-12));
  }
}

TEST_CASE("nt_xent tends to log(2N-1) as temperature grows") {
  Rng rng(42);
  const long n = 6;
  const Mat a = normalize_rows(testutil::rand_mat(rng, n, 8));
  const Mat b = normalize_rows(testutil::rand_mat(rng, n, 8));
  const double loss = nt_xent(Var(a), Var(b), 1e9).value()(0, 0);
  CHECK(std::abs(loss - std::log(2.0 * n - 1.0)) < 1e-6);
}

TEST_CASE("nt_xent is invariant to reordering the pairs") {
  Rng rng(43);
  const long n = 7;
  const Mat a = normalize_rows(testutil::rand_mat(rng, n, 5));
  const Mat b = normalize_rows(testutil::rand_mat(rng, n, 5));
  std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
  Mat ap(n, 5), bp(n, 5);
  for (long k = 0; k < n; ++k) {
    ap.row(k) = a.row(perm[static_cast<size_t>(k)]);
    bp.row(k) = b.row(perm[static_cast<size_t>(k)]);
  }
  const double l0 = nt_xent(Var(a), Var(b), 0.2).value()(0, 0);
  const double l1 = nt_xent(Var(ap), Var(bp), 0.2).value()(0, 0);
  CHECK(l0 == doctest::Approx(l1).epsilon(1e-12));
}

TEST_CASE("nt_xent rejects degenerate inputs") {
  Rng rng(44);
  const Mat one = normalize_rows(testutil::rand_mat(rng, 1, 4));
  const Mat two = normalize_rows(testutil::rand_mat(rng, 2, 4));
  const Mat two3 = normalize_rows(testutil::rand_mat(rng, 2, 3));
  CHECK_THROWS_AS(nt_xent(Var(one), Var(one), 0.1), Error);
  CHECK_THROWS_AS(nt_xent(Var(two), Var(two3), 0.1), Error);
  CHECK_THROWS_AS(nt_xent(Var(two), Var(two), 0.0), Error);
}

TEST_CASE("masked_mse touches only the listed rows") {
  Mat target = Mat::Zero(4, 3);
  Mat rec = Mat::Zero(4, 3);
  rec.row(2).setConstant(-1.0);
  CHECK(masked_mse(Var(target), Var(rec), {2}).value()(0, 0) == 1.0);

  Mat rec2 = rec;
  rec2.row(0).setConstant(123.0);
  CHECK(masked_mse(Var(target), Var(rec2), {2}).value()(0, 0) == 1.0);

  rec2.row(1).setConstant(2.0);
  CHECK(masked_mse(Var(target), Var(rec2), {1, 2}).value()(0, 0) ==
        doctest::Approx(2.5).epsilon(1e-15));

  CHECK_THROWS_AS(masked_mse(Var(target), Var(rec), {}), Error);
  Mat wrong = Mat::Zero(3, 3);
  CHECK_THROWS_AS(masked_mse(Var(target), Var(wrong), {1}), Error);
}

TEST_CASE("unshuffle_order inverts the kept/masked packing") {
  MaskPlan plan;
  plan.kept = {0, 2, 3};
  plan.masked = {1, 4};
  const std::vector<int> order = unshuffle_order(plan, 5);
  CHECK(order == std::vector<int>{0, 3, 1, 2, 4});

  MaskPlan dup;
  dup.kept = {0, 1};
  dup.masked = {1, 2};
  CHECK_THROWS_AS(unshuffle_order(dup, 3), Error);
  MaskPlan sparse;
  sparse.kept = {0};
  sparse.masked = {2};
  CHECK_THROWS_AS(unshuffle_order(sparse, 3), Error);
  MaskPlan lop;
  lop.kept = {0, 1, 2};
  lop.masked = {};
  CHECK_THROWS_AS(unshuffle_order(lop, 3), Error);
  MaskPlan oob;
  oob.kept = {0, 1};
  oob.masked = {5};
  CHECK_THROWS_AS(unshuffle_order(oob, 3), Error);
}

TEST_CASE("frame tokens take the patch embedding plus sinusoidal positions") {
  Rng rng(7);
  Backbone bb(toy_cfg(), 10, rng);
  Rng data_rng(8);
  const Mat frames = testutil::rand_mat(data_rng, 37, 10);
  Var toks = bb.tokens_with_pos(frames);
  CHECK(toks.rows() == 37);
  CHECK(toks.cols() == 16);

  bb.patch_embed.w.value().setZero();
  bb.patch_embed.b.value().setZero();
  const Mat expect = sinusoidal_positions(37, 16);
  CHECK((bb.tokens_with_pos(frames).value() - expect).cwiseAbs().maxCoeff() ==
        0.0);

  const Mat other = testutil::rand_mat(data_rng, 37, 10);
  const Mat e1 = bb.encode_epoch(frames).value();
  const Mat e2 = bb.encode_epoch(other).value();
  CHECK((e1 - e2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a standard epoch embeds to one token per frame") {
  BackboneConfig cfg = toy_cfg();
  Rng rng(9);
  Backbone bb(cfg, 300, rng);
  Rng data_rng(10);
  const Mat frames = testutil::rand_mat(data_rng, 37, 300);
  Var e = bb.encode_epoch(frames);
  CHECK(e.rows() == 37);
  CHECK(e.cols() == cfg.enc_dim);
}

TEST_CASE("a single view yields a unit projection and nonnegative recon") {
  Rng rng(11);
  Backbone bb(toy_cfg(), 10, rng);
  Rng data_rng(12);
  const Mat frames = testutil::rand_mat(data_rng, 6, 10);
  MaskPlan plan;
  plan.kept = {0, 1, 4};
  plan.masked = {2, 3, 5};
  Rng fwd_rng(13);
  auto out = bb.forward_view(frames, plan, fwd_rng, false);
  CHECK(out.proj.rows() == 1);
  CHECK(out.proj.cols() == 8);
  CHECK(out.proj.value().norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(out.recon.value()(0, 0) >= 0.0);

  MaskPlan bad;
  bad.kept = {0, 1, 2, 3, 4, 5};
  CHECK_THROWS_AS(bb.forward_view(frames, bad, fwd_rng, false), Error);
}

TEST_CASE("the pretraining step sums recon and contrastive terms") {
  BackboneConfig cfg = toy_cfg();
  cfg.mask_ratio = 0.5;
  Rng rng(14);
  Backbone bb(cfg, 10, rng);
  Rng data_rng(15);
  std::vector<Mat> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(testutil::rand_mat(data_rng, 6, 10));
  Rng step_rng(16);
  auto losses = bb.pretrain_step(batch, step_rng, false);
  CHECK(std::isfinite(losses.total.value()(0, 0)));
  CHECK(losses.recon.value()(0, 0) >= 0.0);
  CHECK(losses.contra.value()(0, 0) > 0.0);
  CHECK(losses.total.value()(0, 0) ==
        doctest::Approx(losses.recon.value()(0, 0) + losses.contra.value()(0, 0))
            .epsilon(1e-12));

  std::vector<Mat> single{batch[0]};
  Rng r2(17);
  CHECK_THROWS_AS(bb.pretrain_step(single, r2, false), Error);
}

TEST_CASE("identically seeded backbones produce identical losses") {
  BackboneConfig cfg = toy_cfg();
  Rng r1(21), r2(21);
  Backbone b1(cfg, 10, r1), b2(cfg, 10, r2);
  Rng data_rng(22);
  std::vector<Mat> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(testutil::rand_mat(data_rng, 5, 10));
  Rng sa(23), sb(23);
  const double la = b1.pretrain_step(batch, sa, false).total.value()(0, 0);
  const double lb = b2.pretrain_step(batch, sb, false).total.value()(0, 0);
  CHECK(la == lb);
}

TEST_CASE("backbone pretraining loss passes a finite-difference check") {
  BackboneConfig cfg;
  cfg.enc_dim = 8;
  cfg.enc_depth = 1;
  cfg.enc_heads = 2;
  cfg.dec_dim = 4;
  cfg.dec_depth = 1;
  cfg.dec_heads = 2;
  cfg.projection_hidden = {6, 5};
  cfg.mlp_ratio = 1;
  cfg.mask_ratio = 0.5;
  // A soft temperature keeps the loss surface gentle enough for h = 1e-5
  // central differences; the sharp default only scales the same graph.
  cfg.temperature = 0.5;
  Rng rng(31);
  Backbone bb(cfg, 6, rng);
  Rng data_rng(32);
  std::vector<Mat> batch;
  for (int i = 0; i < 2; ++i)
    batch.push_back(testutil::rand_mat(data_rng, 5, 6, 0.5));

  Params params;
  bb.collect(params, "bb");
  std::vector<Var> vars;
  for (auto& p : params) vars.push_back(p.var);
  auto loss = [&]() {
    Rng r(777);
    return bb.pretrain_step(batch, r, false).total;
  };
  testutil::check_param_gradients(loss, vars, 1e-4, 6, 1e-6);
}

TEST_CASE("config validation rejects inconsistent settings") {
  BackboneConfig cfg = toy_cfg();
  cfg.enc_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = toy_cfg();
  cfg.mask_ratio = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = toy_cfg();
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = toy_cfg();
  Rng rng(1);
  CHECK_THROWS_AS(Backbone(cfg, 0, rng), Error);
}
