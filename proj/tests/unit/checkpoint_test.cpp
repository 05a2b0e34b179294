#include "doctest.h"
#include "somnus/common.hpp"
#include "somnus/nn/checkpoint.hpp"
#include "support/testutil.hpp"

using namespace somnus;
using nn::Mat;
using nn::Var;
using testutil::rand_mat;

namespace {

nn::Params make_params(Rng& rng) {
  nn::Params params;
  params.push_back({"enc.w", Var(rand_mat(rng, 3, 4), true), false});
  params.push_back({"enc.b", Var(rand_mat(rng, 1, 4), true), false});
  params.push_back({"bn.running_mean", Var(rand_mat(rng, 1, 4), false), true});
  return params;
}

}  // namespace

TEST_CASE("checkpoint round trip restores float32-exact values") {
  testutil::TempDir dir("ckpt");
  Rng rng(1);
  nn::Params params = make_params(rng);
  std::vector<Mat> originals;
  for (auto& p : params) originals.push_back(p.var.value());

  const auto path = dir.path() / "model.ckpt";
  nn::save_checkpoint(path, params, {{"kind", "test"}, {"epoch", 3}});

  for (auto& p : params) p.var.value().setZero();
  nlohmann::json meta;
  nn::load_checkpoint(path, params, &meta);
  CHECK(meta["kind"] == "test");
  CHECK(meta["epoch"] == 3);
  for (size_t i = 0; i < params.size(); ++i) {
    const Mat& got = params[i].var.value();
    for (long r = 0; r < got.rows(); ++r)
      for (long c = 0; c < got.cols(); ++c)
        CHECK(got(r, c) ==
              static_cast<double>(static_cast<float>(originals[i](r, c))));
  }

  // A second save of the loaded values is byte-identical (stable quantization).
  const auto path2 = dir.path() / "model2.ckpt";
  nn::save_checkpoint(path2, params, {{"kind", "test"}, {"epoch", 3}});
  CHECK(testutil::slurp(path) == testutil::slurp(path2));
}

TEST_CASE("checkpoint meta can be read without loading tensors") {
  testutil::TempDir dir("ckptmeta");
  Rng rng(2);
  nn::Params params = make_params(rng);
  const auto path = dir.path() / "m.ckpt";
  nn::save_checkpoint(path, params, {{"note", "hello"}});
  CHECK(nn::read_checkpoint_meta(path)["note"] == "hello");
}

TEST_CASE("checkpoint corruption and mismatch errors") {
  testutil::TempDir dir("ckptbad");
  Rng rng(3);
  nn::Params params = make_params(rng);
  const auto path = dir.path() / "m.ckpt";
  nn::save_checkpoint(path, params, {});

  SUBCASE("bad magic") {
    std::string data = testutil::slurp(path);
    data[0] = 'X';
    testutil::spit(path, data);
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path, params),
                         doctest::Contains("magic"), Error);
  }
  SUBCASE("truncated payload") {
    std::string data = testutil::slurp(path);
    data.resize(data.size() - 5);
    testutil::spit(path, data);
    CHECK_THROWS_AS(nn::load_checkpoint(path, params), Error);
  }
  SUBCASE("corrupted header json") {
    std::string data = testutil::slurp(path);
    data[14] = '\xff';
    testutil::spit(path, data);
    CHECK_THROWS_AS(nn::load_checkpoint(path, params), Error);
  }
  SUBCASE("name mismatch") {
    nn::Params other = params;
    other[1].name = "enc.bias";
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path, other),
                         doctest::Contains("name mismatch"), Error);
  }
  SUBCASE("shape mismatch") {
    nn::Params other = params;
    other[0].var = Var(Mat::Zero(4, 4), true);
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path, other),
                         doctest::Contains("shape mismatch"), Error);
  }
  SUBCASE("tensor count mismatch") {
    nn::Params fewer(params.begin(), params.end() - 1);
    CHECK_THROWS_AS(nn::load_checkpoint(path, fewer), Error);
  }
}

TEST_CASE("float64 serialization changes when any parameter changes") {
  Rng rng(4);
  nn::Params params = make_params(rng);
  const std::string before = nn::serialize_params_f64(params);
  CHECK(before == nn::serialize_params_f64(params));
  params[0].var.value()(0, 0) += 1e-15;
  CHECK(before != nn::serialize_params_f64(params));
}
