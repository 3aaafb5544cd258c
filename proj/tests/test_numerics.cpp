#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vhash/error.hpp"
#include "vhash/numerics.hpp"

using namespace vhash;

TEST_CASE("batch norm of {2, 4} with eps 0 gives -1 and +1") {
  Eigen::MatrixXd h(2, 1);
  h << 2, 4;
  BNSiteStats stats(1, 0.1, 0.0);
  const Eigen::RowVectorXd gamma = Eigen::RowVectorXd::Ones(1);
  const Eigen::RowVectorXd beta = Eigen::RowVectorXd::Zero(1);
  const auto y = bn_forward(h, gamma, &beta, stats, 0, Mode::kTraining, nullptr);
  CHECK(std::abs(y(0, 0) + 1.0) < 1e-12);
  CHECK(std::abs(y(1, 0) - 1.0) < 1e-12);
}

TEST_CASE("inference with unit stats and eps 0 is the affine map") {
  std::mt19937_64 rng(5);
  const auto h = oracle::random_matrix(rng, 3, 4, -2, 2);
  BNSiteStats stats(4, 0.1, 0.0);
  const Eigen::RowVectorXd gamma = Eigen::RowVectorXd::Constant(4, 1.5);
  const Eigen::RowVectorXd beta = Eigen::RowVectorXd::Constant(4, -0.25);
  const auto y = bn_forward(h, gamma, &beta, stats, 0, Mode::kInference, nullptr);
  CHECK((y - ((1.5 * h).array() - 0.25).matrix()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training batch norm output has zero mean and unit variance") {
  std::mt19937_64 rng(9);
  const auto h = oracle::random_matrix(rng, 16, 5, -3, 7);
  BNSiteStats stats(5, 0.1, 0.0);
  const Eigen::RowVectorXd gamma = Eigen::RowVectorXd::Ones(5);
  const auto y = bn_forward(h, gamma, nullptr, stats, 0, Mode::kTraining, nullptr);
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const Eigen::RowVectorXd var = (y.rowwise() - mean).array().square().colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("running statistics fold with momentum per timestep") {
  BNSiteStats stats(1, 0.1, 1e-5);
  CHECK(stats.mean_at(3)(0) == 0.0);
  CHECK(stats.var_at(3)(0) == 1.0);
  const Eigen::RowVectorXd m1 = Eigen::RowVectorXd::Constant(1, 2.0);
  const Eigen::RowVectorXd v1 = Eigen::RowVectorXd::Constant(1, 4.0);
  stats.update(0, m1, v1, 4);
  CHECK(stats.mean_at(0)(0) == 2.0);
  CHECK(stats.var_at(0)(0) == 4.0);
  stats.update(0, Eigen::RowVectorXd::Zero(1), Eigen::RowVectorXd::Zero(1), 4);
  CHECK(std::abs(stats.mean_at(0)(0) - 1.8) < 1e-12);
  CHECK(std::abs(stats.var_at(0)(0) - 3.6) < 1e-12);
  // later steps fall back to the last recorded one
  CHECK(stats.mean_at(7)(0) == stats.mean_at(0)(0));
  // single-row batches carry no variance and leave values alone
  stats.update(0, m1, Eigen::RowVectorXd::Zero(1), 1);
  CHECK(std::abs(stats.mean_at(0)(0) - 1.8) < 1e-12);
}

TEST_CASE("batch norm rejects mismatched shapes") {
  BNSiteStats stats(3, 0.1, 1e-5);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, 4);
  const Eigen::RowVectorXd gamma = Eigen::RowVectorXd::Ones(4);
  CHECK_THROWS_AS(bn_forward(h, gamma, nullptr, stats, 0, Mode::kTraining, nullptr), Error);
}

TEST_CASE("batch norm backward matches central differences") {
  std::mt19937_64 rng(21);
  for (Mode mode : {Mode::kTraining, Mode::kInference}) {
    Eigen::MatrixXd h = oracle::random_matrix(rng, 5, 3, -2, 2);
    const Eigen::MatrixXd w = oracle::random_matrix(rng, 5, 3, -1, 1);
    const Eigen::RowVectorXd gamma = oracle::random_matrix(rng, 1, 3, 0.5, 1.5);
    const Eigen::RowVectorXd beta = oracle::random_matrix(rng, 1, 3, -1, 1);
    BNSiteStats stats(3, 0.1, 1e-5);
    auto loss = [&] { return (bn_forward(h, gamma, &beta, stats, 0, mode, nullptr).array() * w.array()).sum(); };
    BnCache cache;
    bn_forward(h, gamma, &beta, stats, 0, mode, &cache);
    Eigen::RowVectorXd dgamma = Eigen::RowVectorXd::Zero(3);
    Eigen::RowVectorXd dbeta = Eigen::RowVectorXd::Zero(3);
    const Eigen::MatrixXd dh = bn_backward(w, gamma, cache, dgamma, &dbeta);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      const double saved = h.data()[i];
      h.data()[i] = saved + 1e-6;
      const double up = loss();
      h.data()[i] = saved - 1e-6;
      const double down = loss();
      h.data()[i] = saved;
      CHECK(std::abs((up - down) / 2e-6 - dh.data()[i]) < 1e-6);
    }
    CHECK((dbeta - w.colwise().sum()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("sign and straight-through gradient") {
  Eigen::MatrixXd h(1, 5);
  h << -0.3, 0.0, 2.0, -1.0, 1.5;
  Eigen::MatrixXd expected(1, 5);
  expected << -1, 1, 1, -1, 1;
  CHECK(sgn_forward(h) == expected);
  const Eigen::MatrixXd up = Eigen::MatrixXd::Constant(1, 5, 3.0);
  Eigen::MatrixXd grad(1, 5);
  grad << 3, 3, 0, 3, 0;
  CHECK(sgn_backward(up, h) == grad);
}

TEST_CASE("adam first step moves each entry by lr against the gradient sign") {
  Param p("w", Eigen::MatrixXd::Zero(1, 3));
  p.grad << 0.5, -2.0, 1e-3;
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 0};
  Param* ps[] = {&p};
  adam_step(ps, cfg);
  CHECK(cfg.step == 1);
  CHECK(std::abs(p.value(0, 0) + 0.1) < 1e-6);
  CHECK(std::abs(p.value(0, 1) - 0.1) < 1e-6);
  CHECK(std::abs(p.value(0, 2) + 0.1) < 1e-4);
  CHECK(p.grad.isZero());
}

TEST_CASE("adam with zero gradient leaves values unchanged") {
  Param p("w", Eigen::MatrixXd::Constant(2, 2, 0.7));
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 0};
  Param* ps[] = {&p};
  adam_step(ps, cfg);
  CHECK(p.value == Eigen::MatrixXd::Constant(2, 2, 0.7));
}

TEST_CASE("adam refuses non-finite gradients") {
  Param p("w", Eigen::MatrixXd::Zero(1, 1));
  p.grad(0, 0) = std::nan("");
  AdamConfig cfg;
  Param* ps[] = {&p};
  CHECK_THROWS_AS(adam_step(ps, cfg), Error);
}

TEST_CASE("grad_check agrees on a quadratic and ignores unused parameters") {
  Param a("a", Eigen::MatrixXd(1, 2));
  a.value << 1.5, -0.5;
  Param unused("u", Eigen::MatrixXd::Constant(1, 1, 3.0));
  auto loss = [&] { return a.value.squaredNorm() + 2.0 * a.value(0, 0); };
  auto fill = [&] {
    a.grad = 2.0 * a.value;
    a.grad(0, 0) += 2.0;
  };
  Param* ps[] = {&a, &unused};
  const auto r = grad_check(loss, fill, ps, 1e-4);
  CHECK(r.checked == 3);
  CHECK(r.max_rel_error < 1e-8);

  auto wrong = [&] { a.grad = a.value; };
  const auto bad = grad_check(loss, wrong, ps, 1e-4);
  CHECK(bad.max_rel_error > 0.1);
  CHECK(bad.worst_param == "a");
}

TEST_CASE("grad_check rejects a nondeterministic loss") {
  Param a("a", Eigen::MatrixXd::Zero(1, 1));
  int calls = 0;
  Param* ps[] = {&a};
  CHECK_THROWS_AS(grad_check([&] { return static_cast<double>(++calls); }, [] {}, ps, 1e-4), Error);
}

TEST_CASE("uniform helpers stay in range") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform(rng, -2.0, 3.0);
    CHECK_UNARY(u >= -2.0);
    CHECK_UNARY(u < 3.0);
    CHECK_UNARY(uniform_index(rng, 7) < 7);
  }
}
