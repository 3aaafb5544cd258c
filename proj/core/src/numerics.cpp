#include "vhash/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "vhash/error.hpp"

namespace vhash {

Param::Param(std::string n, Eigen::MatrixXd init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())),
      m(Eigen::MatrixXd::Zero(value.rows(), value.cols())),
      v(Eigen::MatrixXd::Zero(value.rows(), value.cols())) {}

Eigen::RowVectorXd BNSiteStats::mean_at(std::size_t t) const {
  if (mean.empty()) return Eigen::RowVectorXd::Zero(dim);
  return mean[std::min(t, mean.size() - 1)];
}

Eigen::RowVectorXd BNSiteStats::var_at(std::size_t t) const {
  if (var.empty()) return Eigen::RowVectorXd::Ones(dim);
  return var[std::min(t, var.size() - 1)];
}

void BNSiteStats::update(std::size_t t, const Eigen::RowVectorXd& batch_mean,
                         const Eigen::RowVectorXd& batch_var, Eigen::Index batch_rows) {
  while (mean.size() <= t) {
    const bool first_sight_of_t = mean.size() == t;
    if (first_sight_of_t && batch_rows >= 2) {
      mean.push_back(batch_mean);
      var.push_back(batch_var);
      return;
    }
    mean.push_back(mean_at(mean.size()));
    var.push_back(var_at(var.size()));
  }
  if (batch_rows < 2) return;
  mean[t] = (1.0 - momentum) * mean[t] + momentum * batch_mean;
  var[t] = (1.0 - momentum) * var[t] + momentum * batch_var;
}

Eigen::MatrixXd bn_forward(const Eigen::MatrixXd& h, const Eigen::RowVectorXd& gamma,
                           const Eigen::RowVectorXd* beta, const BNSiteStats& stats, std::size_t t, Mode mode,
                           BnCache* cache, BatchMoments* moments) {
  if (h.cols() != gamma.size() || h.cols() != stats.dim || (beta && beta->size() != gamma.size())) {
    throw Error(ErrorCode::kShapeMismatch, "batch-norm input has " + std::to_string(h.cols()) +
                                               " columns, site expects " + std::to_string(stats.dim));
  }
  if (h.rows() == 0) throw Error(ErrorCode::kShapeMismatch, "empty batch");
  Eigen::RowVectorXd mu, var;
  if (mode == Mode::kTraining) {
    const double n = static_cast<double>(h.rows());
    mu = h.colwise().mean();
    var = (h.rowwise() - mu).array().square().colwise().sum().matrix() / n;
    if (moments) *moments = BatchMoments{mu, var, h.rows()};
  } else {
    mu = stats.mean_at(t);
    var = stats.var_at(t);
  }
  const Eigen::RowVectorXd inv_std = (var.array() + stats.eps).rsqrt().matrix();
  Eigen::MatrixXd xhat = ((h.rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
  Eigen::MatrixXd y = (xhat.array().rowwise() * gamma.array()).matrix();
  if (beta) y.rowwise() += *beta;
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
    cache->training = mode == Mode::kTraining;
  }
  return y;
}

Eigen::MatrixXd bn_transform(const Eigen::MatrixXd& h, const Eigen::RowVectorXd& gamma,
                             const Eigen::RowVectorXd* beta, BNSiteStats& stats, std::size_t t, Mode mode,
                             BnCache* cache) {
  BatchMoments moments;
  Eigen::MatrixXd y = bn_forward(h, gamma, beta, stats, t, mode, cache, &moments);
  if (mode == Mode::kTraining) stats.update(t, moments.mean, moments.var, moments.rows);
  return y;
}

Eigen::MatrixXd bn_backward(const Eigen::MatrixXd& dy, const Eigen::RowVectorXd& gamma, const BnCache& cache,
                            Eigen::RowVectorXd& dgamma, Eigen::RowVectorXd* dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbeta) *dbeta += dy.colwise().sum();
  const Eigen::MatrixXd dxhat = (dy.array().rowwise() * gamma.array()).matrix();
  if (!cache.training) return (dxhat.array().rowwise() * cache.inv_std.array()).matrix();

  const double n = static_cast<double>(dy.rows());
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum().matrix();
  Eigen::MatrixXd dx = (n * dxhat.array()).matrix();
  dx.rowwise() -= sum_dxhat;
  dx -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().rowwise() * (cache.inv_std.array() / n)).matrix();
}

Eigen::MatrixXd sgn_forward(const Eigen::MatrixXd& h) {
  return h.unaryExpr([](double x) { return x >= 0.0 ? 1.0 : -1.0; });
}

Eigen::MatrixXd sgn_backward(const Eigen::MatrixXd& upstream, const Eigen::MatrixXd& h) {
  return upstream.binaryExpr(h, [](double g, double x) { return std::abs(x) <= 1.0 ? g : 0.0; });
}

void adam_step(std::span<Param* const> params, AdamConfig& cfg) {
  for (const Param* p : params) {
    if (!p->grad.allFinite()) throw Error(ErrorCode::kNonFiniteGradient, p->name);
  }
  ++cfg.step;
  const double t = static_cast<double>(cfg.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (Param* p : params) {
    p->m = cfg.beta1 * p->m + (1.0 - cfg.beta1) * p->grad;
    p->v = cfg.beta2 * p->v + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
    const auto m_hat = p->m.array() / correction1;
    const auto v_hat = p->v.array() / correction2;
    p->value.array() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_hat);
    p->zero_grad();
  }
}

GradCheckResult grad_check(const std::function<double()>& loss, const std::function<void()>& fill_grads,
                           std::span<Param* const> params, double h, double floor) {
  const double l0 = loss();
  if (loss() != l0) throw Error(ErrorCode::kNonDeterministicLoss, "loss changed between identical evaluations");

  for (Param* p : params) p->zero_grad();
  fill_grads();

  GradCheckResult result;
  for (Param* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = rel;
        result.worst_param = p->name;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace vhash
