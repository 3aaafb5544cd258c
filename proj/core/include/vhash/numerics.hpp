#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace vhash {

enum class Mode { kTraining, kInference };

// A trainable tensor with its gradient and Adam moments. Vectors are stored
// as 1 x n matrices so they broadcast against row-major batches.
struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;

  Param() = default;
  Param(std::string n, Eigen::MatrixXd init);

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

inline constexpr double kDefaultBnMomentum = 0.1;
inline constexpr double kDefaultBnEps = 1e-5;

// Running mean/variance kept separately for each timestep of one
// normalization site. Timesteps past the last trained one reuse it.
struct BNSiteStats {
  Eigen::Index dim = 0;
  double momentum = kDefaultBnMomentum;
  double eps = kDefaultBnEps;
  std::vector<Eigen::RowVectorXd> mean;
  std::vector<Eigen::RowVectorXd> var;

  BNSiteStats() = default;
  BNSiteStats(Eigen::Index d, double mom, double e) : dim(d), momentum(mom), eps(e) {}

  std::size_t max_train_timestep() const { return mean.size(); }
  // 0-based timestep; falls back to the last stored step, or (0, 1) when
  // nothing has been recorded yet.
  Eigen::RowVectorXd mean_at(std::size_t t) const;
  Eigen::RowVectorXd var_at(std::size_t t) const;

  // Folds a batch's statistics into step t (0-based). Single-row batches
  // carry no variance information and only extend the table.
  void update(std::size_t t, const Eigen::RowVectorXd& batch_mean, const Eigen::RowVectorXd& batch_var,
              Eigen::Index batch_rows);
};

struct BatchMoments {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
  Eigen::Index rows = 0;
};

struct BnCache {
  Eigen::MatrixXd xhat;     // normalized values before the affine map
  Eigen::RowVectorXd inv_std;
  bool training = false;
};

// BN(h; gamma, beta) over the rows of `h` at timestep t (0-based). `beta`
// may be null for sites whose shift is fixed at zero. Does not touch the
// running statistics; in training mode the batch moments are reported
// through `moments` so the caller can commit them.
Eigen::MatrixXd bn_forward(const Eigen::MatrixXd& h, const Eigen::RowVectorXd& gamma,
                           const Eigen::RowVectorXd* beta, const BNSiteStats& stats, std::size_t t, Mode mode,
                           BnCache* cache, BatchMoments* moments = nullptr);

// bn_forward followed by the running-statistics update in training mode.
Eigen::MatrixXd bn_transform(const Eigen::MatrixXd& h, const Eigen::RowVectorXd& gamma,
                             const Eigen::RowVectorXd* beta, BNSiteStats& stats, std::size_t t, Mode mode,
                             BnCache* cache = nullptr);

// Returns dL/dh; accumulates into dgamma and (if non-null) dbeta.
Eigen::MatrixXd bn_backward(const Eigen::MatrixXd& dy, const Eigen::RowVectorXd& gamma, const BnCache& cache,
                            Eigen::RowVectorXd& dgamma, Eigen::RowVectorXd* dbeta);

// Hard sign with sign(0) = +1.
Eigen::MatrixXd sgn_forward(const Eigen::MatrixXd& h);
// Straight-through gradient: upstream * 1(|h| <= 1).
Eigen::MatrixXd sgn_backward(const Eigen::MatrixXd& upstream, const Eigen::MatrixXd& h);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  std::uint64_t step = 0;
};

void adam_step(std::span<Param* const> params, AdamConfig& cfg);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares `Param::grad` (filled by `fill_grads` at the current values)
// against central differences of `loss`. Relative error per entry is
// |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<double()>& loss, const std::function<void()>& fill_grads,
                           std::span<Param* const> params, double h, double floor = 1e-12);

// Deterministic uniform doubles from a 64-bit engine, independent of the
// standard library's distribution implementations.
template <typename Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Engine>
double uniform(Engine& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

template <typename Engine>
std::uint64_t uniform_index(Engine& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace vhash
