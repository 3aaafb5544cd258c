#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace vhash {

struct LossBreakdown {
  double recon = 0.0;
  double memory = 0.0;
  double diversity = 0.0;
  double total = 0.0;
};

// (1 / (L * M)) * sum_t ||recon_t - target_t||^2. `grad` (optional)
// receives dLoss/drecon.
double recon_loss(const Eigen::MatrixXd& recon, const Eigen::MatrixXd& target, Eigen::Index hash_bits,
                  Eigen::MatrixXd* grad = nullptr);

struct GateLossGrads {
  Eigen::MatrixXd forget, input, output;
};

// Memory constraint on the last encoder layer's post-sigmoid gates
// (M_e x L each). Transition t pairs d_series[t] with the gates of step t.
// Above the threshold the gates are pushed toward a reset (f, o -> 0,
// i -> 1), below it toward retention; each term is weighted by d_t and the
// sum scaled by 1 / (3 L^2 M_e) so the value lies in [0, 1].
double memory_loss(const Eigen::MatrixXd& forget, const Eigen::MatrixXd& input, const Eigen::MatrixXd& output,
                   const Eigen::VectorXi& d_series, int threshold, Eigen::Index hash_bits,
                   GateLossGrads* grads = nullptr);

// Mean over item pairs and shared steps of 1 - Hamming/L, written as
// mean_u (1 + a_u b_u) / 2 so it also applies to relaxed codes in [-1, 1].
// `grads` (optional) receives one matrix per item.
double diversity_loss(std::span<const Eigen::MatrixXd> codes, Eigen::Index hash_bits,
                      std::vector<Eigen::MatrixXd>* grads = nullptr);

LossBreakdown total_loss(std::span<const double> recon, std::span<const double> memory, double diversity);

}  // namespace vhash
