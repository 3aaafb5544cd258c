#include "vhash/losses.hpp"

#include <algorithm>

#include "vhash/error.hpp"

namespace vhash {

double recon_loss(const Eigen::MatrixXd& recon, const Eigen::MatrixXd& target, Eigen::Index hash_bits,
                  Eigen::MatrixXd* grad) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "reconstruction and target shapes differ");
  }
  if (recon.rows() == 0) throw Error(ErrorCode::kShapeMismatch, "empty reconstruction");
  const double scale = 1.0 / (static_cast<double>(hash_bits) * static_cast<double>(recon.rows()));
  const Eigen::MatrixXd diff = recon - target;
  if (grad) *grad = 2.0 * scale * diff;
  return scale * diff.squaredNorm();
}

double memory_loss(const Eigen::MatrixXd& forget, const Eigen::MatrixXd& input, const Eigen::MatrixXd& output,
                   const Eigen::VectorXi& d_series, int threshold, Eigen::Index hash_bits, GateLossGrads* grads) {
  const Eigen::Index steps = forget.rows();
  if (input.rows() != steps || output.rows() != steps || forget.cols() != input.cols() ||
      forget.cols() != output.cols()) {
    throw Error(ErrorCode::kLengthMismatch, "gate records disagree in shape");
  }
  if (steps < 1 || d_series.size() != steps - 1) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(d_series.size()) + " transitions for " +
                                                std::to_string(steps) + " steps");
  }
  const double l = static_cast<double>(hash_bits);
  const double scale = 1.0 / (3.0 * l * l * static_cast<double>(steps));
  if (grads) {
    grads->forget = Eigen::MatrixXd::Zero(steps, forget.cols());
    grads->input = Eigen::MatrixXd::Zero(steps, forget.cols());
    grads->output = Eigen::MatrixXd::Zero(steps, forget.cols());
  }
  double total = 0.0;
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    const double d = d_series(t);
    if (d == 0.0) continue;
    const auto f = forget.row(t).array();
    const auto i = input.row(t).array();
    const auto o = output.row(t).array();
    const double w = d * scale;
    if (d_series(t) >= threshold) {
      total += w * (f.square() + o.square() + (1.0 - i).square()).sum();
      if (grads) {
        grads->forget.row(t) = 2.0 * w * f;
        grads->output.row(t) = 2.0 * w * o;
        grads->input.row(t) = -2.0 * w * (1.0 - i);
      }
    } else {
      total += w * ((1.0 - f.square()) + (1.0 - o.square()) + i.square()).sum();
      if (grads) {
        grads->forget.row(t) = -2.0 * w * f;
        grads->output.row(t) = -2.0 * w * o;
        grads->input.row(t) = 2.0 * w * i;
      }
    }
  }
  return total;
}

double diversity_loss(std::span<const Eigen::MatrixXd> codes, Eigen::Index hash_bits,
                      std::vector<Eigen::MatrixXd>* grads) {
  const std::size_t batch = codes.size();
  if (batch < 2) throw Error(ErrorCode::kBatchTooSmall, "diversity needs at least two items");
  if (grads) {
    grads->clear();
    for (const auto& c : codes) grads->push_back(Eigen::MatrixXd::Zero(c.rows(), c.cols()));
  }
  const double pairs = static_cast<double>(batch * (batch - 1) / 2);
  const double l = static_cast<double>(hash_bits);
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < batch; ++j) {
    for (std::size_t k = j + 1; k < batch; ++k) {
      const Eigen::Index shared = std::min(codes[j].rows(), codes[k].rows());
      if (shared < 1 || codes[j].cols() != codes[k].cols()) {
        throw Error(ErrorCode::kShapeMismatch, "code matrices cannot be compared");
      }
      const auto a = codes[j].topRows(shared).array();
      const auto b = codes[k].topRows(shared).array();
      const double weight = 1.0 / (pairs * static_cast<double>(shared) * l);
      total += weight * (0.5 * (1.0 + a * b)).sum();
      if (grads) {
        (*grads)[j].topRows(shared).array() += 0.5 * weight * b;
        (*grads)[k].topRows(shared).array() += 0.5 * weight * a;
      }
    }
  }
  return total;
}

LossBreakdown total_loss(std::span<const double> recon, std::span<const double> memory, double diversity) {
  if (recon.size() != memory.size() || recon.empty()) {
    throw Error(ErrorCode::kLengthMismatch, "per-item loss vectors disagree");
  }
  LossBreakdown out;
  for (std::size_t j = 0; j < recon.size(); ++j) {
    out.recon += recon[j];
    out.memory += memory[j];
  }
  const double n = static_cast<double>(recon.size());
  out.recon /= n;
  out.memory /= n;
  out.diversity = diversity;
  out.total = out.recon + out.memory + diversity;
  return out;
}

}  // namespace vhash
