#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stiffode/common.hpp"
#include "stiffode/neural.hpp"
#include "stiffode/sensitivity.hpp"
#include "stiffode/systems.hpp"

namespace stiffode {

struct NonFiniteGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bias-corrected ADAM.
struct AdamState {
  VectorXd m;
  VectorXd v;
  std::int64_t step = 0;
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState make_adam(Eigen::Index n, double lr) {
  AdamState s;
  s.m = VectorXd::Zero(n);
  s.v = VectorXd::Zero(n);
  s.lr = lr;
  return s;
}

/// One update: m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
inline std::pair<VectorXd, AdamState> adam_step(const AdamState& state,
                                                const VectorXd& params,
                                                const VectorXd& grad) {
  if (grad.size() != params.size() || state.m.size() != params.size())
    throw DimensionMismatch("adam_step: shape mismatch");
  if (!grad.allFinite()) throw NonFiniteGradient("adam_step: non-finite grad");
  AdamState s = state;
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, double(s.step));
  VectorXd out = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double mh = s.m[i] / bc1;
    const double vh = s.v[i] / bc2;
    out[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
  }
  return {std::move(out), std::move(s)};
}

struct AnnealPoint {
  int epoch = 0;  // from this epoch on, lr = base_lr * multiplier
  double multiplier = 1.0;
};

struct TrainConfig {
  int epochs = 1000;
  double lr = 0.005;
  GradMethod method = GradMethod::discrete;
  int chunk = 8;
  double abstol = 1e-8;
  double reltol = 1e-4;
  std::int64_t max_steps = 200'000;
  bool scaled = true;
  bool steer = false;
  double steer_min_fraction = 0.5;
  std::vector<AnnealPoint> anneal;  // epochs ascending
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty = no checkpoints written
  int checkpoint_every = 100;
  int max_divergence_strikes = 10;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
  std::int64_t accepted_steps = 0;
  std::int64_t rejected_steps = 0;
  bool diverged = false;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  bool aborted = false;
};

struct TrainResult {
  MlpArchitecture arch;
  VectorXd params;
  ScalingSpec scaling;
  TrainLog log;
};

/// STEER temporal regularization: draws a truncation endpoint uniformly in
/// the data's spacing scale between fraction_min*span and the full span and
/// clips the data to it (always keeping t0 and at least two points).
struct SteerDraw {
  double t_end = 0.0;
  TrainingData data;
};
SteerDraw steer_truncate(const TrainingData& data, double fraction_min,
                         Rng& rng);

/// Full-batch neural ODE training with the configured gradient method.
TrainResult train(const TrainingData& data, const MlpArchitecture& arch,
                  const TrainConfig& cfg);

/// Model trajectory at the data times (for overlay plots and evaluation).
MatrixXd predict_trajectory(const MlpArchitecture& arch,
                            const VectorXd& params, const ScalingSpec& scaling,
                            const TrainingData& data, const TrainConfig& cfg);

/// Trailing-window moving average of the loss column (NaN records skipped).
double smoothed_loss_at(const TrainLog& log, int epoch, int window = 100);

}  // namespace stiffode
