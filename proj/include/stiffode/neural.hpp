#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "stiffode/common.hpp"
#include "stiffode/dual.hpp"

namespace stiffode {

enum class Activation { gelu, tanh };

inline std::string to_string(Activation a) {
  return a == Activation::gelu ? "gelu" : "tanh";
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "tanh") return Activation::tanh;
  throw ParseError("unknown activation: " + s);
}

/// x * Phi(x) with Phi the exact standard normal CDF. The derivative flows
/// through the erfc overload's analytic form, not a numerical approximation.
template <class S>
S gelu(const S& x) {
  return x * 0.5 * erfc(x * (-0.7071067811865475244));
}

/// Dense feed-forward net: hidden layers with the chosen activation,
/// linear output layer. Input and output widths equal the state dimension.
struct MlpArchitecture {
  std::vector<int> widths;  // input, hidden..., output
  Activation activation = Activation::gelu;

  int input() const { return widths.front(); }
  int output() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
};

inline MlpArchitecture make_mlp(int state_dim, int hidden_layers,
                                int hidden_width, Activation act) {
  MlpArchitecture a;
  a.widths.push_back(state_dim);
  for (int i = 0; i < hidden_layers; ++i) a.widths.push_back(hidden_width);
  a.widths.push_back(state_dim);
  a.activation = act;
  return a;
}

/// Flat parameter count: per layer, a row-major weight matrix then a bias.
inline Eigen::Index param_count(const MlpArchitecture& arch) {
  Eigen::Index n = 0;
  for (int l = 0; l < arch.layers(); ++l)
    n += Eigen::Index(arch.widths[l]) * arch.widths[l + 1] +
         arch.widths[l + 1];
  return n;
}

template <class S>
VecX<S> mlp_eval(const MlpArchitecture& arch, const VecX<S>& params,
                 const VecX<S>& y) {
  if (y.size() != arch.input())
    throw DimensionMismatch("mlp_eval: state width mismatch");
  if (params.size() != param_count(arch))
    throw DimensionMismatch("mlp_eval: parameter length mismatch");
  VecX<S> x = y;
  Eigen::Index off = 0;
  for (int l = 0; l < arch.layers(); ++l) {
    const int in_w = arch.widths[l];
    const int out_w = arch.widths[l + 1];
    VecX<S> z(out_w);
    for (int i = 0; i < out_w; ++i) {
      S acc = params[off + Eigen::Index(in_w) * out_w + i];  // bias
      const Eigen::Index row = off + Eigen::Index(i) * in_w;
      for (int j = 0; j < in_w; ++j) acc += params[row + j] * x[j];
      z[i] = acc;
    }
    off += Eigen::Index(in_w) * out_w + out_w;
    if (l + 1 < arch.layers()) {
      if (arch.activation == Activation::gelu)
        for (int i = 0; i < out_w; ++i) z[i] = gelu(z[i]);
      else
        for (int i = 0; i < out_w; ++i) z[i] = tanh(z[i]);
    }
    x = std::move(z);
  }
  return x;
}

/// Per-species output scale and the global time scale (Eq-style
/// normalization: network output is multiplied by y_scale / t_scale).
struct ScalingSpec {
  VectorXd y_scale;
  double t_scale = 1.0;
  bool enabled = true;
};

/// y_scale = per-species (max - min) over the training data; a constant
/// species gets scale 1 with a warning. t_scale = t1 - t0.
inline ScalingSpec make_scaling(const MatrixXd& states, double t0, double t1) {
  ScalingSpec s;
  s.t_scale = t1 - t0;
  s.y_scale = (states.colwise().maxCoeff() - states.colwise().minCoeff())
                  .transpose();
  for (Eigen::Index i = 0; i < s.y_scale.size(); ++i) {
    if (s.y_scale[i] <= 0.0) {
      std::cerr << "warning: species " << (i + 1)
                << " is constant over the data; y_scale set to 1\n";
      s.y_scale[i] = 1.0;
    }
  }
  return s;
}

inline ScalingSpec identity_scaling(int dim) {
  ScalingSpec s;
  s.y_scale = VectorXd::Ones(dim);
  s.t_scale = 1.0;
  s.enabled = false;
  return s;
}

/// Neural ODE right-hand side dy/dt = NN(y) * y_scale / t_scale
/// (raw NN output when scaling is disabled).
struct ScaledMlpRhs {
  MlpArchitecture arch;
  ScalingSpec scaling;

  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>& p, const S&) const {
    VecX<S> out = mlp_eval<S>(arch, p, y);
    if (scaling.enabled) {
      for (Eigen::Index i = 0; i < out.size(); ++i)
        out[i] = out[i] * (scaling.y_scale[i] / scaling.t_scale);
    }
    return out;
  }
};

template <class S>
VecX<S> scaled_rhs(const MlpArchitecture& arch, const VecX<S>& params,
                   const ScalingSpec& scaling, const VecX<S>& y) {
  const ScaledMlpRhs rhs{arch, scaling};
  return rhs(y, params, S(0));
}

/// Mean over all (time, species) of |(model - obs) / y_scale_species|.
inline double scaled_mae(const MatrixXd& model, const MatrixXd& obs,
                         const VectorXd& y_scale) {
  if (model.rows() != obs.rows() || model.cols() != obs.cols() ||
      model.cols() != y_scale.size())
    throw DimensionMismatch("scaled_mae: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < model.rows(); ++i)
    for (Eigen::Index j = 0; j < model.cols(); ++j)
      acc += std::abs((model(i, j) - obs(i, j)) / y_scale[j]);
  return acc / double(model.rows() * model.cols());
}

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
/// fully determined by the seed.
inline VectorXd init_params(const MlpArchitecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd p(param_count(arch));
  Eigen::Index off = 0;
  for (int l = 0; l < arch.layers(); ++l) {
    const int in_w = arch.widths[l];
    const int out_w = arch.widths[l + 1];
    const double bound = std::sqrt(6.0 / double(in_w + out_w));
    for (int i = 0; i < in_w * out_w; ++i)
      p[off + i] = rng.uniform(-bound, bound);
    for (int i = 0; i < out_w; ++i) p[off + Eigen::Index(in_w) * out_w + i] = 0.0;
    off += Eigen::Index(in_w) * out_w + out_w;
  }
  return p;
}

/// Training checkpoint: architecture, scaling and flat parameters, written
/// as a JSON document with 17-significant-digit decimal floats.
struct Checkpoint {
  MlpArchitecture arch;
  ScalingSpec scaling;
  VectorXd params;
  std::uint64_t seed = 0;
  int epoch = 0;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace stiffode
