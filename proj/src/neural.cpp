#include "stiffode/neural.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stiffode {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write checkpoint: " + path);
  out << "{\n";
  out << "  \"layer_widths\": [";
  for (size_t i = 0; i < ckpt.arch.widths.size(); ++i)
    out << (i ? ", " : "") << ckpt.arch.widths[i];
  out << "],\n";
  out << "  \"activation\": \"" << to_string(ckpt.arch.activation) << "\",\n";
  out << "  \"y_scale\": [";
  for (Eigen::Index i = 0; i < ckpt.scaling.y_scale.size(); ++i)
    out << (i ? ", " : "") << fmt17(ckpt.scaling.y_scale[i]);
  out << "],\n";
  out << "  \"t_scale\": " << fmt17(ckpt.scaling.t_scale) << ",\n";
  out << "  \"scaling_enabled\": " << (ckpt.scaling.enabled ? "true" : "false")
      << ",\n";
  out << "  \"seed\": " << ckpt.seed << ",\n";
  out << "  \"epoch\": " << ckpt.epoch << ",\n";
  out << "  \"params\": [";
  for (Eigen::Index i = 0; i < ckpt.params.size(); ++i)
    out << (i ? ", " : "") << fmt17(ckpt.params[i]);
  out << "]\n";
  out << "}\n";
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint parse error: " + std::string(e.what()));
  }
  Checkpoint c;
  c.arch.widths = j.at("layer_widths").get<std::vector<int>>();
  c.arch.activation = activation_from_string(j.at("activation"));
  const auto ys = j.at("y_scale").get<std::vector<double>>();
  c.scaling.y_scale =
      Eigen::Map<const VectorXd>(ys.data(), Eigen::Index(ys.size()));
  c.scaling.t_scale = j.at("t_scale").get<double>();
  c.scaling.enabled = j.at("scaling_enabled").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.epoch = j.at("epoch").get<int>();
  const auto ps = j.at("params").get<std::vector<double>>();
  c.params = Eigen::Map<const VectorXd>(ps.data(), Eigen::Index(ps.size()));
  if (c.params.size() != param_count(c.arch))
    throw ValidationError("checkpoint: params length does not match widths");
  return c;
}

}  // namespace stiffode
