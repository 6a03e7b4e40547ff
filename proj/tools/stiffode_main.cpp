#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "stiffode/cli.hpp"

namespace {

// Every config key becomes a --key option; flags below are shorthands.
void add_kv_options(CLI::App* sub, const std::string& name,
                    std::map<std::string, std::string>& overrides,
                    std::string& config_path,
                    std::vector<double>& tspan) {
  sub->add_option("--config", config_path, "key=value config file");
  for (const auto& [key, def] : stiffode::cli::defaults_for(name)) {
    if (key == "t0" || key == "t1") continue;  // set via --tspan
    sub->add_option_function<std::string>(
        "--" + key,
        [&overrides, k = key](const std::string& v) { overrides[k] = v; },
        "default: " + (def.empty() ? std::string("<empty>") : def));
  }
  sub->add_option("--tspan", tspan, "integration span: t0 t1")
      ->expected(2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "stiffode: stiff neural-ODE training and gradient-stability "
      "experiments"};
  app.require_subcommand(1);

  const std::vector<std::string> names = {"solve", "reverse", "gradcheck",
                                          "train", "stiffness"};
  struct SubState {
    std::map<std::string, std::string> overrides;
    std::string config_path;
    std::vector<double> tspan;
  };
  std::map<std::string, SubState> state;
  std::map<std::string, CLI::App*> subs;
  for (const std::string& name : names) {
    CLI::App* sub = app.add_subcommand(name);
    add_kv_options(sub, name, state[name].overrides, state[name].config_path,
                   state[name].tspan);
    if (name == "train") {
      sub->add_flag_function(
          "--baseline",
          [&s = state[name]](std::int64_t) {
            s.overrides["layers"] = "1x50";
            s.overrides["act"] = "tanh";
            s.overrides["scaled"] = "0";
          },
          "shorthand: 1x50 tanh network, no scaling");
    }
    subs[name] = sub;
  }

  CLI11_PARSE(app, argc, argv);

  for (const std::string& name : names) {
    if (!subs[name]->parsed()) continue;
    SubState& s = state[name];
    if (s.tspan.size() == 2) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", s.tspan[0]);
      s.overrides["t0"] = buf;
      std::snprintf(buf, sizeof(buf), "%.17g", s.tspan[1]);
      s.overrides["t1"] = buf;
    }
    try {
      return stiffode::cli::run(name, s.config_path, s.overrides);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}
