#include "flowgrad/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>

#include "flowgrad/errors.hpp"

namespace flowgrad::config {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ContractError("config: " + key + " is not a number: '" + raw + "'");
  return v;
}

long long to_int(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ContractError("config: " + key + " is not an integer: '" + raw + "'");
  return v;
}

std::size_t to_count(const std::string& key, const std::string& raw) {
  const long long v = to_int(key, raw);
  if (v < 0) throw ContractError("config: " + key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

std::vector<double> to_list(const std::string& key, const std::string& raw) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= raw.size()) {
    const auto comma = raw.find(',', start);
    const std::string item = raw.substr(start, comma == std::string::npos ? std::string::npos
                                                                          : comma - start);
    if (!trim(item).empty()) out.push_back(to_double(key, item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

using Setter = std::function<void(inverse::ExperimentConfig&, const std::string& key,
                                  const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  using C = inverse::ExperimentConfig;
  using K = const std::string&;
  static const std::map<std::string, Setter> table = {
      {"experiment.name", [](C& c, K, K v) { c.experiment = inverse::parse_experiment(trim(v)); }},
      {"experiment.nx", [](C& c, K k, K v) { c.nx = to_count(k, v); }},
      {"experiment.ny", [](C& c, K k, K v) { c.ny = to_count(k, v); }},
      {"model.variant", [](C& c, K, K v) { c.variant = models::parse_variant(trim(v)); }},
      {"model.seed", [](C& c, K k, K v) { c.model_seed = to_count(k, v); }},
      {"model.init_scale", [](C& c, K k, K v) { c.init_scale = to_double(k, v); }},
      {"model.offset", [](C& c, K k, K v) { c.offset = to_double(k, v); }},
      {"model.floor", [](C& c, K k, K v) { c.floor = to_double(k, v); }},
      {"model.init",
       [](C& c, K k, K v) {
         const std::string s = trim(v);
         if (s != "random" && s != "reference")
           throw ContractError("config: " + k + " must be random or reference");
         c.init_from_reference = s == "reference";
       }},
      {"optimizer.max_steps", [](C& c, K k, K v) { c.optimizer.max_steps = int(to_int(k, v)); }},
      {"optimizer.memory", [](C& c, K k, K v) { c.optimizer.memory = int(to_int(k, v)); }},
      {"optimizer.c1", [](C& c, K k, K v) { c.optimizer.c1 = to_double(k, v); }},
      {"optimizer.c2", [](C& c, K k, K v) { c.optimizer.c2 = to_double(k, v); }},
      {"optimizer.pgtol", [](C& c, K k, K v) { c.optimizer.pgtol = to_double(k, v); }},
      {"optimizer.ftol_rel", [](C& c, K k, K v) { c.optimizer.ftol_rel = to_double(k, v); }},
      {"optimizer.max_rejections",
       [](C& c, K k, K v) { c.optimizer.max_rejections = int(to_int(k, v)); }},
      {"observations.count", [](C& c, K k, K v) { c.observation_count = to_count(k, v); }},
      {"observations.seed", [](C& c, K k, K v) { c.observation_seed = to_count(k, v); }},
      {"observations.noise", [](C& c, K k, K v) { c.noise_epsilon = to_double(k, v); }},
      {"observations.noise_sweep", [](C& c, K k, K v) { c.noise_sweep = to_list(k, v); }},
      {"physics.rho", [](C& c, K k, K v) { c.physics.rho = to_double(k, v); }},
      {"physics.cp", [](C& c, K k, K v) { c.physics.cp = to_double(k, v); }},
      {"physics.body_force_f", [](C& c, K k, K v) { c.physics.body_force_f = to_double(k, v); }},
      {"physics.body_force_g", [](C& c, K k, K v) { c.physics.body_force_g = to_double(k, v); }},
      {"physics.heat_source", [](C& c, K k, K v) { c.physics.heat_source = to_double(k, v); }},
      {"physics.kappa1", [](C& c, K k, K v) { c.physics.kappa1 = to_double(k, v); }},
      {"physics.kappa2", [](C& c, K k, K v) { c.physics.kappa2 = to_double(k, v); }},
      {"physics.q1", [](C& c, K k, K v) { c.physics.q1 = to_double(k, v); }},
      {"physics.q2", [](C& c, K k, K v) { c.physics.q2 = to_double(k, v); }},
      {"physics.beta", [](C& c, K k, K v) { c.physics.stabilization_beta = to_double(k, v); }},
      {"physics.lid_velocity", [](C& c, K k, K v) { c.lid_velocity = to_double(k, v); }},
      {"physics.temperature_boundary",
       [](C& c, K k, K v) { c.temperature_boundary = to_double(k, v); }},
      {"physics.flow_viscosity", [](C& c, K k, K v) { c.flow_viscosity = to_double(k, v); }},
      {"newton.tol", [](C& c, K k, K v) { c.newton.tol = to_double(k, v); }},
      {"newton.max_iter", [](C& c, K k, K v) { c.newton.max_iter = int(to_int(k, v)); }},
      {"transport.dt", [](C& c, K k, K v) { c.transport_dt = to_double(k, v); }},
      {"transport.steps", [](C& c, K k, K v) { c.transport_steps = int(to_int(k, v)); }},
      {"output.dir", [](C& c, K, K v) { c.output_dir = trim(v); }},
  };
  return table;
}

}  // namespace

inverse::ExperimentConfig parse_config(std::istream& is) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  inverse::ExperimentConfig cfg;
  const auto& table = setters();
  for (const auto& [section, entries] : tree) {
    if (entries.empty())
      throw ContractError("config: key outside of a section: " + section);
    for (const auto& [key, value] : entries) {
      const std::string full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) throw ContractError("config: unknown key " + full);
      it->second(cfg, full, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

inverse::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("config: cannot open " + path);
  return parse_config(in);
}

}  // namespace flowgrad::config
