#pragma once

// Flat key=value run configuration with '#' comments, plus the manifest
// every run writes back so results are reproducible from the file alone.

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "foodweb/errors.hpp"
#include "foodweb/modelcore.hpp"
#include "foodweb/sampler.hpp"

namespace foodweb {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct RunConfig {
  std::map<std::string, std::string> values;

  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "diet",     "meta",      "web",       "mode",     "covariates",
        "interaction", "random_slopes", "chains",  "iters",
        "burnin",   "thin",      "seed",      "a",        "pin_scale",
        "out",      "z_proposal_sd", "target_accept", "init",
        "random_scan", "allow_nonconverged"};
    return keys;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key))
      throw ValidationError("unknown config key '" + key + "'");
    values[key] = value;
  }

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::string get(const std::string& key, const std::string& dflt = "") const {
    auto it = values.find(key);
    return it == values.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values.find(key);
    if (it == values.end()) return dflt;
    try {
      size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("config key '" + key + "': bad number '" +
                            it->second + "'");
    }
  }

  long get_long(const std::string& key, long dflt) const {
    double v = get_double(key, static_cast<double>(dflt));
    return static_cast<long>(v);
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values.find(key);
    if (it == values.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ValidationError("config key '" + key + "': expected true/false");
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": expected key=value");
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  ModelSpec model_spec() const {
    ModelSpec spec;
    spec.mode = response_mode_from_string(get("mode", "population"));
    std::string covs = get("covariates", "");
    if (covs == "all") {
      spec.covariates = all_covariate_names();
    } else if (!covs.empty() && covs != "none") {
      std::stringstream ss(covs);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) spec.covariates.push_back(item);
      }
    }
    spec.interaction = get_bool("interaction", false);
    spec.random_slopes = get_bool("random_slopes", false);
    spec.a = get_double("a", 0.005);
    std::string pin = get("pin_scale", "sd");
    if (pin == "sd")
      spec.pin_scale = PinScale::sd;
    else if (pin == "var")
      spec.pin_scale = PinScale::var;
    else
      throw ValidationError("pin_scale must be 'sd' or 'var'");
    spec.validate();
    return spec;
  }

  SamplerConfig sampler_config() const {
    SamplerConfig sc;
    sc.n_iter = static_cast<int>(get_long("iters", 10000));
    sc.burn_in = static_cast<int>(get_long("burnin", sc.n_iter / 2));
    sc.thin = static_cast<int>(get_long("thin", 1));
    sc.n_chains = static_cast<int>(get_long("chains", 2));
    sc.seed = static_cast<std::uint64_t>(get_long("seed", 1));
    sc.z_proposal_sd = get_double("z_proposal_sd", 0.5);
    sc.target_accept = get_double("target_accept", 0.44);
    sc.random_scan = get_bool("random_scan", false);
    std::string init = get("init", "zeros");
    if (init == "zeros")
      sc.init = SamplerConfig::Init::zeros;
    else if (init == "least_squares")
      sc.init = SamplerConfig::Init::least_squares;
    else if (init == "prior_draw")
      sc.init = SamplerConfig::Init::prior_draw;
    else
      throw ValidationError("init must be zeros|least_squares|prior_draw");
    sc.validate();
    return sc;
  }

  void write_manifest(const std::string& path,
                      const std::vector<std::string>& extra = {}) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write manifest " + path);
    out << "# resolved run configuration\n";
    for (const auto& [k, v] : values) out << k << " = " << v << "\n";
    for (const auto& line : extra) out << line << "\n";
  }
};

}  // namespace foodweb
