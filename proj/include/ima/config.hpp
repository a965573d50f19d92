#ifndef IMA_CONFIG_HPP
#define IMA_CONFIG_HPP

#include "ima/core.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ima {

// Flat `section.key` settings with defaults for every key. Sources apply in
// order: defaults, then the config file, then command-line overrides; later
// sources win. Unknown keys are rejected.
class RunConfig {
public:
  RunConfig() {
    const char* env_out = std::getenv("IMA_OUT_ROOT");
    add("run", "seed", "0", "global seed");
    add("run", "out", env_out && *env_out ? env_out : "runs", "output directory (default from IMA_OUT_ROOT)");

    add("data", "generator", "moons", "moons | blobs | rings");
    add("data", "name", "moons", "dataset file stem written by generate");
    add("data", "path", "", "dataset CSV read by train/eval");
    add("data", "n_train", "20000", "train split size (per class for blobs/rings)");
    add("data", "n_val", "2000", "validation split size");
    add("data", "n_test", "2000", "test split size");
    add("data", "noise", "0.05", "moons/rings noise std");
    add("data", "centers", "-1,0;1,0", "blob centers, ';'-separated");
    add("data", "std", "0.5", "blob std");
    add("data", "radii", "1,2", "ring radii");

    add("model", "layers", "Linear(2,32)-LR-Linear(32,64)-LN-LR-Linear(64,128)-LN-LR-Linear(128,2)", "architecture");
    add("model", "negative_slope", "0.01", "leaky ReLU slope");
    add("model", "ln_epsilon", "1e-05", "layer-norm epsilon");

    add("train", "method", "ima", "ima | adv | ce");
    add("train", "epochs", "30", "training epochs");
    add("train", "batch_size", "128", "mini-batch size");
    add("train", "beta", "0.5", "weight of the boundary-sample loss");
    add("train", "eps_max", "0.3", "maximum margin");
    add("train", "delta_eps", "auto", "margin expansion step; auto = eps_max / epochs");
    add("train", "adv_eps", "", "PGD radius for method=adv (required there)");
    add("train", "lr", "0.001", "Adam learning rate");
    add("train", "adam_beta1", "0.9", "Adam beta1");
    add("train", "adam_beta2", "0.999", "Adam beta2");
    add("train", "adam_eps", "1e-08", "Adam epsilon");

    add("attack", "norm", "l2", "l2 | linf");
    add("attack", "n_pgd", "20", "PGD iterations during training");
    add("attack", "alpha", "4", "PGD sweep factor");
    add("attack", "n_binary", "10", "bisection steps in BPGD");
    add("attack", "clip_lo", "", "optional per-coordinate lower bound");
    add("attack", "clip_hi", "", "optional per-coordinate upper bound");

    add("eval", "checkpoint", "", "checkpoint file, or a train directory with --checkpoint-sweep");
    add("eval", "split", "test", "split to evaluate");
    add("eval", "levels", "0,0.1,0.2,0.3", "noise levels");
    add("eval", "n_pgd", "100", "PGD iterations for evaluation");
    add("eval", "alpha", "4", "PGD sweep factor for evaluation");
    add("eval", "white_noise_levels", "", "white-noise levels (empty: skip)");
    add("eval", "white_noise_trials", "10", "noisy copies per sample");
    add("eval", "hist_bins", "0", "margin histogram bins (0: skip)");
    add("eval", "margins", "", "margins CSV for the histogram");
    add("eval", "raster", "false", "write the decision-boundary raster");
    add("eval", "raster_resolution", "200", "raster lattice points per axis");
    add("eval", "equilibrium", "false", "write the equilibrium diagnostic");
    add("eval", "equilibrium_points", "500", "boundary points for the diagnostic");
    add("eval", "equilibrium_margin", "auto", "BPGD radius for the diagnostic; auto = train.eps_max");
    add("eval", "spsa", "false", "run the SPSA black-box attack");
    add("eval", "spsa_subset", "100", "samples attacked by SPSA");
    add("eval", "spsa_samples", "2048", "Rademacher directions per SPSA estimate");
    add("eval", "spsa_n_pgd", "20", "SPSA iterations");
    add("eval", "spsa_perturb", "0.01", "SPSA finite-difference scale");

    add("sweep", "beta", "", "grid over train.beta");
    add("sweep", "eps_max", "", "grid over train.eps_max");
    add("sweep", "delta_eps", "", "grid over train.delta_eps");
    add("sweep", "adv_eps", "", "grid over train.adv_eps");
  }

  // Parses "[section]" headers and "key = value" lines; '#' starts a comment.
  void load_stream(std::istream& is, const std::string& origin = "config") {
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#");
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      if (key.find('.') == std::string::npos) {
        if (section.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside a section");
        key = section + "." + key;
      }
      try {
        set(key, trim(t.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    load_stream(is, path.string());
  }

  // "section.key=value"
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

  [[nodiscard]] const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  [[nodiscard]] bool is_set(const std::string& key) const { return !get(key).empty(); }

  [[nodiscard]] double get_double(const std::string& key) const {
    double v = 0;
    if (!parse_double(get(key), v)) throw ConfigError(key + ": expected a number, got '" + get(key) + "'");
    return v;
  }

  [[nodiscard]] std::optional<double> get_optional_double(const std::string& key) const {
    if (!is_set(key) || get(key) == "auto") return std::nullopt;
    return get_double(key);
  }

  [[nodiscard]] long long get_int(const std::string& key) const {
    long long v = 0;
    if (!parse_int(get(key), v)) throw ConfigError(key + ": expected an integer, got '" + get(key) + "'");
    return v;
  }

  [[nodiscard]] std::uint64_t get_u64(const std::string& key) const {
    std::uint64_t v = 0;
    if (!parse_int(get(key), v)) throw ConfigError(key + ": expected a non-negative integer, got '" + get(key) + "'");
    return v;
  }

  [[nodiscard]] bool get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
  }

  [[nodiscard]] std::vector<double> get_list(const std::string& key) const { return parse_list(get(key), key); }

  // Canonical echo: every key, in declaration order, grouped by section.
  [[nodiscard]] std::string resolved() const {
    std::ostringstream os;
    std::string section;
    for (const auto& key : order_) {
      const auto dot = key.find('.');
      const std::string s = key.substr(0, dot);
      if (s != section) {
        if (!section.empty()) os << '\n';
        os << '[' << s << "]\n";
        section = s;
      }
      os << key.substr(dot + 1) << " = " << values_.at(key) << '\n';
    }
    return os.str();
  }

  [[nodiscard]] const std::vector<std::string>& keys() const noexcept { return order_; }
  [[nodiscard]] const std::string& help(const std::string& key) const { return help_.at(key); }

  static std::vector<double> parse_list(const std::string& text, const std::string& key = "list") {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (trim(item).empty()) continue;
      double v = 0;
      if (!parse_double(item, v)) throw ConfigError(key + ": bad list element '" + item + "'");
      out.push_back(v);
    }
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

private:
  void add(const std::string& section, const std::string& key, std::string value, std::string help) {
    const std::string full = section + "." + key;
    order_.push_back(full);
    values_[full] = std::move(value);
    help_[full] = std::move(help);
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> help_;
};

}  // namespace ima

#endif  // IMA_CONFIG_HPP
