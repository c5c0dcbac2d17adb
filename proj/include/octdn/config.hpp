#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "octdn/common.hpp"

namespace octdn::cfg {

// Merged key-value configuration: schema defaults, then config file, then
// --section.key=value flag overrides. Unknown sections or keys are hard
// errors. Keys before the first [section] of a file are global.
class RunConfig {
 public:
  using Schema = std::map<std::string, std::map<std::string, std::string>>;

  static const Schema& schema() {
    static const Schema s = {
        {"global", {{"seed", "42"}, {"out", "out"}, {"jobs", "0"}}},
        {"phantom",
         {{"n_subjects", "20"},
          {"scans_per_eye", "5"},
          {"height", "496"},
          {"width", "384"},
          {"bands", "8"},
          {"texture_sigma", "0.03"},
          {"curve_amplitude", "0.015"},
          {"cup", "true"},
          {"cup_depth", "0.08"},
          {"cup_width", "0.10"},
          {"vessel_count", "3"},
          {"vessel_width_frac", "0.04"},
          {"vessel_atten_min", "0.35"},
          {"vessel_atten_max", "0.70"},
          {"train_fraction", "0.6"}}},
        {"augment",
         {{"factor", "10"},
          {"elastic_grid", "32"},
          {"elastic_sigma", "4.0"},
          {"rotation_deg", "10.0"},
          {"occl_count", "10"},
          {"occl_height", "60"},
          {"occl_width", "20"},
          {"occl_factor_min", "0.2"},
          {"occl_factor_max", "0.8"},
          {"noise_mode", "calibrated"},
          {"noise_sigma", "1.0"},
          {"noise_target_snr_db", "4.0"},
          {"noise_clip", "true"}}},
        {"network",
         {{"base_filters", "64"},
          {"width_scale", "1.0"},
          {"levels", "3"},
          {"kernel", "3"},
          {"skip_mode", "add"}}},
        {"train",
         {{"learning_rate", "1e-4"},
          {"beta1", "0.9"},
          {"beta2", "0.999"},
          {"epsilon", "1e-8"},
          {"batch_size", "4"},
          {"epochs", "30"},
          {"checkpoint_every", "0"},
          {"patch_height", "0"},
          {"patch_width", "0"}}},
        {"metrics",
         {{"cnr_variant", "standard"},
          {"rois_per_tissue", "25"},
          {"roi_file", ""},
          {"montage_count", "4"}}},
        {"denoise", {{"checkpoint", ""}}},
        {"gradcheck",
         {{"width_scale", "0.125"},
          {"levels", "2"},
          {"size", "16"},
          {"batch", "2"},
          {"tolerance", "1e-4"},
          {"sample", "0"},
          {"corrupt", "false"}}},
    };
    return s;
  }

  RunConfig() {
    for (const auto& [section, keys] : schema())
      for (const auto& [key, def] : keys) values_[section + "." + key] = def;
  }

  void set(const std::string& dotted, const std::string& value) {
    std::string key = dotted.find('.') == std::string::npos ? "global." + dotted : dotted;
    if (!values_.count(key)) throw ConfigError("unknown configuration key: " + key);
    values_[key] = value;
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::string line, section = "global";
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = trim(t.substr(1, t.size() - 2));
        if (!schema().count(section))
          throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown section [" +
                            section + "]");
        continue;
      }
      size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      set(section + "." + key, value);
    }
  }

  const std::string& str(const std::string& section, const std::string& key) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) throw ConfigError("unknown configuration key: " + section + "." + key);
    return it->second;
  }

  long long integer(const std::string& section, const std::string& key) const {
    const std::string& v = str(section, key);
    try {
      size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(section + "." + key + ": not an integer: '" + v + "'");
    }
  }

  uint64_t u64(const std::string& section, const std::string& key) const {
    const std::string& v = str(section, key);
    try {
      size_t pos = 0;
      uint64_t x = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(section + "." + key + ": not an unsigned integer: '" + v + "'");
    }
  }

  double number(const std::string& section, const std::string& key) const {
    const std::string& v = str(section, key);
    try {
      size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(section + "." + key + ": not a number: '" + v + "'");
    }
  }

  bool boolean(const std::string& section, const std::string& key) const {
    const std::string& v = str(section, key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(section + "." + key + ": not a boolean: '" + v + "'");
  }

  // Full effective configuration, written before a command starts working.
  void write_resolved(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write resolved config " + path.string());
    os << "# resolved configuration\n";
    for (const auto& [key, def] : schema().at("global")) {
      (void)def;
      os << key << " = " << values_.at("global." + key) << "\n";
    }
    for (const auto& [section, keys] : schema()) {
      if (section == "global") continue;
      os << "\n[" << section << "]\n";
      for (const auto& [key, def] : keys) {
        (void)def;
        os << key << " = " << values_.at(section + "." + key) << "\n";
      }
    }
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace octdn::cfg
