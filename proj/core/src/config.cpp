#include "spda/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace spda {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: cannot parse boolean '" + v + "' for " + key);
}

int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: cannot parse integer '" + v + "' for " + key);
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: cannot parse number '" + v + "' for " + key);
  }
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

void RunConfig::apply_key(const std::string& key, const std::string& value) {
  if (key == "seed") {
    seed = static_cast<uint64_t>(parse_int(value, key));
  } else if (key == "strict_paper") {
    strict_paper = parse_bool(value, key);
  } else if (key == "network.levels") {
    levels = static_cast<int>(parse_int(value, key));
  } else if (key == "network.channels") {
    channels.clear();
    for (const std::string& c : split_commas(value)) {
      channels.push_back(static_cast<int>(parse_int(c, key)));
    }
  } else if (key == "network.in_channels") {
    in_channels = static_cast<int>(parse_int(value, key));
  } else if (key == "network.out_channels") {
    out_channels = static_cast<int>(parse_int(value, key));
  } else if (key == "network.attention") {
    attention = value;
  } else if (key == "network.reduction_ratio") {
    reduction_ratio = static_cast<int>(parse_int(value, key));
  } else if (key == "network.epsilon") {
    epsilon = parse_double(value, key);
  } else if (key == "network.inner_relu") {
    inner_relu = parse_bool(value, key);
  } else if (key == "network.isometric_vec") {
    isometric_vec = parse_bool(value, key);
  } else if (key == "train.epochs") {
    epochs = static_cast<int>(parse_int(value, key));
  } else if (key == "train.batch_size") {
    batch_size = static_cast<int>(parse_int(value, key));
  } else if (key == "train.rmsprop_lr") {
    rmsprop_lr = parse_double(value, key);
  } else if (key == "train.rmsprop_alpha") {
    rmsprop_alpha = parse_double(value, key);
  } else if (key == "train.rmsprop_eps") {
    rmsprop_eps = parse_double(value, key);
  } else if (key == "train.stiefel_lr") {
    stiefel_lr = parse_double(value, key);
  } else if (key == "synth.cases") {
    cases = static_cast<int>(parse_int(value, key));
  } else if (key == "synth.prevalence") {
    prevalence = parse_double(value, key);
  } else if (key == "synth.size_mix") {
    const auto parts = split_commas(value);
    if (parts.size() != 3) throw ConfigError("config: size_mix needs 3 weights");
    for (size_t i = 0; i < 3; ++i) size_mix[i] = parse_double(parts[i], key);
  } else if (key == "synth.shape") {
    const auto parts = split_commas(value);
    if (parts.size() != 3) throw ConfigError("config: shape needs 3 dims");
    for (size_t i = 0; i < 3; ++i) shape[i] = parse_int(parts[i], key);
  } else if (key == "synth.voxel_volume_mm3") {
    voxel_volume_mm3 = parse_double(value, key);
  } else if (key == "eval.size_mode") {
    if (value != "fixed" && value != "percentile") {
      throw ConfigError("config: eval.size_mode must be 'fixed' or 'percentile'");
    }
    size_mode = value;
  } else if (key == "eval.threshold_steps") {
    threshold_steps = static_cast<int>(parse_int(value, key));
  } else if (key == "eval.threads") {
    threads = static_cast<int>(parse_int(value, key));
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

void RunConfig::load_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config: malformed section at " + path + ":" + std::to_string(line_no));
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at " + path + ":" + std::to_string(line_no));
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    apply_key(section.empty() ? key : section + "." + key, value);
  }
}

void RunConfig::apply_strict_paper() {
  strict_paper = true;
  inner_relu = false;
  isometric_vec = false;
  size_mode = "fixed";
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["strict_paper"] = strict_paper;
  j["network"] = {{"levels", levels},
                  {"channels", channels},
                  {"in_channels", in_channels},
                  {"out_channels", out_channels},
                  {"attention", attention},
                  {"reduction_ratio", reduction_ratio},
                  {"epsilon", epsilon},
                  {"inner_relu", inner_relu},
                  {"isometric_vec", isometric_vec}};
  j["train"] = {{"epochs", epochs},
                {"batch_size", batch_size},
                {"rmsprop_lr", rmsprop_lr},
                {"rmsprop_alpha", rmsprop_alpha},
                {"rmsprop_eps", rmsprop_eps},
                {"stiefel_lr", stiefel_lr}};
  j["synth"] = {{"cases", cases},
                {"prevalence", prevalence},
                {"size_mix", size_mix},
                {"shape", shape},
                {"voxel_volume_mm3", voxel_volume_mm3}};
  j["eval"] = {{"size_mode", size_mode},
               {"threshold_steps", threshold_steps},
               {"threads", threads}};
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  return j.dump();
}

int RunConfig::resolved_eval_threads() const {
  int t = threads;
  if (t <= 0) {
    t = static_cast<int>(std::thread::hardware_concurrency());
    if (t < 1) t = 1;
  }
  if (const char* cap = std::getenv("SPDA_THREADS")) {
    try {
      const int c = std::stoi(cap);
      if (c >= 1) t = std::min(t, c);
    } catch (const std::exception&) {
      throw ConfigError("SPDA_THREADS is not an integer");
    }
  }
  return t;
}

}  // namespace spda
