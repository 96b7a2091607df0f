#pragma once

// Flat key-value experiment configuration:
//
//   # comment
//   duration = 20
//   amplitude_mode = thermal
//   envelope = tabulated
//   envelope_samples = 0 0.5 1 0.5 0
//
// Every key is optional (missing keys keep their defaults), unknown or
// repeated keys are rejected, and serialize_config() writes every field with
// shortest round-trip numbers, so parse(serialize(c)) == c bit for bit.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "beatsim/error.hpp"
#include "beatsim/model.hpp"
#include "beatsim/numeric.hpp"
#include "beatsim/simulate.hpp"

namespace beatsim {

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "duration", "dt", "i1", "i2", "kappa1", "kappa2", "p_w1", "p_w2", "envelope", "t_rise", "t_decay",
      "envelope_t0", "envelope_dt", "envelope_samples", "amplitude_mode", "gamma", "noise_rms", "n_pulses",
      "master_seed", "temperature", "reference_temperature"};
  return keys;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double config_number(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  auto v = parse_double(it->second);
  if (!v) throw ConfigError("key '" + key + "': not a number: '" + it->second + "'", key);
  return *v;
}

inline std::uint64_t config_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                                std::uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  auto v = parse_integer<std::uint64_t>(it->second);
  if (!v) throw ConfigError("key '" + key + "': not an unsigned integer: '" + it->second + "'", key);
  return *v;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::string_view text) {
  static const std::set<std::string> known(config_keys().begin(), config_keys().end());
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'", std::string(line));
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "'", key);
    if (kv.count(key)) throw ConfigError("duplicate key '" + key + "'", key);
    if (value.empty()) throw ConfigError("key '" + key + "' has an empty value", key);
    kv.emplace(key, value);
  }

  ExperimentConfig c;
  c.duration = detail::config_number(kv, "duration", c.duration);
  c.dt = detail::config_number(kv, "dt", c.dt);
  c.pair.i1 = detail::config_number(kv, "i1", c.pair.i1);
  c.pair.i2 = detail::config_number(kv, "i2", c.pair.i2);
  c.pair.kappa1 = detail::config_number(kv, "kappa1", c.pair.kappa1);
  c.pair.kappa2 = detail::config_number(kv, "kappa2", c.pair.kappa2);
  c.pair.p_w1 = detail::config_number(kv, "p_w1", c.pair.p_w1);
  c.pair.p_w2 = detail::config_number(kv, "p_w2", c.pair.p_w2);

  const std::string kind = kv.count("envelope") ? kv.at("envelope") : "parametric";
  if (kind == "parametric") {
    for (const char* k : {"envelope_t0", "envelope_dt", "envelope_samples"})
      if (kv.count(k)) throw ConfigError(std::string("key '") + k + "' requires envelope = tabulated", k);
    c.envelope = Envelope::parametric(detail::config_number(kv, "t_rise", c.envelope.t_rise()),
                                      detail::config_number(kv, "t_decay", c.envelope.t_decay()));
  } else if (kind == "tabulated") {
    for (const char* k : {"t_rise", "t_decay"})
      if (kv.count(k)) throw ConfigError(std::string("key '") + k + "' requires envelope = parametric", k);
    if (!kv.count("envelope_samples")) throw ConfigError("tabulated envelope needs envelope_samples", "envelope_samples");
    std::vector<double> samples;
    std::istringstream in(kv.at("envelope_samples"));
    std::string tok;
    while (in >> tok) {
      auto v = parse_double(tok);
      if (!v) throw ConfigError("key 'envelope_samples': not a number: '" + tok + "'", "envelope_samples");
      samples.push_back(*v);
    }
    c.envelope = Envelope::tabulated(detail::config_number(kv, "envelope_t0", 0.0),
                                     detail::config_number(kv, "envelope_dt", c.dt), std::move(samples));
  } else {
    throw ConfigError("key 'envelope' must be parametric or tabulated", "envelope");
  }

  if (kv.count("amplitude_mode")) {
    const auto& m = kv.at("amplitude_mode");
    if (m == "coherent")
      c.amplitude_mode = AmplitudeMode::coherent;
    else if (m == "thermal")
      c.amplitude_mode = AmplitudeMode::thermal;
    else
      throw ConfigError("key 'amplitude_mode' must be coherent or thermal", "amplitude_mode");
  }
  c.gamma = detail::config_number(kv, "gamma", c.gamma);
  c.noise_rms = detail::config_number(kv, "noise_rms", c.noise_rms);
  c.n_pulses = detail::config_u64(kv, "n_pulses", c.n_pulses);
  c.master_seed = detail::config_u64(kv, "master_seed", c.master_seed);
  if (kv.count("temperature") && kv.at("temperature") != "none")
    c.temperature = detail::config_number(kv, "temperature", 0.0);
  c.reference_temperature = detail::config_number(kv, "reference_temperature", c.reference_temperature);
  c.validate();
  return c;
}

inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto put = [&](const char* key, const std::string& value) { out << key << " = " << value << '\n'; };
  put("duration", format_double(c.duration));
  put("dt", format_double(c.dt));
  put("i1", format_double(c.pair.i1));
  put("i2", format_double(c.pair.i2));
  put("kappa1", format_double(c.pair.kappa1));
  put("kappa2", format_double(c.pair.kappa2));
  put("p_w1", format_double(c.pair.p_w1));
  put("p_w2", format_double(c.pair.p_w2));
  if (c.envelope.kind() == Envelope::Kind::parametric) {
    put("envelope", "parametric");
    put("t_rise", format_double(c.envelope.t_rise()));
    put("t_decay", format_double(c.envelope.t_decay()));
  } else {
    put("envelope", "tabulated");
    put("envelope_t0", format_double(c.envelope.t0()));
    put("envelope_dt", format_double(c.envelope.dt()));
    std::string s;
    for (double v : c.envelope.samples()) {
      if (!s.empty()) s += ' ';
      s += format_double(v);
    }
    put("envelope_samples", s);
  }
  put("amplitude_mode", to_string(c.amplitude_mode));
  put("gamma", format_double(c.gamma));
  put("noise_rms", format_double(c.noise_rms));
  put("n_pulses", std::to_string(c.n_pulses));
  put("master_seed", std::to_string(c.master_seed));
  put("temperature", c.temperature ? format_double(*c.temperature) : "none");
  put("reference_temperature", format_double(c.reference_temperature));
  return out.str();
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace beatsim
