#pragma once

// The pipeline configuration document: one JSON object with a section per
// module. Missing fields keep their defaults, unknown fields are rejected.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoannot/ash.hpp"
#include "autoannot/assoc.hpp"
#include "autoannot/backends.hpp"
#include "autoannot/chunker.hpp"
#include "autoannot/error.hpp"
#include "autoannot/smart_od.hpp"

namespace autoannot {

struct DeploymentConfig {
  double alpha_weight = 0.5;  // recall weight in J = a R + (1 - a) P
  double gamma = 0.9;
  double tau_qa = 0.9;
  double qa_sample_fraction = 0.5;
  std::uint64_t qa_seed = 0;
  double iou_threshold = 0.5;
  // SmartOdConfig numeric field -> candidate values; empty keeps the base config.
  std::map<std::string, std::vector<double>> grid;
  std::vector<std::string> threshold_methods;

  friend bool operator==(const DeploymentConfig&, const DeploymentConfig&) = default;
};

inline void validate(const DeploymentConfig& d) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "deployment." + f + ": " + why);
  };
  if (!(d.alpha_weight >= 0.0 && d.alpha_weight <= 1.0)) fail("alpha_weight", "must be in [0, 1]");
  if (!(d.gamma > 0.0 && d.gamma <= 1.0)) fail("gamma", "must be in (0, 1]");
  if (!(d.tau_qa > 0.0 && d.tau_qa < 1.0)) fail("tau_qa", "must be in (0, 1)");
  if (!(d.qa_sample_fraction > 0.0 && d.qa_sample_fraction <= 1.0)) fail("qa_sample_fraction", "must be in (0, 1]");
  if (!(d.iou_threshold > 0.0 && d.iou_threshold <= 1.0)) fail("iou_threshold", "must be in (0, 1]");
  for (const auto& [k, v] : d.grid)
    if (v.empty()) fail("grid." + k, "candidate list must be nonempty");
  for (const auto& m : d.threshold_methods) parse_threshold_method(m);
}

struct PipelineConfig {
  SmartOdConfig smart_od;
  AssocConfig assoc;
  AshConfig ash;
  ChunkerConfig chunker;
  SyntheticWorldConfig world;
  DetectionNoise noise;
  PropagationDegradation degradation;
  DeploymentConfig deployment;

  FlashConfig flash() const { return {assoc, ash, chunker}; }
  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

inline void validate(const PipelineConfig& c) {
  validate(c.smart_od);
  validate(c.assoc);
  validate(c.ash);
  validate(c.chunker);
  validate(c.world);
  validate(c.noise);
  validate(c.degradation);
  validate(c.deployment);
}

// ---------------------------------------------------------------------------
// Field tables

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, MaskGeneratorParams>
void visit_fields(S& c, V&& v) {
  v("stability_score_thresh", c.stability_score_thresh);
  v("stability_score_offset", c.stability_score_offset);
  v("box_nms_thresh", c.box_nms_thresh);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, SmartOdConfig>
void visit_fields(S& c, V&& v) {
  v("theta_c", c.theta_c);
  v("theta_i", c.theta_i);
  v("theta_n", c.theta_n);
  v("theta_v", c.theta_v);
  v("theta_min_area", c.theta_min_area);
  v("theta_max_area", c.theta_max_area);
  v("epsilon_dbscan", c.epsilon_dbscan);
  v("mu_dbscan", c.mu_dbscan);
  v("theta_min", c.theta_min);
  v("threshold_method", c.threshold_method);
  v("slice_size", c.slice_size);
  v("slice_overlap", c.slice_overlap);
  v("verification", c.verification);
  v("mask_generator", c.mask_generator);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, AssocConfig>
void visit_fields(S& c, V&& v) {
  v("tau_track_det", c.tau_track_det);
  v("lambda_min", c.lambda_min);
  v("lambda_max", c.lambda_max);
  v("margin", c.margin);
  v("aspect_min", c.aspect_min);
  v("aspect_max", c.aspect_max);
  v("track_buffer", c.track_buffer);
  v("track_thresh", c.track_thresh);
  v("match_thresh", c.match_thresh);
  v("rescale_confidence", c.rescale_confidence);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, AshConfig>
void visit_fields(S& c, V&& v) {
  v("beta", c.beta);
  v("alpha", c.alpha);
  v("tau_merge", c.tau_merge);
  v("epsilon_mask", c.epsilon_mask);
  v("resample_n", c.resample_n);
  v("adaptive_smoothing", c.adaptive_smoothing);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, ChunkerConfig>
void visit_fields(S& c, V&& v) {
  v("chi", c.chi);
  v("omega", c.omega);
  v("tau_overlap", c.tau_overlap);
  v("window", c.window);
  v("checkpoint_interval", c.checkpoint_interval);
  v("budget", c.budget);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, ObjectSpec>
void visit_fields(S& c, V&& v) {
  v("cx", c.cx);
  v("cy", c.cy);
  v("vx", c.vx);
  v("vy", c.vy);
  v("axis_x", c.axis_x);
  v("axis_y", c.axis_y);
  v("class_label", c.class_label);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, SyntheticWorldConfig>
void visit_fields(S& c, V&& v) {
  v("frame_width", c.frame_width);
  v("frame_height", c.frame_height);
  v("num_objects", c.num_objects);
  v("num_frames", c.num_frames);
  v("max_speed", c.max_speed);
  v("axis_min", c.axis_min);
  v("axis_max", c.axis_max);
  v("rng_seed", c.rng_seed);
  v("occlusion_enabled", c.occlusion_enabled);
  v("class_labels", c.class_labels);
  v("objects", c.objects);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, DetectionNoise>
void visit_fields(S& c, V&& v) {
  v("miss_rate", c.miss_rate);
  v("fp_rate", c.fp_rate);
  v("jitter_sigma", c.jitter_sigma);
  v("tp_confidence_range", c.tp_confidence_range);
  v("fp_confidence_range", c.fp_confidence_range);
  v("fp_box_size", c.fp_box_size);
  v("rng_seed", c.rng_seed);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, PropagationDegradation>
void visit_fields(S& c, V&& v) {
  v("drift_x", c.drift_x);
  v("drift_y", c.drift_y);
  v("dropout_prob", c.dropout_prob);
  v("rng_seed", c.rng_seed);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, DeploymentConfig>
void visit_fields(S& c, V&& v) {
  v("alpha_weight", c.alpha_weight);
  v("gamma", c.gamma);
  v("tau_qa", c.tau_qa);
  v("qa_sample_fraction", c.qa_sample_fraction);
  v("qa_seed", c.qa_seed);
  v("iou_threshold", c.iou_threshold);
  v("grid", c.grid);
  v("threshold_methods", c.threshold_methods);
}

template <class S, class V>
  requires std::same_as<std::remove_const_t<S>, PipelineConfig>
void visit_fields(S& c, V&& v) {
  v("smart_od", c.smart_od);
  v("assoc", c.assoc);
  v("ash", c.ash);
  v("chunker", c.chunker);
  v("world", c.world);
  v("noise", c.noise);
  v("degradation", c.degradation);
  v("deployment", c.deployment);
}

namespace detail {

using json = nlohmann::json;

template <class T>
concept Visitable = requires(T& t) { visit_fields(t, [](const char*, auto&) {}); };

[[noreturn]] inline void config_type_error(const std::string& path, const char* expected) {
  throw Error(ErrorCategory::config, path + ": expected " + expected);
}

inline void read_value(const json& j, double& out, const std::string& path) {
  if (!j.is_number()) config_type_error(path, "a number");
  out = j.get<double>();
  if (!std::isfinite(out)) config_type_error(path, "a finite number");
}

inline void read_value(const json& j, int& out, const std::string& path) {
  if (!j.is_number_integer()) config_type_error(path, "an integer");
  const auto v = j.get<long long>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) config_type_error(path, "an int");
  out = static_cast<int>(v);
}

inline void read_value(const json& j, long long& out, const std::string& path) {
  if (!j.is_number_integer()) config_type_error(path, "an integer");
  out = j.get<long long>();
}

inline void read_value(const json& j, std::uint64_t& out, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    config_type_error(path, "a non-negative integer");
  out = j.get<std::uint64_t>();
}

inline void read_value(const json& j, bool& out, const std::string& path) {
  if (!j.is_boolean()) config_type_error(path, "true or false");
  out = j.get<bool>();
}

inline void read_value(const json& j, std::string& out, const std::string& path) {
  if (!j.is_string()) config_type_error(path, "a string");
  out = j.get<std::string>();
}

inline void read_value(const json& j, ThresholdMethod& out, const std::string& path) {
  if (!j.is_string()) config_type_error(path, "a threshold method name");
  try {
    out = parse_threshold_method(j.get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorCategory::config, path + ": " + e.what());
  }
}

inline void read_value(const json& j, ConfidenceRange& out, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    config_type_error(path, "[lo, hi]");
  out = {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
void read_value(const json& j, std::vector<T>& out, const std::string& path);
template <class T>
void read_value(const json& j, std::map<std::string, T>& out, const std::string& path);

template <Visitable S>
void read_value(const json& j, S& s, const std::string& path) {
  if (!j.is_object()) config_type_error(path.empty() ? "config" : path, "an object");
  std::set<std::string> known;
  visit_fields(s, [&](const char* name, auto& field) {
    known.insert(name);
    if (j.contains(name)) read_value(j.at(name), field, path.empty() ? std::string(name) : path + "." + name);
  });
  for (const auto& [k, v] : j.items())
    if (!known.count(k))
      throw Error(ErrorCategory::config, "unknown field '" + (path.empty() ? k : path + "." + k) + "'");
}

template <class T>
void read_value(const json& j, std::vector<T>& out, const std::string& path) {
  if (!j.is_array()) config_type_error(path, "an array");
  out.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T v{};
    read_value(j[i], v, path + "[" + std::to_string(i) + "]");
    out.push_back(std::move(v));
  }
}

template <class T>
void read_value(const json& j, std::map<std::string, T>& out, const std::string& path) {
  if (!j.is_object()) config_type_error(path, "an object");
  out.clear();
  for (const auto& [k, v] : j.items()) read_value(v, out[k], path + "." + k);
}

inline json write_value(double v) { return v; }
inline json write_value(int v) { return v; }
inline json write_value(long long v) { return v; }
inline json write_value(std::uint64_t v) { return v; }
inline json write_value(bool v) { return v; }
inline json write_value(const std::string& v) { return v; }
inline json write_value(ThresholdMethod m) { return to_string(m); }
inline json write_value(const ConfidenceRange& r) { return json::array({r.lo, r.hi}); }

template <class T>
json write_value(const std::vector<T>& v);
template <class T>
json write_value(const std::map<std::string, T>& m);

template <Visitable S>
json write_value(const S& s) {
  json out = json::object();
  visit_fields(s, [&](const char* name, const auto& field) { out[name] = write_value(field); });
  return out;
}

template <class T>
json write_value(const std::vector<T>& v) {
  json out = json::array();
  for (const auto& x : v) out.push_back(write_value(x));
  return out;
}

template <class T>
json write_value(const std::map<std::string, T>& m) {
  json out = json::object();
  for (const auto& [k, v] : m) out[k] = write_value(v);
  return out;
}

}  // namespace detail

/// Parses a configuration document; every section and field is optional.
inline PipelineConfig parse_config(const nlohmann::json& j) {
  PipelineConfig c;
  detail::read_value(j, c, "");
  validate(c);
  return c;
}

inline PipelineConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = text.find_first_not_of(" \t\r\n") == std::string::npos ? nlohmann::json::object() : nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCategory::config, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline PipelineConfig read_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCategory::io, std::string("reading config: ") + e.what());
  }
  try {
    return parse_config_text(text);
  } catch (const Error& e) {
    throw Error(e.category(), path.string() + ": " + e.what());
  }
}

/// Fully populated document, two-space indented, keys sorted.
inline std::string serialize_config(const PipelineConfig& c) { return detail::write_value(c).dump(2) + "\n"; }

/// Sets a numeric SmartOdConfig field by name; integral fields need an
/// integral value.
inline void set_smart_od_field(SmartOdConfig& c, const std::string& name, double value) {
  bool found = false;
  visit_fields(c, [&](const char* field, auto& slot) {
    if (name != field) return;
    using T = std::remove_cvref_t<decltype(slot)>;
    if constexpr (std::is_same_v<T, double>) {
      slot = value;
      found = true;
    } else if constexpr (std::is_same_v<T, int>) {
      if (value != std::floor(value)) throw Error(ErrorCategory::config, "grid." + name + ": needs integer values");
      slot = static_cast<int>(value);
      found = true;
    }
  });
  if (!found) throw Error(ErrorCategory::config, "grid." + name + ": not a numeric smart_od field");
}

}  // namespace autoannot
