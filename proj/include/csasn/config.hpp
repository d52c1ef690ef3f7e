#pragma once

// key=value run configuration: one flat namespace of dotted keys covering the
// model, loss, training, synthesis and preprocessing settings.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "csasn/data.hpp"
#include "csasn/loss.hpp"
#include "csasn/model_config.hpp"
#include "csasn/preprocess.hpp"
#include "csasn/trainer.hpp"

namespace csasn {

enum class Precision { F32, F64 };

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  SynthConfig synth;
  FilterSpec filter;
  AugmentSpec augment;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  std::size_t oversample = 9;
  bool apply_filter = true;
  bool apply_augment = true;
  double test_fraction = 0.2;
  std::size_t split_candidates = 32;  // 0 = plain random patient split
  std::size_t n_centers = 2;

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
    synth.validate();
    filter.validate();
    if (oversample < 1) throw ConfigError("oversample must be >= 1");
    if (!(test_fraction > 0 && test_fraction < 1))
      throw ConfigError("split.test_fraction must be in (0, 1)");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto n = std::stoull(v, &used);
      if (used == v.size()) return n;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
std::string show(const T& v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

struct ConfigField {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

// Every settable key, bound to the fields of `rc`.
inline std::vector<ConfigField> config_fields(RunConfig& rc) {
  using namespace detail;
  std::vector<ConfigField> f;
  auto num = [&f](const std::string& key, double& ref) {
    f.push_back({key, [&ref, key](const std::string& v) { ref = parse_double(key, v); },
                 [&ref] { return show(ref); }});
  };
  auto count = [&f](const std::string& key, std::size_t& ref) {
    f.push_back({key, [&ref, key](const std::string& v) { ref = parse_uint(key, v); },
                 [&ref] { return show(ref); }});
  };
  auto flag = [&f](const std::string& key, bool& ref) {
    f.push_back({key, [&ref, key](const std::string& v) { ref = parse_bool(key, v); },
                 [&ref] { return std::string(ref ? "true" : "false"); }});
  };
  auto counts = [&f](const std::string& key, std::vector<std::size_t>& ref) {
    f.push_back({key,
                 [&ref, key](const std::string& v) {
                   ref.clear();
                   for (const auto& s : split_list(v)) ref.push_back(parse_uint(key, s));
                 },
                 [&ref] {
                   std::string s;
                   for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + show(ref[i]);
                   return s;
                 }});
  };
  auto nums = [&f](const std::string& key, auto& ref, std::size_t fixed_size) {
    f.push_back({key,
                 [&ref, key, fixed_size](const std::string& v) {
                   const auto items = split_list(v);
                   if (fixed_size && items.size() != fixed_size)
                     throw ConfigError(key + ": expected " + std::to_string(fixed_size) + " values");
                   std::vector<double> vals;
                   for (const auto& s : items) vals.push_back(parse_double(key, s));
                   ref = {};
                   if constexpr (std::is_same_v<std::decay_t<decltype(ref)>, std::vector<double>>)
                     ref = vals;
                   else
                     std::copy(vals.begin(), vals.end(), ref.begin());
                 },
                 [&ref] {
                   std::string s;
                   for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + show(ref[i]);
                   return s;
                 }});
  };

  auto& m = rc.model;
  count("model.image_size", m.image_size);
  count("model.in_channels", m.in_channels);
  count("model.stem_channels", m.stem_channels);
  counts("model.stage_channels", m.stage_channels);
  count("model.convs_per_stage", m.convs_per_stage);
  count("model.c1", m.c1);
  num("model.scaling.phi", m.scaling.phi);
  num("model.scaling.alpha", m.scaling.alpha);
  num("model.scaling.beta", m.scaling.beta);
  num("model.scaling.gamma", m.scaling.gamma);
  count("model.patch", m.patch);
  count("model.vit_dim", m.vit_dim);
  count("model.vit_heads", m.vit_heads);
  count("model.vit_layers", m.vit_layers);
  count("model.vit_mlp", m.vit_mlp);
  count("model.se_reduction", m.se_reduction);
  count("model.spatial_kernel", m.spatial_kernel);
  count("model.head_heads", m.head_heads);
  count("model.hidden1", m.hidden1);
  count("model.hidden2", m.hidden2);
  num("model.dropout", m.dropout);
  f.push_back({"model.variant", [&m](const std::string& v) { m.variant = variant_from_string(v); },
               [&m] { return std::string(to_string(m.variant)); }});

  auto& l = rc.loss;
  num("loss.gamma0", l.gamma0);
  num("loss.gamma_min", l.gamma_min);
  num("loss.gamma_max", l.gamma_max);
  nums("loss.bandwidth_factors", l.bandwidth_factors, 0);
  num("loss.bss_fraction", l.bss_fraction);
  num("loss.weight_decay", l.weight_decay);
  f.push_back({"loss.fixed_lambda",
               [&l](const std::string& v) {
                 if (v.empty() || v == "none") {
                   l.fixed_lambda.reset();
                   return;
                 }
                 std::array<double, kNumComponents> a{};
                 const auto items = split_list(v);
                 if (items.size() != kNumComponents)
                   throw ConfigError("loss.fixed_lambda: expected 4 values");
                 for (std::size_t i = 0; i < a.size(); ++i)
                   a[i] = parse_double("loss.fixed_lambda", items[i]);
                 l.fixed_lambda = a;
               },
               [&l] {
                 if (!l.fixed_lambda) return std::string("none");
                 std::string s;
                 for (std::size_t i = 0; i < kNumComponents; ++i)
                   s += (i ? "," : "") + show((*l.fixed_lambda)[i]);
                 return s;
               }});

  auto& t = rc.train;
  num("train.lr0", t.lr0);
  count("train.epochs", t.epochs);
  count("train.batch_size", t.batch_size);
  num("train.clip_norm", t.clip_norm);
  num("train.beta1", t.beta1);
  num("train.beta2", t.beta2);
  num("train.eps", t.eps);
  num("train.eta_min", t.eta_min);
  flag("train.augment", t.augment);

  auto& s = rc.synth;
  count("synth.patients", s.n_patients);
  count("synth.image_size", s.image_size);
  nums("synth.class_probs", s.class_probs, 4);
  count("synth.centers", rc.n_centers);
  num("synth.background", s.background);
  num("synth.speckle_sd", s.speckle_sd);
  num("synth.noise_sd", s.noise_sd);
  num("synth.nodule_contrast", s.nodule_contrast);
  num("synth.ragged_amplitude", s.ragged_amplitude);
  num("synth.halo_contrast", s.halo_contrast);
  num("synth.halo_radius", s.halo_radius);
  num("synth.halo_width", s.halo_width);
  num("synth.spot_contrast", s.spot_contrast);
  count("synth.clutter_spots", s.clutter_spots);

  num("filter.low", rc.filter.d_low);
  num("filter.high", rc.filter.d_high);
  num("filter.reference_size", rc.filter.reference_size);
  flag("preprocess.filter", rc.apply_filter);
  flag("preprocess.augment", rc.apply_augment);
  count("preprocess.oversample", rc.oversample);
  num("augment.brightness_min", rc.augment.brightness_delta_min);
  num("augment.brightness_max", rc.augment.brightness_delta_max);
  num("augment.contrast_min", rc.augment.contrast_scale_min);
  num("augment.contrast_max", rc.augment.contrast_scale_max);
  num("augment.flip_h_prob", rc.augment.flip_h_prob);
  num("augment.flip_v_prob", rc.augment.flip_v_prob);

  num("split.test_fraction", rc.test_fraction);
  count("split.candidates", rc.split_candidates);
  f.push_back({"seed", [&rc](const std::string& v) { rc.seed = parse_uint("seed", v); },
               [&rc] { return show(rc.seed); }});
  f.push_back({"precision",
               [&rc](const std::string& v) {
                 if (v == "f32") rc.precision = Precision::F32;
                 else if (v == "f64") rc.precision = Precision::F64;
                 else throw ConfigError("precision: expected f32 or f64, got '" + v + "'");
               },
               [&rc] { return std::string(rc.precision == Precision::F32 ? "f32" : "f64"); }});
  return f;
}

inline void set_config_value(RunConfig& rc, const std::string& key, const std::string& value) {
  for (auto& f : config_fields(rc))
    if (f.key == key) {
      f.set(value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

// Derived settings that mirror other keys: synthesis centers, train seed,
// weight decay shared by the loss report and the optimizer.
inline void finalize(RunConfig& rc) {
  rc.synth.centers = default_centers(rc.n_centers);
  rc.train.seed = rc.seed;
  rc.train.weight_decay = rc.loss.weight_decay;
  rc.train.augment_spec = rc.augment;
}

// Lines are `key = value`; '#' starts a comment. Later lines win.
inline std::map<std::string, std::string> parse_key_values(std::istream& is,
                                                           const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline void apply_config_file(RunConfig& rc, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  for (const auto& [k, v] : parse_key_values(is, path.string())) {
    try {
      set_config_value(rc, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
}

// Writes keys with the given prefix (all keys when empty).
inline void write_config(const RunConfig& rc, const std::filesystem::path& path,
                         const std::string& prefix = "") {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  RunConfig copy = rc;
  for (const auto& f : config_fields(copy))
    if (f.key.rfind(prefix, 0) == 0) os << f.key << " = " << f.get() << "\n";
  if (!os) throw IoError("failed writing " + path.string());
}

// Model architecture stored next to a checkpoint, so eval can rebuild it.
inline std::filesystem::path model_config_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".model";
  return p;
}

inline void save_model_config(const ModelConfig& m, const std::filesystem::path& checkpoint) {
  RunConfig rc;
  rc.model = m;
  write_config(rc, model_config_path(checkpoint), "model.");
}

inline ModelConfig load_model_config(const std::filesystem::path& checkpoint) {
  const auto p = model_config_path(checkpoint);
  if (!std::filesystem::exists(p)) throw IoError("missing model config " + p.string());
  RunConfig rc;
  std::ifstream is(p);
  for (const auto& [k, v] : parse_key_values(is, p.string())) {
    if (k.rfind("model.", 0) != 0) throw IoError(p.string() + ": unexpected key " + k);
    set_config_value(rc, k, v);
  }
  rc.model.validate();
  return rc.model;
}

}  // namespace csasn
