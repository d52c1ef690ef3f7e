#pragma once

// Synthetic multi-center nodule images, manifest IO and patient-level splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "csasn/image.hpp"
#include "csasn/loss.hpp"
#include "csasn/sample.hpp"

namespace csasn {

// Per-center acquisition bias applied as p' = contrast * (p - 0.5) + 0.5 + brightness.
struct CenterProfile {
  std::string id;
  double brightness = 0.0;
  double contrast = 1.0;
};

inline std::vector<CenterProfile> default_centers(std::size_t n) {
  if (n == 0) throw ConfigError("synth: need at least one center");
  std::vector<CenterProfile> out;
  for (std::size_t k = 0; k < n; ++k) {
    // alternate brighter/darker, growing with k
    const double step = static_cast<double>((k + 1) / 2) * (k % 2 ? 1.0 : -1.0);
    out.push_back({"center" + std::to_string(k), 0.06 * step, 1.0 - 0.06 * (k % 3)});
  }
  return out;
}

struct SynthConfig {
  std::size_t n_patients = 240;
  std::size_t image_size = 64;
  // Benign, ATC, FTC, MTC. Benign majority and ATC rarest, as in the reported
  // cohort, but with enough malignant cases for a held-out test split.
  std::array<double, 4> class_probs{0.52, 0.12, 0.20, 0.16};
  std::vector<CenterProfile> centers = default_centers(2);

  // rendering
  double background = 0.35;
  double speckle_sd = 0.06;
  double noise_sd = 0.03;
  double nodule_contrast = 0.22;
  double ragged_amplitude = 0.22;  // ATC margin irregularity
  double halo_contrast = 0.08;     // FTC ring
  double halo_radius = 1.6;        // in nodule radii
  double halo_width = 0.45;
  double spot_contrast = 0.30;     // MTC punctate spots
  std::size_t clutter_spots = 0;   // up to this many spot-like distractors outside the nodule, any class

  void validate() const {
    double s = 0.0;
    for (double p : class_probs) {
      if (!(p >= 0.0)) throw ConfigError("synth: class probabilities must be >= 0");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("synth: class probabilities must sum to 1");
    if (n_patients == 0) throw ConfigError("synth: n_patients must be positive");
    if (image_size < 16) throw ConfigError("synth: image_size must be >= 16");
    if (centers.empty()) throw ConfigError("synth: need at least one center");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double smoothstep_edge(double d, double width) {
  return 1.0 / (1.0 + std::exp(-d / width));
}

// Draws one nodule image of the given subtype before center bias.
inline Image render_nodule(Subtype subtype, const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::size_t S = cfg.image_size;
  const double s = static_cast<double>(S);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };

  // speckle: blurred gaussian field plus fine noise
  std::vector<double> field(S * S);
  for (auto& v : field) v = N(rng);
  Image img(S, S);
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) {
      double acc = 0.0;
      int cnt = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(S) || cc >= static_cast<long>(S))
            continue;
          acc += field[rr * S + cc];
          ++cnt;
        }
      img(r, c) = cfg.background + cfg.speckle_sd * acc / std::sqrt(static_cast<double>(cnt)) +
                  cfg.noise_sd * N(rng);
    }

  const double scale = s / 64.0;
  const double cx = s / 2 + uni(-8, 8) * scale;
  const double cy = s / 2 + uni(-8, 8) * scale;
  const double a = uni(9, 14) * scale;
  const double b = a * uni(0.65, 1.0);
  const double phi = uni(0, std::numbers::pi);
  const double cp = std::cos(phi), sp = std::sin(phi);

  // angular boundary modulation
  std::array<double, 7> amp{}, phase{};
  const double ragged = subtype == Subtype::ATC ? cfg.ragged_amplitude : 0.03;
  for (std::size_t k = 0; k < amp.size(); ++k) {
    amp[k] = ragged * uni(0.3, 1.0) / std::sqrt(static_cast<double>(amp.size()));
    phase[k] = uni(0, 2 * std::numbers::pi);
  }
  const double contrast = cfg.nodule_contrast * (subtype == Subtype::ATC ? 1.5 : 1.0);
  const double edge = subtype == Subtype::ATC ? 0.02 : 0.08;

  std::vector<std::array<double, 2>> spots;
  if (subtype == Subtype::MTC) {
    const int n = 4 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      const double rho = 0.75 * std::sqrt(U(rng));
      const double th = uni(0, 2 * std::numbers::pi);
      const double u = rho * a * std::cos(th), v = rho * b * std::sin(th);
      spots.push_back({cx + u * cp - v * sp, cy + u * sp + v * cp});
    }
  }

  const std::size_t n_clutter = cfg.clutter_spots ? rng() % (cfg.clutter_spots + 1) : 0;
  for (std::size_t i = 0; i < n_clutter; ++i) {
    // rejection-sample a point outside the nodule
    for (int tries = 0; tries < 50; ++tries) {
      const double x = uni(0, s), y = uni(0, s);
      const double u = ((x - cx) * cp + (y - cy) * sp) / a, v = (-(x - cx) * sp + (y - cy) * cp) / b;
      if (std::hypot(u, v) > 1.3) {
        spots.push_back({x, y});
        break;
      }
    }
  }

  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) {
      const double dx = static_cast<double>(c) - cx, dy = static_cast<double>(r) - cy;
      const double u = (dx * cp + dy * sp) / a;
      const double v = (-dx * sp + dy * cp) / b;
      const double rho = std::hypot(u, v);
      const double th = std::atan2(v, u);
      double boundary = 1.0;
      for (std::size_t k = 0; k < amp.size(); ++k)
        boundary += amp[k] * std::sin(static_cast<double>(k + 7) * th + phase[k]);
      double add = contrast * smoothstep_edge(boundary - rho, edge);
      if (subtype == Subtype::FTC) {
        const double z = (rho - cfg.halo_radius) / cfg.halo_width;
        add += cfg.halo_contrast * std::exp(-z * z);
      }
      for (const auto& sp2 : spots) {
        const double ex = static_cast<double>(c) - sp2[0], ey = static_cast<double>(r) - sp2[1];
        add += cfg.spot_contrast * std::exp(-(ex * ex + ey * ey) / (2 * 0.8 * 0.8 * scale * scale));
      }
      img(r, c) += add;
    }
  return img;
}

inline void apply_center_bias(Image& img, const CenterProfile& p) {
  for (auto& v : img.pixels) v = p.contrast * (v - 0.5) + 0.5 + p.brightness;
  clamp_unit(img);
}

}  // namespace detail

// Each patient draws a subtype and a center, then 1 or 2 images. Every
// patient has an independent random stream derived from (seed, index), so the
// result is a pure function of (cfg, seed).
inline std::vector<Sample> generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Sample> out;
  const std::size_t width = std::to_string(cfg.n_patients).size();
  for (std::size_t p = 0; p < cfg.n_patients; ++p) {
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(p + 1)));
    std::discrete_distribution<int> cls(cfg.class_probs.begin(), cfg.class_probs.end());
    const auto subtype = static_cast<Subtype>(cls(rng));
    const auto& center = cfg.centers[rng() % cfg.centers.size()];
    const int images = 1 + static_cast<int>(rng() % 2);
    std::string pid = std::to_string(p + 1);
    pid = "p" + std::string(width - pid.size(), '0') + pid;
    for (int k = 0; k < images; ++k) {
      Sample s;
      s.image = detail::render_nodule(subtype, cfg, rng);
      detail::apply_center_bias(s.image, center);
      s.subtype = subtype;
      s.patient_id = pid;
      s.center_id = center.id;
      s.path = "images/" + pid + "_" + std::to_string(k) + ".png";
      s.augment_seed = rng();
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: CSV `path,subtype,malignancy,patient_id,center_id`, image paths
// relative to the manifest's directory.

inline constexpr const char* kManifestHeader = "path,subtype,malignancy,patient_id,center_id";

inline void write_manifest(const std::vector<Sample>& samples,
                           const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << kManifestHeader << "\n";
  for (const auto& s : samples) {
    for (const auto* f : {&s.path, &s.patient_id, &s.center_id}) {
      if (f->find_first_of(",\n\r") != std::string::npos)
        throw IoError("manifest field contains a separator: '" + *f + "'");
    }
    os << s.path << "," << to_string(s.subtype) << "," << s.malignancy() << ","
       << s.patient_id << "," << s.center_id << "\n";
  }
  if (!os) throw IoError("failed writing manifest: " + path.string());
}

// Writes every image (as PNG, or raw f32 for a .f32 path) under `dir` and
// the manifest as dir/manifest.csv.
inline void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : samples) {
    if (s.path.empty()) throw IoError("sample has no image path");
    const auto p = dir / s.path;
    std::filesystem::create_directories(p.parent_path());
    write_image(p, s.image);
  }
  write_manifest(samples, dir / "manifest.csv");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Reads the manifest and its images. With load_images=false only metadata is
// read, but image files must still exist.
inline std::vector<Sample> load_manifest(const std::filesystem::path& path,
                                         bool load_images = true) {
  std::ifstream is(path);
  if (!is) throw IoError("missing manifest: " + path.string());
  const auto dir = path.parent_path();
  std::string line;
  std::vector<Sample> out;
  if (!std::getline(is, line)) return out;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw IoError(path.string() + ": bad header, expected '" + kManifestHeader + "'");
  std::set<std::pair<std::string, std::string>> keys;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw IoError(where + "expected 5 fields, got " + std::to_string(f.size()));
    Sample s;
    s.path = f[0];
    try {
      s.subtype = subtype_from_string(f[1]);
    } catch (const IoError& e) {
      throw IoError(where + e.what());
    }
    if (f[2] != "0" && f[2] != "1") throw IoError(where + "malignancy must be 0 or 1");
    if ((f[2] == "1") != (s.subtype != Subtype::Benign))
      throw IoError(where + "malignancy " + f[2] + " inconsistent with subtype " + f[1]);
    s.patient_id = f[3];
    s.center_id = f[4];
    if (s.path.empty()) throw IoError(where + "empty image path");
    if (s.patient_id.empty()) throw IoError(where + "empty patient_id");
    if (!keys.insert({s.patient_id, s.path}).second)
      throw IoError(where + "duplicate entry for patient " + s.patient_id + " image " + s.path);
    const auto img = dir / s.path;
    if (!std::filesystem::exists(img)) throw IoError(where + "missing image " + img.string());
    if (load_images) s.image = read_image(img);
    s.augment_seed = detail::splitmix64(std::hash<std::string>{}(s.patient_id + "/" + s.path));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patient-level splits

struct SplitPlan {
  std::set<std::string> train_patients;
  std::set<std::string> test_patients;
  double mmd_score = 0.0;
  std::vector<double> candidate_scores;  // filled by mmd_max_split
};

inline std::vector<std::string> patient_ids(const std::vector<Sample>& samples) {
  std::set<std::string> ids;
  for (const auto& s : samples) ids.insert(s.patient_id);
  return {ids.begin(), ids.end()};
}

// round(test_frac * patients), at least 1 and at most patients - 1.
template <class Rng>
SplitPlan patient_split(const std::vector<Sample>& samples, double test_frac, Rng& rng) {
  auto ids = patient_ids(samples);
  if (ids.size() < 2) throw ConfigError("patient_split: need at least 2 patients");
  if (!(test_frac > 0.0 && test_frac < 1.0))
    throw ConfigError("patient_split: test fraction must be in (0, 1)");
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_test = static_cast<std::size_t>(std::lround(test_frac * static_cast<double>(ids.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
  SplitPlan plan;
  plan.test_patients.insert(ids.begin(), ids.begin() + static_cast<long>(n_test));
  plan.train_patients.insert(ids.begin() + static_cast<long>(n_test), ids.end());
  return plan;
}

inline std::pair<std::vector<Sample>, std::vector<Sample>> apply_split(
    const std::vector<Sample>& samples, const SplitPlan& plan) {
  std::vector<Sample> train, test;
  for (const auto& s : samples) {
    if (plan.test_patients.count(s.patient_id)) test.push_back(s);
    else if (plan.train_patients.count(s.patient_id)) train.push_back(s);
    else throw ConfigError("split does not cover patient " + s.patient_id);
  }
  return {train, test};
}

inline constexpr std::size_t kSummaryFeatures = 10;

// mean, variance and an 8-bin intensity histogram (fractions) over [0, 1].
inline std::array<double, kSummaryFeatures> summary_features(const Image& img) {
  std::array<double, kSummaryFeatures> f{};
  const double n = static_cast<double>(img.pixels.size());
  const double mu = image_mean(img);
  double var = 0.0;
  for (double p : img.pixels) {
    var += (p - mu) * (p - mu);
    const auto bin = std::min<std::size_t>(7, static_cast<std::size_t>(std::max(0.0, p) * 8));
    f[2 + bin] += 1.0 / n;
  }
  f[0] = mu;
  f[1] = var / n;
  return f;
}

inline double split_mmd(const std::vector<std::array<double, kSummaryFeatures>>& feats,
                        const std::vector<std::size_t>& train_rows,
                        const std::vector<std::size_t>& test_rows,
                        const std::vector<double>& factors) {
  auto gather = [&](const std::vector<std::size_t>& rows) {
    Tensor<double> t({rows.size(), kSummaryFeatures});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < kSummaryFeatures; ++k) t[i * kSummaryFeatures + k] = feats[rows[i]][k];
    return Var<double>::constant(std::move(t));
  };
  NoGradGuard guard;
  return mmd(gather(train_rows), gather(test_rows), factors).value().item();
}

// Scores `candidates` random patient splits by the MMD between train and test
// image summary statistics and returns the most discrepant one.
template <class Rng>
SplitPlan mmd_max_split(const std::vector<Sample>& samples, std::size_t candidates,
                        double test_frac, Rng& rng, const LossConfig& loss_cfg = {}) {
  if (candidates < 1) throw ConfigError("mmd_max_split: need at least one candidate");
  std::vector<std::array<double, kSummaryFeatures>> feats;
  feats.reserve(samples.size());
  for (const auto& s : samples) feats.push_back(summary_features(s.image));
  SplitPlan best;
  std::vector<double> scores;
  for (std::size_t c = 0; c < candidates; ++c) {
    auto plan = patient_split(samples, test_frac, rng);
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < samples.size(); ++i)
      (plan.test_patients.count(samples[i].patient_id) ? te : tr).push_back(i);
    plan.mmd_score = split_mmd(feats, tr, te, loss_cfg.bandwidth_factors);
    scores.push_back(plan.mmd_score);
    if (c == 0 || plan.mmd_score > best.mmd_score) best = std::move(plan);
  }
  best.candidate_scores = std::move(scores);
  return best;
}

}  // namespace csasn
