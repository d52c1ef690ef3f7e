#pragma once

// AdamW + cosine schedule + clipping, the training loop, evaluation and the
// ablation harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "csasn/data.hpp"
#include "csasn/loss.hpp"
#include "csasn/metrics.hpp"
#include "csasn/model.hpp"
#include "csasn/preprocess.hpp"

namespace csasn {

struct TrainConfig {
  double lr0 = 1e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double eta_min = 0.0;
  std::uint64_t seed = 0;
  bool augment = false;
  AugmentSpec augment_spec;

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("train: lr0 must be > 0");
    if (!(clip_norm > 0)) throw ConfigError("train: clip_norm must be > 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("train: betas must be in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train: eps must be > 0");
    if (!(eta_min >= 0 && eta_min <= lr0)) throw ConfigError("train: eta_min must be in [0, lr0]");
  }
};

inline double cosine_lr(double t, double T, double lr0, double eta_min) {
  if (t < 0 || t > T) throw ConfigError("cosine_lr: epoch outside [0, T]");
  if (T == 0) return lr0;
  return eta_min + 0.5 * (lr0 - eta_min) * (1 + std::cos(std::numbers::pi * t / T));
}

// Learning rate for epoch e of E (0-based); the last epoch runs at eta_min.
inline double epoch_lr(std::size_t e, const TrainConfig& cfg) {
  return cosine_lr(static_cast<double>(e), static_cast<double>(cfg.epochs - 1), cfg.lr0, cfg.eta_min);
}

// Global L2 norm over all gradients; rescales them in place when it exceeds
// max_norm. Returns the norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<Var<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return norm;
  double s = max_norm / norm;
  // rounding in T can leave the result a few ulps above max_norm
  for (int tries = 0; tries < 8; ++tries) {
    double after = 0;
    for (const auto& p : params)
      for (T g : p.grad().data()) {
        const double v = static_cast<double>(static_cast<T>(g * static_cast<T>(s)));
        after += v * v;
      }
    if (std::sqrt(after) <= max_norm) break;
    s *= 1.0 - 4.0 * std::numeric_limits<T>::epsilon();
  }
  for (const auto& p : params)
    for (auto& g : p.node()->grad_buffer().data()) g *= static_cast<T>(s);
  return norm;
}

template <class T>
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  void add(const ParamStore<T>& store) {
    for (const auto& p : store.params())
      slots_.push_back({p.var, p.decay, Tensor<T>(p.var.shape(), T{0}),
                        Tensor<T>(p.var.shape(), T{0})});
  }

  std::vector<Var<T>> vars() const {
    std::vector<Var<T>> out;
    for (const auto& s : slots_) out.push_back(s.var);
    return out;
  }

  std::size_t steps() const { return t_; }

  // Adam moments with bias correction, then decay applied to the pre-update
  // value, independent of the moments.
  void step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
    for (auto& s : slots_) {
      auto& p = s.var.mutable_value();
      const auto& g = s.var.grad();
      if (g.shape() != p.shape()) throw DimensionError("adamw: gradient shape mismatch");
      const double wd = s.decay ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double m = b1 * static_cast<double>(s.m[i]) + (1 - b1) * gi;
        const double v = b2 * static_cast<double>(s.v[i]) + (1 - b2) * gi * gi;
        s.m[i] = static_cast<T>(m);
        s.v[i] = static_cast<T>(v);
        const double old = static_cast<double>(p[i]);
        p[i] = static_cast<T>(old - lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps) - lr * wd * old);
      }
    }
  }

 private:
  struct Slot {
    Var<T> var;
    bool decay;
    Tensor<T> m, v;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

// Deals each class, rarest subtypes first, round-robin over ceil(N/B)
// batches so every batch sees a positive of each task whenever that task has
// at least as many samples as there are batches. Batch order is shuffled.
template <class Rng>
std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<Sample>& samples,
                                                         std::size_t batch_size, Rng& rng) {
  if (samples.empty()) throw ConfigError("no training samples");
  const std::size_t nb = (samples.size() + batch_size - 1) / batch_size;
  std::array<std::vector<std::size_t>, 4> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_class[static_cast<int>(samples[i].subtype)].push_back(i);
  std::vector<std::vector<std::size_t>> batches(nb);
  std::size_t k = 0;
  for (int c : {1, 2, 3, 0}) {
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    for (std::size_t i : by_class[c]) batches[k++ % nb].push_back(i);
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

template <class T>
std::vector<Var<T>> decayed_params(const ParamStore<T>& store) {
  std::vector<Var<T>> out;
  for (const auto& p : store.params())
    if (p.decay) out.push_back(p.var);
  return out;
}

// Focal parameters per task from the training label counts.
inline std::array<TaskLossParams, kNumTasks> task_loss_params(const std::vector<Sample>& train,
                                                              const LossConfig& cfg) {
  std::array<TaskLossParams, kNumTasks> out;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    std::size_t pos = 0;
    for (const auto& s : train) pos += s.task_label(t);
    const std::size_t neg = train.size() - pos;
    if (pos == 0 || neg == 0)
      throw ConfigError("training set needs both classes for task " +
                        std::string(to_string(kTaskSubtypes[t])));
    out[t].gamma = adaptive_gamma(neg, pos, cfg);
    out[t].alpha = class_weights(neg, pos);
  }
  return out;
}

struct StepRecord {
  std::size_t epoch = 0, step = 0;
  double loss = 0, mmd = 0, bss = 0, grad_norm = 0, clipped_norm = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;  // mean over steps of the reported objective
  std::array<double, kNumTasks> focal{}, ce{}, task_total{};
  double mmd = 0, bss = 0, decay = 0;
  double max_grad_norm = 0, max_clipped_norm = 0;
  std::array<std::array<double, kNumComponents>, kNumTasks> sigma_sq{};
};

struct History {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

namespace detail {

inline void check_finite_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component: ") + what);
}

template <class T>
void check_breakdown(const LossBreakdown<T>& b) {
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    const std::string task(to_string(kTaskSubtypes[t]));
    if (!std::isfinite(b.focal[t])) throw NumericError("non-finite loss component: focal (" + task + ")");
    if (!std::isfinite(b.ce[t])) throw NumericError("non-finite loss component: ce (" + task + ")");
  }
  check_finite_loss(b.mmd, "mmd");
  check_finite_loss(b.bss, "bss");
  for (double v : b.task_total) check_finite_loss(v, "uncertainty-weighted total");
  check_finite_loss(b.decay, "weight decay");
  check_finite_loss(b.reported, "objective");
}

inline Image training_image(const Sample& s, const TrainConfig& cfg, std::size_t epoch) {
  if (!cfg.augment) return s.image;
  std::mt19937_64 rng(splitmix64(s.augment_seed ^ splitmix64(cfg.seed + epoch)));
  return augment(s.image, cfg.augment_spec, rng);
}

}  // namespace detail

// Optional per-step observer, called after the optimizer update.
using StepHook = std::function<void(const StepRecord&)>;

template <class T>
History fit(Model<T>& model, UncertaintyState<T>& state, const std::vector<Sample>& train,
            const LossConfig& loss_cfg, const TrainConfig& cfg, const StepHook& hook = {}) {
  cfg.validate();
  loss_cfg.validate();
  if (train.empty()) throw ConfigError("fit: empty training set");
  const auto tasks = task_loss_params(train, loss_cfg);

  TrainConfig opt_cfg = cfg;
  opt_cfg.weight_decay = loss_cfg.weight_decay;
  AdamW<T> opt(opt_cfg);
  opt.add(model.params());
  opt.add(state.store);
  const auto all = opt.vars();
  const auto decayed = decayed_params(model.params());

  std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ 0x7a11ULL));
  History hist;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = epoch_lr(e, cfg);
    const auto batches = stratified_batches(train, cfg.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      std::vector<Image> images;
      std::vector<const Image*> ptrs;
      std::vector<std::string> centers;
      LossInputs<T> in;
      images.reserve(idx.size());
      for (std::size_t i : idx) {
        images.push_back(detail::training_image(train[i], cfg, e));
        centers.push_back(train[i].center_id);
        for (std::size_t t = 0; t < kNumTasks; ++t) in.labels[t].push_back(train[i].task_label(t));
      }
      for (const auto& im : images) ptrs.push_back(&im);
      const auto x = Var<T>::constant(images_to_batch<T>(ptrs));
      const auto out = model.forward(x, Mode::Train, rng());
      std::tie(in.mmd_group_a, in.mmd_group_b) = mmd_partition(centers, rng);
      in.output = &out;
      in.tasks = tasks;
      in.decayed = decayed;
      auto br = final_loss(in, loss_cfg, state);
      detail::check_breakdown(br);

      for (const auto& v : all) v.node()->grad_buffer().fill(T{0});
      backward(br.objective);
      StepRecord sr{e, b, br.reported, br.mmd, br.bss, 0, 0};
      sr.grad_norm = clip_grad_norm(all, cfg.clip_norm);
      if (!std::isfinite(sr.grad_norm)) throw NumericError("non-finite gradient norm");
      double sq = 0;
      for (const auto& v : all)
        for (T g : v.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
      sr.clipped_norm = std::sqrt(sq);
      opt.step(rec.lr);

      const double w = 1.0 / static_cast<double>(batches.size());
      rec.loss += w * br.reported;
      for (std::size_t t = 0; t < kNumTasks; ++t) {
        rec.focal[t] += w * br.focal[t];
        rec.ce[t] += w * br.ce[t];
        rec.task_total[t] += w * br.task_total[t];
      }
      rec.mmd += w * br.mmd;
      rec.bss += w * br.bss;
      rec.decay += w * br.decay;
      rec.max_grad_norm = std::max(rec.max_grad_norm, sr.grad_norm);
      rec.max_clipped_norm = std::max(rec.max_clipped_norm, sr.clipped_norm);
      hist.steps.push_back(sr);
      if (hook) hook(sr);
    }
    for (std::size_t t = 0; t < kNumTasks; ++t)
      for (std::size_t i = 0; i < kNumComponents; ++i)
        rec.sigma_sq[t][i] = static_cast<double>(state.sigma_sq(t, i));
    hist.epochs.push_back(rec);
  }
  return hist;
}

struct Evaluation {
  MetricsReport report;
  std::array<std::vector<double>, kNumTasks> scores;
  std::array<std::vector<int>, kNumTasks> labels;
};

// The whole set goes through the model as one batch, since the head attends
// across the batch.
template <class T>
Evaluation evaluate(const Model<T>& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ConfigError("evaluate: empty sample set");
  std::vector<const Image*> ptrs;
  Evaluation ev;
  for (const auto& s : samples) {
    ptrs.push_back(&s.image);
    for (std::size_t t = 0; t < kNumTasks; ++t) ev.labels[t].push_back(s.task_label(t));
  }
  ev.scores = model.predict(images_to_batch<T>(ptrs));
  for (const auto& sc : ev.scores)
    for (double v : sc)
      if (!std::isfinite(v)) throw NumericError("non-finite prediction");
  ev.report = metrics_report(ev.scores, ev.labels);
  return ev;
}

template <class T>
struct RunResult {
  Variant variant = Variant::Full;
  History history;
  Evaluation eval;
};

// Builds the variant from `model_cfg` with `model_seed`, trains it on `train`
// and evaluates on `test`. Every variant sees the same data and schedule.
template <class T>
RunResult<T> run_ablation(Variant variant, const std::vector<Sample>& train,
                          const std::vector<Sample>& test, ModelConfig model_cfg,
                          const LossConfig& loss_cfg, const TrainConfig& train_cfg,
                          std::uint64_t model_seed) {
  model_cfg.variant = variant;
  Model<T> model(model_cfg, model_seed);
  UncertaintyState<T> state;
  RunResult<T> r;
  r.variant = variant;
  r.history = fit(model, state, train, loss_cfg, train_cfg);
  r.eval = evaluate(model, test);
  return r;
}

// ---------------------------------------------------------------------------
// Output files

inline void write_history_csv(const History& h, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  os << "epoch,lr,loss";
  for (const char* k : {"focal", "ce", "task_total"})
    for (auto s : kTaskSubtypes) os << "," << k << "_" << to_string(s);
  os << ",mmd,bss,decay,max_grad_norm,max_clipped_norm";
  const char* comp[kNumComponents] = {"focal", "ce", "mmd", "bss"};
  for (auto s : kTaskSubtypes)
    for (const char* c : comp) os << ",sigma2_" << to_string(s) << "_" << c;
  os << "\n";
  for (const auto& r : h.epochs) {
    os << r.epoch << "," << r.lr << "," << r.loss;
    for (const auto* a : {&r.focal, &r.ce, &r.task_total})
      for (double v : *a) os << "," << v;
    os << "," << r.mmd << "," << r.bss << "," << r.decay << "," << r.max_grad_norm << ","
       << r.max_clipped_norm;
    for (const auto& row : r.sigma_sq)
      for (double v : row) os << "," << v;
    os << "\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

inline void write_steps_csv(const History& h, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17) << "epoch,step,loss,mmd,bss,grad_norm,clipped_norm\n";
  for (const auto& s : h.steps)
    os << s.epoch << "," << s.step << "," << s.loss << "," << s.mmd << "," << s.bss << ","
       << s.grad_norm << "," << s.clipped_norm << "\n";
  if (!os) throw IoError("failed writing " + path.string());
}

inline void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17) << to_json(r).dump(2) << "\n";
  if (!os) throw IoError("failed writing " + path.string());
}

// Per-sample predictions: identity, subtype and the three positive-class
// probabilities.
inline void write_predictions_csv(const std::vector<Sample>& samples, const Evaluation& ev,
                                  const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17) << "path,patient_id,subtype";
  for (auto s : kTaskSubtypes) os << ",p_" << to_string(s);
  os << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    os << samples[i].path << "," << samples[i].patient_id << "," << to_string(samples[i].subtype);
    for (std::size_t t = 0; t < kNumTasks; ++t) os << "," << ev.scores[t][i];
    os << "\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

struct Predictions {
  std::array<std::vector<double>, kNumTasks> scores;
  std::array<std::vector<int>, kNumTasks> labels;
};

inline Predictions read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing predictions file: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("path,patient_id,subtype,p_ATC,p_FTC,p_MTC", 0) != 0)
    throw IoError(path.string() + ": bad predictions header");
  Predictions p;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw IoError(where + "expected 6 fields");
    Subtype s;
    try {
      s = subtype_from_string(f[2]);
    } catch (const IoError& e) {
      throw IoError(where + e.what());
    }
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      double v;
      try {
        std::size_t used = 0;
        v = std::stod(f[3 + t], &used);
        if (used != f[3 + t].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw IoError(where + "bad probability '" + f[3 + t] + "'");
      }
      if (!std::isfinite(v)) throw IoError(where + "non-finite probability");
      p.scores[t].push_back(v);
      p.labels[t].push_back(s == kTaskSubtypes[t]);
    }
  }
  if (p.scores[0].empty()) throw IoError(path.string() + ": no predictions");
  return p;
}

inline void write_roc_csv(const Predictions& p, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17) << "task,threshold,fpr,tpr\n";
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    const auto both = std::count(p.labels[t].begin(), p.labels[t].end(), 1);
    if (both == 0 || both == static_cast<long>(p.labels[t].size())) continue;  // undefined ROC
    for (const auto& pt : roc_curve(p.scores[t], p.labels[t]))
      os << to_string(kTaskSubtypes[t]) << "," << pt.threshold << "," << pt.fpr << "," << pt.tpr
         << "\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace csasn
