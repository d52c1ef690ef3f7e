// csasn: synth, preprocess, train, eval, ablate, export-roc.
//
// Exit codes: 0 success, 2 usage or configuration error (including missing or
// malformed inputs named on the command line), 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "csasn/config.hpp"
#include "csasn/data.hpp"
#include "csasn/preprocess.hpp"
#include "csasn/trainer.hpp"

using namespace csasn;
namespace fs = std::filesystem;

namespace {

// Input problems found before any work starts.
struct UsageError : Error {
  using Error::Error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string precision;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value config file");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--precision", c.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app->add_option("--set", c.sets, "override a config key: key=value");
}

// Config file, then --set overrides, then dedicated flags (applied by the
// caller via `extra`).
RunConfig resolve(const Common& c, const std::vector<std::pair<std::string, std::string>>& extra) {
  RunConfig rc;
  if (!c.config.empty()) apply_config_file(rc, c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(rc, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  for (const auto& [k, v] : extra) set_config_value(rc, k, v);
  if (c.seed) rc.seed = *c.seed;
  if (!c.precision.empty()) set_config_value(rc, "precision", c.precision);
  finalize(rc);
  rc.validate();
  return rc;
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw UsageError("cannot create output directory " + out);
  return fs::path(out);
}

std::vector<Sample> load_input_manifest(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("--manifest: no such file " + path);
  try {
    return load_manifest(path);
  } catch (const IoError& e) {
    throw UsageError(std::string("--manifest: ") + e.what());
  }
}

// Manifest with absolute image paths, so it can live anywhere.
void write_absolute_manifest(std::vector<Sample> samples, const fs::path& manifest_dir,
                             const fs::path& path) {
  for (auto& s : samples) s.path = fs::absolute(manifest_dir / s.path).lexically_normal().string();
  write_manifest(samples, path);
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::optional<std::size_t> patients, std::optional<std::size_t> centers,
              const std::string& probs, std::optional<std::size_t> size) {
  std::vector<std::pair<std::string, std::string>> extra;
  if (patients) extra.emplace_back("synth.patients", std::to_string(*patients));
  if (centers) extra.emplace_back("synth.centers", std::to_string(*centers));
  if (size) extra.emplace_back("synth.image_size", std::to_string(*size));
  RunConfig rc;
  try {
    if (!probs.empty()) extra.emplace_back("synth.class_probs", probs);
    rc = resolve(c, extra);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.find("class") != std::string::npos) throw ConfigError("--class-probs: " + msg);
    throw;
  }
  const auto out = prepare_out(c.out);
  const auto data = generate_synthetic(rc.synth, rc.seed);
  save_dataset(data, out);
  write_config(rc, out / "config.txt", "synth.");
  std::cout << "wrote " << data.size() << " images for " << rc.synth.n_patients << " patients to "
            << (out / "manifest.csv").string() << "\n";
  return 0;
}

int cmd_preprocess(const Common& c, const std::string& manifest, std::optional<std::size_t> oversample_n,
                   bool no_augment, bool no_filter, std::optional<double> lo, std::optional<double> hi) {
  std::vector<std::pair<std::string, std::string>> extra;
  if (oversample_n) extra.emplace_back("preprocess.oversample", std::to_string(*oversample_n));
  if (no_augment) extra.emplace_back("preprocess.augment", "false");
  if (no_filter) extra.emplace_back("preprocess.filter", "false");
  if (lo) extra.emplace_back("filter.low", detail::show(*lo));
  if (hi) extra.emplace_back("filter.high", detail::show(*hi));
  const auto rc = resolve(c, extra);
  const auto input = load_input_manifest(manifest);
  const auto out = prepare_out(c.out);

  std::mt19937_64 rng(rc.seed);
  auto samples = oversample(input, rc.oversample, rng);
  // keep the input order, replicas next to their source
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < input.size(); ++i) order[input[i].patient_id + "/" + input[i].path] = i;
  std::stable_sort(samples.begin(), samples.end(), [&](const Sample& a, const Sample& b) {
    return order[a.patient_id + "/" + a.path] < order[b.patient_id + "/" + b.path];
  });
  std::map<std::string, int> replica;
  for (auto& s : samples) {
    if (rc.apply_filter) s.image = bandpass_filter(s.image, rc.filter);
    if (rc.apply_augment) {
      std::mt19937_64 r(s.augment_seed);
      s.image = augment(s.image, rc.augment, r);
    }
    const int k = replica[s.patient_id + "/" + s.path]++;
    fs::path p = s.path;
    if (k > 0) p.replace_filename(p.stem().string() + "_r" + std::to_string(k) + p.extension().string());
    s.path = p.string();
  }
  save_dataset(samples, out);
  write_config(rc, out / "config.txt");
  std::cout << "wrote " << samples.size() << " images to " << (out / "manifest.csv").string() << "\n";
  return 0;
}

void write_run_outputs(const fs::path& out, const History& h, const Evaluation& ev,
                       const std::vector<Sample>& test) {
  write_history_csv(h, out / "history.csv");
  write_steps_csv(h, out / "steps.csv");
  write_metrics_json(ev.report, out / "metrics.json");
  write_predictions_csv(test, ev, out / "predictions.csv");
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_for(const RunConfig& rc,
                                                              const std::vector<Sample>& data,
                                                              const fs::path& out) {
  std::mt19937_64 rng(detail::splitmix64(rc.seed ^ 0x5b1157ULL));
  const auto plan = rc.split_candidates
                        ? mmd_max_split(data, rc.split_candidates, rc.test_fraction, rng, rc.loss)
                        : patient_split(data, rc.test_fraction, rng);
  std::ofstream os(out / "split.csv");
  os << "patient_id,partition\n";
  for (const auto& id : plan.train_patients) os << id << ",train\n";
  for (const auto& id : plan.test_patients) os << id << ",test\n";
  return apply_split(data, plan);
}

template <class T>
int train_impl(const RunConfig& rc, const std::string& manifest, const fs::path& out) {
  const auto data = load_input_manifest(manifest);
  auto [train, test] = split_for(rc, data, out);
  const auto dir = fs::path(manifest).parent_path();
  write_absolute_manifest(train, dir, out / "train_manifest.csv");
  write_absolute_manifest(test, dir, out / "test_manifest.csv");
  Model<T> model(rc.model, rc.seed);
  UncertaintyState<T> state;
  const auto h = fit(model, state, train, rc.loss, rc.train);
  const auto ev = evaluate(model, test);
  model.save(out / "model.ckpt");
  save_model_config(rc.model, out / "model.ckpt");
  write_run_outputs(out, h, ev, test);
  write_config(rc, out / "config.txt");
  const auto& m = ev.report.macro_auc;
  std::cout << "test macro AUC " << (m ? detail::show(*m) : "undefined") << "\n";
  return 0;
}

template <class T>
int eval_impl(const std::string& checkpoint, const std::string& manifest, const fs::path& out) {
  if (!fs::exists(checkpoint)) throw UsageError("--checkpoint: no such file " + checkpoint);
  ModelConfig mc;
  try {
    mc = load_model_config(checkpoint);
  } catch (const Error& e) {
    throw UsageError(std::string("--checkpoint: ") + e.what());
  }
  const auto data = load_input_manifest(manifest);
  Model<T> model(mc, 0);
  try {
    model.load(checkpoint);
  } catch (const IoError& e) {
    throw UsageError(std::string("--checkpoint: ") + e.what());
  }
  const auto ev = evaluate(model, data);
  write_metrics_json(ev.report, out / "metrics.json");
  write_predictions_csv(data, ev, out / "predictions.csv");
  std::cout << to_json(ev.report).dump(2) << "\n";
  return 0;
}

template <class T>
int ablate_impl(const RunConfig& rc, const std::string& manifest, const std::vector<Variant>& variants,
                const fs::path& out) {
  const auto data = load_input_manifest(manifest);
  const auto [train, test] = split_for(rc, data, out);
  std::ofstream cmp(out / "comparison.csv");
  cmp << std::setprecision(17) << "variant,auc_ATC,auc_FTC,auc_MTC,macro_auc\n";
  for (auto v : variants) {
    const auto r = run_ablation<T>(v, train, test, rc.model, rc.loss, rc.train, rc.seed);
    const auto dir = out / std::string(to_string(v));
    fs::create_directories(dir);
    write_run_outputs(dir, r.history, r.eval, test);
    cmp << to_string(v);
    for (const auto& t : r.eval.report.tasks) cmp << "," << (t.auc ? detail::show(*t.auc) : "");
    const auto& m = r.eval.report.macro_auc;
    cmp << "," << (m ? detail::show(*m) : "") << "\n";
    std::cout << to_string(v) << " macro AUC " << (m ? detail::show(*m) : "undefined") << "\n";
  }
  return 0;
}

int cmd_export_roc(const Common& c, const std::string& predictions) {
  Predictions p;
  try {
    p = read_predictions_csv(predictions);
  } catch (const IoError& e) {
    throw UsageError(std::string("--predictions: ") + e.what());
  }
  const auto out = prepare_out(c.out);
  write_roc_csv(p, out / "roc.csv");
  std::cout << "wrote " << (out / "roc.csv").string() << "\n";
  return 0;
}

std::vector<Variant> parse_variants(const std::string& s) {
  if (s == "all") return {Variant::Full, Variant::NoAttention, Variant::NoConvBranch, Variant::NoViTBranch};
  std::vector<Variant> v;
  for (const auto& item : detail::split_list(s)) v.push_back(variant_from_string(item));
  if (v.empty()) throw ConfigError("--variants: nothing selected");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CSASN: dual-branch attention network for imbalanced nodule subtypes"};
  app.require_subcommand(1);

  Common c;
  std::optional<std::size_t> patients, centers, size, oversample_n;
  std::string probs, manifest, checkpoint, predictions, variants = "all";
  bool no_augment = false, no_filter = false;
  std::optional<double> lo, hi, lr;
  std::optional<std::size_t> epochs, batch;
  std::string variant;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-center dataset");
  add_common(synth, c);
  synth->add_option("--patients", patients, "number of patients");
  synth->add_option("--centers", centers, "number of acquisition centers");
  synth->add_option("--class-probs", probs, "Benign,ATC,FTC,MTC probabilities");
  synth->add_option("--image-size", size, "image side length");

  auto* pre = app.add_subcommand("preprocess", "band-pass filter, augment and oversample");
  add_common(pre, c);
  pre->add_option("--manifest", manifest, "input manifest")->required();
  pre->add_option("--oversample", oversample_n, "replicas per malignant sample");
  pre->add_flag("--no-augment", no_augment, "skip augmentation");
  pre->add_flag("--no-filter", no_filter, "skip the band-pass filter");
  pre->add_option("--filter-low", lo, "lower radial cutoff at the reference size");
  pre->add_option("--filter-high", hi, "upper radial cutoff at the reference size");

  auto add_train_flags = [&](CLI::App* a) {
    a->add_option("--manifest", manifest, "dataset manifest")->required();
    a->add_option("--epochs", epochs, "training epochs");
    a->add_option("--lr", lr, "initial learning rate");
    a->add_option("--batch-size", batch, "batch size");
  };
  auto* train = app.add_subcommand("train", "train on a patient-level split and evaluate");
  add_common(train, c);
  add_train_flags(train);
  train->add_option("--variant", variant, "Full, NoAttention, NoConvBranch or NoViTBranch");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval, c);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--manifest", manifest, "dataset manifest")->required();

  auto* ablate = app.add_subcommand("ablate", "train every variant on the same split");
  add_common(ablate, c);
  add_train_flags(ablate);
  ablate->add_option("--variants", variants, "'all' or a comma list of variants");

  auto* roc = app.add_subcommand("export-roc", "per-task ROC points from a predictions file");
  add_common(roc, c);
  roc->add_option("--predictions", predictions, "predictions CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto training_extra = [&] {
      std::vector<std::pair<std::string, std::string>> extra;
      if (epochs) extra.emplace_back("train.epochs", std::to_string(*epochs));
      if (lr) extra.emplace_back("train.lr0", detail::show(*lr));
      if (batch) extra.emplace_back("train.batch_size", std::to_string(*batch));
      if (!variant.empty()) extra.emplace_back("model.variant", variant);
      return extra;
    };
    if (synth->parsed()) return cmd_synth(c, patients, centers, probs, size);
    if (pre->parsed()) return cmd_preprocess(c, manifest, oversample_n, no_augment, no_filter, lo, hi);
    if (roc->parsed()) return cmd_export_roc(c, predictions);
    if (eval->parsed()) {
      const auto rc = resolve(c, {});
      const auto out = prepare_out(c.out);
      return rc.precision == Precision::F64 ? eval_impl<double>(checkpoint, manifest, out)
                                            : eval_impl<float>(checkpoint, manifest, out);
    }
    const auto rc = resolve(c, training_extra());
    const auto out = prepare_out(c.out);
    if (train->parsed())
      return rc.precision == Precision::F64 ? train_impl<double>(rc, manifest, out)
                                            : train_impl<float>(rc, manifest, out);
    const auto vs = parse_variants(variants);
    return rc.precision == Precision::F64 ? ablate_impl<double>(rc, manifest, vs, out)
                                          : ablate_impl<float>(rc, manifest, vs, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
}
