#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tensegrity/errors.hpp"
#include "tensegrity/geometry.hpp"
#include "tensegrity/graphdata.hpp"
#include "tensegrity/hgnn.hpp"
#include "tensegrity/inekf.hpp"
#include "tensegrity/pipeline.hpp"
#include "tensegrity/simkit.hpp"
#include "tensegrity/training.hpp"

namespace tensegrity::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct GlobalOptions {
  std::uint64_t seed = 0;
  fs::path out_dir = ".";
  fs::path config;
  fs::path manifest;
};

struct GenDataOptions {
  std::string primitive = "F";
  double ratio = 1.0;
  double duration = 60.0;
  double rate = 100.0;
  double noise_accel = 0.05;
  double noise_gyro = 0.005;
  double noise_tendon = 0.001;
  double contact_tolerance = 0.005;
  std::string suite = "none";
  fs::path out;
};

struct TrainOptions {
  std::vector<fs::path> data;
  std::vector<fs::path> val;
  double val_fraction = 0.2;
  int epochs = 30;
  double lr = 3e-4;
  int batch_size = 256;
  int layers = 8;
  int hidden = 128;
  int history = 100;
  int stride = 1;
  int val_stride = 1;
  bool no_symmetry = false;
  std::string group_mode = "index-only";
  bool augment_group = false;
  fs::path checkpoint;
  fs::path log;
};

struct EvalOptions {
  fs::path checkpoint;
  std::vector<fs::path> data;
  int stride = 1;
  int batch_size = 256;
  fs::path metrics;
};

struct PredictOptions {
  fs::path checkpoint;
  fs::path data;
  int batch_size = 256;
  fs::path out;
};

struct EstimateOptions {
  fs::path data;
  std::string contacts = "truth";
  fs::path ground_truth;
  fs::path out;
  double gyro_noise = 1e-4;
  double accel_noise = 1e-2;
  double slip_noise = 1e-3;
  double measurement_noise = 1e-3;
  double new_contact_variance = 1.0;
};

struct GradCheckOptions {
  std::optional<fs::path> data;
  int layers = 2;
  int hidden = 16;
  int history = 25;
  int batch = 3;
  std::size_t max_per_tensor = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  bool no_symmetry = false;
  std::string group_mode = "index-only";
};

struct Options {
  GlobalOptions global;
  GenDataOptions gen;
  TrainOptions train;
  EvalOptions eval;
  PredictOptions predict;
  EstimateOptions estimate;
  GradCheckOptions grad;
};

/// Files read and written plus extra results, recorded in the manifest.
struct RunRecord {
  json inputs = json::array();
  json outputs = json::array();
  json results = json::object();
  json timings = json::object();
};

void build_app(CLI::App& app, Options& o) {
  app.description("Contact estimation toolkit for a 3-bar tensegrity prism");
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", o.global.seed, "Seed for every random stream");
  app.add_option("--out-dir", o.global.out_dir, "Directory for outputs");
  app.add_option("--config", o.global.config, "key=value overrides or a run manifest (JSON)");
  app.add_option("--manifest", o.global.manifest, "Manifest path (default <out-dir>/<command>.manifest.json)");

  auto* gen = app.add_subcommand("gen-data", "Simulate a rolling sequence and write the dataset CSV");
  gen->add_option("--primitive", o.gen.primitive, "F, B, FL, FR, BL or BR");
  gen->add_option("--ratio", o.gen.ratio, "Turning ratio in (0, 1]");
  gen->add_option("--duration", o.gen.duration, "Seconds");
  gen->add_option("--rate", o.gen.rate, "Hz");
  gen->add_option("--noise-accel", o.gen.noise_accel, "Accelerometer noise std (m/s^2)");
  gen->add_option("--noise-gyro", o.gen.noise_gyro, "Gyroscope noise std (rad/s)");
  gen->add_option("--noise-tendon", o.gen.noise_tendon, "Tendon length noise std (m)");
  gen->add_option("--contact-tolerance", o.gen.contact_tolerance, "Endcap height below which it counts as contact");
  gen->add_option("--suite", o.gen.suite, "none, primitives (all six) or ratios (turning primitives x ratios)")
      ->check(CLI::IsMember({"none", "primitives", "ratios"}));
  gen->add_option("--out", o.gen.out, "Output CSV for a single run (default <out-dir>/<primitive>_r<ratio>.csv)");

  auto* train = app.add_subcommand("train", "Train the contact classifier");
  train->add_option("--data", o.train.data, "Labeled dataset CSVs")->required();
  train->add_option("--val", o.train.val, "Validation CSVs (default: tail split of --data)");
  train->add_option("--val-fraction", o.train.val_fraction, "Tail fraction of each sequence held out");
  train->add_option("--epochs", o.train.epochs);
  train->add_option("--lr", o.train.lr, "Adam learning rate");
  train->add_option("--batch-size", o.train.batch_size);
  train->add_option("--layers", o.train.layers, "Message-passing layers K");
  train->add_option("--hidden", o.train.hidden, "Hidden width H");
  train->add_option("--history", o.train.history, "Window length L (25, 50, 100 or 200)");
  train->add_option("--stride", o.train.stride, "Training window stride");
  train->add_option("--val-stride", o.train.val_stride, "Validation window stride");
  train->add_flag("--no-symmetry", o.train.no_symmetry, "Plain network without the group-averaged ensemble");
  train->add_option("--group-mode", o.train.group_mode, "index-only or physical")
      ->check(CLI::IsMember({"index-only", "physical"}));
  train->add_flag("--augment-group", o.train.augment_group, "Expand the training set by all six group actions");
  train->add_option("--checkpoint", o.train.checkpoint, "Output checkpoint (default <out-dir>/model.ckpt)");
  train->add_option("--log", o.train.log, "Epoch log CSV (default <out-dir>/train_log.csv)");

  auto* eval = app.add_subcommand("eval", "Accuracy and macro-F1 of a checkpoint on labeled data");
  eval->add_option("--checkpoint", o.eval.checkpoint)->required();
  eval->add_option("--data", o.eval.data)->required();
  eval->add_option("--stride", o.eval.stride);
  eval->add_option("--batch-size", o.eval.batch_size);
  eval->add_option("--metrics", o.eval.metrics, "Metrics CSV (default <out-dir>/metrics.csv)");

  auto* predict = app.add_subcommand("predict", "Per-timestep contact predictions");
  predict->add_option("--checkpoint", o.predict.checkpoint)->required();
  predict->add_option("--data", o.predict.data)->required();
  predict->add_option("--batch-size", o.predict.batch_size);
  predict->add_option("--out", o.predict.out, "Prediction CSV (default <out-dir>/predictions.csv)");

  auto* est = app.add_subcommand("estimate", "Contact-aided invariant EKF over a dataset");
  est->add_option("--data", o.estimate.data)->required();
  est->add_option("--contacts", o.estimate.contacts, "truth, none, or a prediction CSV");
  est->add_option("--ground-truth", o.estimate.ground_truth, "Trajectory CSV for the initial state and drift");
  est->add_option("--out", o.estimate.out, "Trajectory CSV (default <out-dir>/trajectory.csv)");
  est->add_option("--gyro-noise", o.estimate.gyro_noise);
  est->add_option("--accel-noise", o.estimate.accel_noise);
  est->add_option("--slip-noise", o.estimate.slip_noise);
  est->add_option("--measurement-noise", o.estimate.measurement_noise);
  est->add_option("--new-contact-variance", o.estimate.new_contact_variance);

  app.add_subcommand("group-check", "Print the symmetry group table and verify its axioms");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the training loss gradient");
  grad->add_option("--data", o.grad.data, "Dataset CSV for the mini-batch (default: simulated)");
  grad->add_option("--layers", o.grad.layers);
  grad->add_option("--hidden", o.grad.hidden);
  grad->add_option("--history", o.grad.history);
  grad->add_option("--batch", o.grad.batch);
  grad->add_option("--max-per-tensor", o.grad.max_per_tensor, "Coordinates sampled per tensor (0 = all)");
  grad->add_option("--step", o.grad.step, "Central-difference step");
  grad->add_option("--tolerance", o.grad.tolerance);
  grad->add_flag("--no-symmetry", o.grad.no_symmetry);
  grad->add_option("--group-mode", o.grad.group_mode)->check(CLI::IsMember({"index-only", "physical"}));
}

bool is_flag(const CLI::Option* opt) { return opt->get_items_expected_max() == 0; }
bool is_multi(const CLI::Option* opt) { return opt->get_items_expected_max() > 1; }
bool skipped(const std::string& name) { return name == "help" || name == "config" || name == "manifest"; }

json resolved_config(const CLI::App& app, const CLI::App& sub) {
  json cfg = json::object();
  for (const CLI::App* a : {&app, &sub}) {
    for (const CLI::Option* opt : a->get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || skipped(name)) continue;
      if (is_flag(opt)) {
        cfg[name] = opt->count() > 0;
      } else if (is_multi(opt)) {
        cfg[name] = opt->count() > 0 ? json(opt->results()) : json::array();
      } else if (opt->count() > 0) {
        cfg[name] = opt->results().back();
      } else {
        cfg[name] = opt->get_default_str();
      }
    }
  }
  return cfg;
}

std::vector<std::string> with_overrides(std::vector<std::string> args, const CLI::App& app, const CLI::App& sub,
                                        const std::map<std::string, std::string>& overrides) {
  for (const auto& [key, value] : overrides) {
    if (skipped(key)) continue;
    const CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigInvalid("unknown config key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    if (is_flag(opt)) {
      if (value == "true" || value == "1") args.push_back("--" + key);
      else if (value != "false" && value != "0") throw ConfigInvalid("flag '" + key + "' needs true or false");
      continue;
    }
    std::istringstream items(value);
    std::vector<std::string> parts;
    for (std::string item; items >> item;) parts.push_back(item);
    if (parts.empty()) continue;
    if (!is_multi(opt)) parts = {value};
    args.push_back("--" + key);
    args.insert(args.end(), parts.begin(), parts.end());
  }
  return args;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

fs::path or_default(const fs::path& given, const fs::path& dir, const char* name) {
  return given.empty() ? dir / name : given;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path truth_path_for(const fs::path& dataset) {
  return dataset.parent_path() / (dataset.stem().string() + ".truth.csv");
}

std::vector<SensorSequence> read_labeled(const std::vector<fs::path>& paths, RunRecord& rec) {
  std::vector<SensorSequence> out;
  for (const auto& p : paths) {
    out.push_back(read_dataset(p));
    if (!out.back().labeled()) throw FormatError(p.string() + ": contact columns are required here");
    rec.inputs.push_back(p.string());
  }
  return out;
}

int cmd_gen_data(const Options& o, RunRecord& rec, std::ostream& out, std::ostream& err) {
  SimConfig base;
  base.primitive = parse_primitive(o.gen.primitive);
  base.turning_ratio = o.gen.ratio;
  base.duration = o.gen.duration;
  base.sample_rate = o.gen.rate;
  base.noise = {o.gen.noise_accel, o.gen.noise_gyro, o.gen.noise_tendon};
  base.contact_height_tolerance = o.gen.contact_tolerance;
  base.seed = o.global.seed;
  base.validate();

  std::vector<SimConfig> runs;
  if (o.gen.suite == "primitives") runs = primitive_suite(base);
  else if (o.gen.suite == "ratios") runs = ratio_suite(base);
  else runs = {base};
  if (o.gen.suite != "none" && !o.gen.out.empty()) throw ConfigInvalid("--out applies to single runs; suites use --out-dir");

  for (const auto& cfg : runs) {
    const SimResult r = simulate(cfg);
    const fs::path path = runs.size() == 1 && !o.gen.out.empty() ? o.gen.out : o.global.out_dir / suite_file_name(cfg);
    ensure_parent(path);
    write_dataset(path, r.sequence);
    write_trajectory(truth_path_for(path), r.truth);
    rec.outputs.push_back(path.string());
    rec.outputs.push_back(truth_path_for(path).string());
    out << "wrote " << path.string() << " (" << r.sequence.size() << " rows)\n";
    const int default_history = TrainConfig{}.history;
    if (r.sequence.size() < static_cast<std::size_t>(default_history)) {
      err << "warning: " << r.sequence.size() << " rows is shorter than the default window length "
          << default_history << "; windowing will fail with SequenceTooShort\n";
    }
  }
  return 0;
}

int cmd_train(const Options& o, RunRecord& rec, std::ostream& out, std::ostream&) {
  TrainConfig cfg;
  cfg.learning_rate = o.train.lr;
  cfg.batch_size = o.train.batch_size;
  cfg.epochs = o.train.epochs;
  cfg.layers = o.train.layers;
  cfg.hidden = o.train.hidden;
  cfg.history = o.train.history;
  cfg.stride = o.train.stride;
  cfg.seed = o.global.seed;
  cfg.symmetry_enabled = !o.train.no_symmetry;
  cfg.group_mode = parse_group_mode(o.train.group_mode);
  cfg.augment_group = o.train.augment_group;
  cfg.validate();

  const auto data = read_labeled(o.train.data, rec);
  WindowDataset train_set, val_set;
  if (!o.train.val.empty()) {
    train_set = make_dataset(data, cfg.history, cfg.stride);
    val_set = make_dataset(read_labeled(o.train.val, rec), cfg.history, o.train.val_stride);
  } else {
    auto split = chronological_split(data, o.train.val_fraction, cfg.history, cfg.stride, o.train.val_stride);
    train_set = std::move(split.train);
    val_set = std::move(split.validation);
  }
  out << "train windows " << train_set.size() << ", validation windows " << val_set.size() << "\n";

  const fs::path log_path = or_default(o.train.log, o.global.out_dir, "train_log.csv");
  const fs::path ckpt_path = or_default(o.train.checkpoint, o.global.out_dir, "model.ckpt");
  ensure_parent(log_path);
  ensure_parent(ckpt_path);
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot open '" + log_path.string() + "' for writing");
  log << "epoch,train_loss,val_accuracy,val_macro_f1,seconds\n";

  json epoch_seconds = json::array();
  const TrainResult result = train(train_set, val_set, cfg, [&](const EpochRecord& r) {
    log << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_accuracy) << ','
        << format_double(r.val_macro_f1) << ',' << fixed(r.seconds, 3) << '\n';
    log.flush();
    out << "epoch " << r.epoch << " loss " << fixed(r.train_loss) << " val_acc " << fixed(r.val_accuracy)
        << " val_f1 " << fixed(r.val_macro_f1) << " (" << fixed(r.seconds, 1) << " s)\n";
    out.flush();
    epoch_seconds.push_back(r.seconds);
    return true;
  });
  if (!log) throw IoError("failed writing '" + log_path.string() + "'");
  save_checkpoint(result.params, cfg, ckpt_path);
  out << "best epoch " << result.best_epoch << ", checkpoint " << ckpt_path.string() << "\n";
  rec.outputs.push_back(ckpt_path.string());
  rec.outputs.push_back(log_path.string());
  rec.results["best_epoch"] = result.best_epoch;
  rec.timings["epoch_seconds"] = epoch_seconds;
  return 0;
}

void write_metrics(const fs::path& path, const Metrics& m) {
  ensure_parent(path);
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "scope,tp,fp,fn,tn,precision,recall,f1,accuracy\n";
  EndcapCounts total;
  double p = 0, r = 0;
  for (int e = 0; e < kNumEndcaps; ++e) {
    const auto& c = m.confusion[e];
    os << "endcap" << e << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn << ',' << format_double(m.precision[e])
       << ',' << format_double(m.recall[e]) << ',' << format_double(m.f1[e]) << ",\n";
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    total.tn += c.tn;
    p += m.precision[e];
    r += m.recall[e];
  }
  os << "macro," << total.tp << ',' << total.fp << ',' << total.fn << ',' << total.tn << ','
     << format_double(p / kNumEndcaps) << ',' << format_double(r / kNumEndcaps) << ',' << format_double(m.macro_f1) << ','
     << format_double(m.exact_match_accuracy) << '\n';
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

int cmd_eval(const Options& o, RunRecord& rec, std::ostream& out, std::ostream&) {
  const auto ck = load_checkpoint<float>(o.eval.checkpoint);
  rec.inputs.push_back(o.eval.checkpoint.string());
  const auto data = read_labeled(o.eval.data, rec);
  const WindowDataset ds = make_dataset(data, ck.params.hyper.history, o.eval.stride);
  const Metrics m = evaluate(ck.params, ds, ck.config.symmetry_enabled, ck.config.group_mode, o.eval.batch_size);
  const fs::path path = or_default(o.eval.metrics, o.global.out_dir, "metrics.csv");
  write_metrics(path, m);
  rec.outputs.push_back(path.string());
  rec.results["accuracy"] = m.exact_match_accuracy;
  rec.results["macro_f1"] = m.macro_f1;
  out << "windows " << m.windows << "\naccuracy " << fixed(m.exact_match_accuracy) << "\nmacro_f1 "
      << fixed(m.macro_f1) << "\n";
  return 0;
}

int cmd_predict(const Options& o, RunRecord& rec, std::ostream& out, std::ostream&) {
  const auto ck = load_checkpoint<float>(o.predict.checkpoint);
  const SensorSequence seq = read_dataset(o.predict.data);
  rec.inputs.push_back(o.predict.checkpoint.string());
  rec.inputs.push_back(o.predict.data.string());
  const ContactStream stream = predict_stream(ck.params, ck.config, seq, o.predict.batch_size);
  const fs::path path = or_default(o.predict.out, o.global.out_dir, "predictions.csv");
  ensure_parent(path);
  write_contact_stream(path, stream);
  rec.outputs.push_back(path.string());
  out << "wrote " << path.string() << " (" << stream.contacts.size() << " rows, "
      << ck.params.hyper.history - 1 << " warmup)\n";
  return 0;
}

int cmd_estimate(const Options& o, RunRecord& rec, std::ostream& out, std::ostream&) {
  const TensegrityTopology topology = build_canonical_topology();
  const SensorSequence seq = read_dataset(o.estimate.data);
  rec.inputs.push_back(o.estimate.data.string());

  std::vector<ContactVector> contacts;
  if (o.estimate.contacts == "truth") {
    if (!seq.labeled()) throw FormatError(o.estimate.data.string() + ": no contact columns for --contacts truth");
    contacts = *seq.contacts;
  } else if (o.estimate.contacts == "none") {
    contacts.assign(seq.size(), ContactVector{});
  } else {
    contacts = read_contact_stream(o.estimate.contacts).contacts;
    rec.inputs.push_back(o.estimate.contacts);
  }

  EstimatorOptions options;
  options.noise = {o.estimate.gyro_noise, o.estimate.accel_noise, o.estimate.slip_noise, o.estimate.measurement_noise,
                   o.estimate.new_contact_variance};
  std::optional<GroundTruth> truth;
  if (!o.estimate.ground_truth.empty()) {
    truth = read_trajectory(o.estimate.ground_truth);
    rec.inputs.push_back(o.estimate.ground_truth.string());
    options.initial = state_from_truth(*truth);
  }
  const GroundTruth traj = run_estimator(seq, contacts, topology, options);
  const fs::path path = or_default(o.estimate.out, o.global.out_dir, "trajectory.csv");
  ensure_parent(path);
  write_trajectory(path, traj);
  rec.outputs.push_back(path.string());
  out << "wrote " << path.string() << " (" << traj.size() << " rows)\n";
  if (truth) {
    const double drift = drift_percent(traj, *truth);
    rec.results["drift_percent"] = drift;
    out << "drift_percent " << fixed(drift) << "\n";
  }
  return 0;
}

std::string join(const auto& values) {
  std::string s;
  for (const auto& v : values) s += (s.empty() ? "" : " ") + std::to_string(v);
  return s;
}

int cmd_group_check(const Options& o, RunRecord& rec, std::ostream& out, std::ostream& err) {
  const TensegrityTopology topology = build_canonical_topology();
  const D3Group group = build_d3_group(topology);
  const auto table = composition_table(group);
  std::ostringstream os;
  os << "composition (row . column)\n     ";
  for (const auto& g : group.elements()) os << std::setw(5) << to_string(g.label);
  os << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    os << std::setw(5) << to_string(group[i].label);
    for (int j : table[i]) os << std::setw(5) << to_string(group[j].label);
    os << '\n';
  }
  os << "\npermutations\n";
  for (const auto& g : group.elements()) {
    os << to_string(g.label) << ": endcaps [" << join(g.endcap_perm) << "] rods [" << join(g.rod_perm) << "] tendons ["
       << join(g.tendon_perm) << "] reverses_rods " << (g.reverses_rods ? "yes" : "no") << '\n';
  }
  const auto failures = check_group_axioms(group, topology);
  for (const auto& f : failures) os << "FAIL " << f << '\n';
  os << (failures.empty() ? "all axioms hold\n" : "axiom check failed\n");

  const fs::path path = o.global.out_dir / "group_check.txt";
  ensure_parent(path);
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  file << os.str();
  rec.outputs.push_back(path.string());
  out << os.str();
  if (!failures.empty()) {
    err << "error: ClosureViolation: " << failures.front() << '\n';
    return static_cast<int>(ErrorKind::closure_violation);
  }
  return 0;
}

int cmd_grad_check(const Options& o, RunRecord& rec, std::ostream& out, std::ostream&) {
  const auto& g = o.grad;
  if (g.batch < 1) throw ConfigInvalid("--batch must be positive");
  const HgnnHyper hyper{g.layers, g.hidden, g.history};
  const auto params = ModelParams<double>::initialize(hyper, split_seed(o.global.seed, 1));

  SensorSequence seq;
  if (g.data) {
    seq = read_dataset(*g.data);
    rec.inputs.push_back(g.data->string());
  } else {
    SimConfig sim;
    sim.duration = 10.0;
    sim.seed = split_seed(o.global.seed, 3);
    seq = simulate(sim).sequence;
  }
  if (seq.size() < static_cast<std::size_t>(g.history)) {
    throw SequenceTooShort("sequence has " + std::to_string(seq.size()) + " rows, window length is " +
                           std::to_string(g.history));
  }
  std::mt19937_64 rng(split_seed(o.global.seed, 4));
  std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(g.history - 1), seq.size() - 1);
  std::vector<WindowSample> samples;
  for (int i = 0; i < g.batch; ++i) {
    WindowSample s = normalize_window(extract_window(seq, pick(rng), g.history));
    if (!s.labeled) {
      for (auto& c : s.label) c = static_cast<std::uint8_t>(rng() & 1U);
      s.labeled = true;
    }
    samples.push_back(std::move(s));
  }

  const auto topology = build_canonical_topology();
  const auto graph = assemble_graph(topology);
  const auto group = build_d3_group(topology);
  const GroupActionMode mode = parse_group_mode(g.group_mode);
  const bool sym = !g.no_symmetry;
  auto loss_fn = [&]() { return batch_loss<double>(samples, graph, params, group.elements(), sym, mode); };
  const auto report =
      autodiff::finite_difference_check(loss_fn, params.parameters(), g.step, g.max_per_tensor, split_seed(o.global.seed, 5));

  const auto names = params.named_parameters();
  json j;
  j["max_relative_error"] = report.max_relative_error;
  j["coordinates_checked"] = report.coordinates_checked;
  j["step_reductions"] = report.step_reductions;
  j["kinks_skipped"] = report.kinks_skipped;
  j["worst_parameter"] = names.at(report.worst_tensor).first;
  j["worst_index"] = report.worst_index;
  j["worst_analytic"] = report.worst_analytic;
  j["worst_numeric"] = report.worst_numeric;
  j["tolerance"] = g.tolerance;
  j["passed"] = report.max_relative_error < g.tolerance;
  const fs::path path = o.global.out_dir / "grad_check.json";
  ensure_parent(path);
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  file << j.dump(2) << '\n';
  rec.outputs.push_back(path.string());
  rec.results["max_relative_error"] = report.max_relative_error;

  out << "checked " << report.coordinates_checked << " coordinates, max relative error "
      << format_double(report.max_relative_error) << " (" << names.at(report.worst_tensor).first << "["
      << report.worst_index << "]), " << report.kinks_skipped << " skipped at relu kinks\n";
  out << (report.max_relative_error < g.tolerance ? "gradient check passed\n" : "gradient check FAILED\n");
  return report.max_relative_error < g.tolerance ? 0 : 1;
}

void write_manifest(const Options& o, const CLI::App& app, const CLI::App& sub, const RunRecord& rec) {
  json m;
  m["subcommand"] = sub.get_name();
  m["version"] = kToolkitVersion;
  m["seed"] = o.global.seed;
  m["config"] = resolved_config(app, sub);
  m["inputs"] = rec.inputs;
  m["outputs"] = rec.outputs;
  m["results"] = rec.results;
  m["timings"] = rec.timings;
  const fs::path path =
      o.global.manifest.empty() ? o.global.out_dir / (sub.get_name() + ".manifest.json") : o.global.manifest;
  ensure_parent(path);
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << m.dump(2) << '\n';
}

int parse(CLI::App& app, const std::vector<std::string>& args) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  app.parse(reversed);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  auto app = std::make_unique<CLI::App>("tensegrity", "tensegrity");
  build_app(*app, o);
  try {
    // Required options may come from the config file, so the first pass
    // only enforces them when there is none.
    const bool has_config = std::any_of(args.begin(), args.end(), [](const std::string& a) {
      return a == "--config" || a.rfind("--config=", 0) == 0;
    });
    if (has_config) {
      for (CLI::App* sub : app->get_subcommands({})) {
        for (CLI::Option* opt : sub->get_options()) opt->required(false);
      }
    }
    parse(*app, args);
    const CLI::App* sub = app->get_subcommands().front();
    if (!o.global.config.empty()) {
      const auto overrides = read_overrides(o.global.config);
      const auto extended = with_overrides(args, *app, *sub, overrides);
      o = Options{};
      app = std::make_unique<CLI::App>("tensegrity", "tensegrity");
      build_app(*app, o);
      parse(*app, extended);
      sub = app->get_subcommands().front();
    }
    fs::create_directories(o.global.out_dir);

    const auto started = Clock::now();
    RunRecord rec;
    const std::string name = sub->get_name();
    int code = 0;
    if (name == "gen-data") code = cmd_gen_data(o, rec, out, err);
    else if (name == "train") code = cmd_train(o, rec, out, err);
    else if (name == "eval") code = cmd_eval(o, rec, out, err);
    else if (name == "predict") code = cmd_predict(o, rec, out, err);
    else if (name == "estimate") code = cmd_estimate(o, rec, out, err);
    else if (name == "group-check") code = cmd_group_check(o, rec, out, err);
    else if (name == "grad-check") code = cmd_grad_check(o, rec, out, err);
    rec.timings["total_seconds"] = std::chrono::duration<double>(Clock::now() - started).count();
    write_manifest(o, *app, *sub, rec);
    return code;
  } catch (const CLI::ParseError& e) {
    return app->exit(e, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::io_error);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace tensegrity::cli
