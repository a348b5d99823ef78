// Command-line front end: ingest, synth, train, detect, eval, export-latent.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gtrans/config.hpp"
#include "gtrans/data.hpp"
#include "gtrans/detector.hpp"
#include "gtrans/errors.hpp"
#include "gtrans/metrics.hpp"
#include "gtrans/models.hpp"
#include "gtrans/training.hpp"

namespace fs = std::filesystem;
using namespace gtrans;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

// Flag values are collected as strings and layered over the config file, so
// the effective configuration is one KeyValues set regardless of source.
struct Overrides {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }

  void apply(KeyValues& kv) const {
    for (const auto& [key, option] : options) {
      if (option->count() > 0) kv.set(key, values.at(key));
    }
  }
};

fs::path output_dir(const KeyValues& kv) {
  if (kv.contains("output_dir")) return kv.get_string("output_dir", ".");
  if (const char* env = std::getenv("GTRANS_OUTPUT_DIR"); env && *env) return env;
  return ".";
}

fs::path resolve_output(const std::string& explicit_path, const KeyValues& kv, const std::string& default_name) {
  if (!explicit_path.empty()) return explicit_path;
  return output_dir(kv) / default_name;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

fs::path sidecar(const fs::path& path, const std::string& suffix) { return fs::path(path.string() + suffix); }

KeyValues load_config(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw ValidationError("config file " + path + " does not exist");
  return KeyValues::load(path);
}

void require_input(const std::string& what, const std::string& path) {
  if (path.empty()) throw ValidationError("missing " + what);
  if (!fs::exists(path)) throw DataError(what + " " + path + " does not exist");
}

ModelConfig model_config(const KeyValues& kv, const FrameSeries& data) {
  auto config = ModelConfig::from_key_values(kv);
  config.nodes = data.nodes();
  config.features = data.features();
  config.validate();
  return config;
}

double split_fraction(const KeyValues& kv) {
  const double f = kv.get_double("split", 0.8);
  if (!(f > 0.0 && f < 1.0)) throw ValidationError("split must lie in (0, 1)");
  return f;
}

std::string dataset_name(const KeyValues& kv, const std::string& data_path) {
  return kv.get_string("dataset_name", fs::path(data_path).stem().string());
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  Overrides overrides;
};

int run_synth(SynthArgs& args) {
  KeyValues kv = load_config(args.config);
  args.overrides.apply(kv);
  SynthOptions options;
  options.preset = kv.get_string("preset", options.preset);
  options.frames = kv.get_uint("frames", options.frames);
  if (kv.contains("rate")) options.rate = kv.get_double("rate", 0.0);
  options.seed = kv.get_uint("seed", options.seed);
  preset_default_rate(options.preset);
  const auto series = synthesize(options);

  const auto out = resolve_output(args.out, kv, options.preset + ".gtd");
  kv.set("preset", options.preset);
  kv.set("frames", std::to_string(options.frames));
  kv.set("rate", format_double(options.rate.value_or(preset_default_rate(options.preset))));
  kv.set("seed", std::to_string(options.seed));
  ensure_parent(out);
  save_dataset(out.string(), series);
  write_text(sidecar(out, ".cfg"), kv.serialize());
  std::cout << "wrote " << out.string() << ": " << series.frame_count() << " frames, " << series.nodes()
            << " nodes, " << series.features() << " features, positive rate "
            << format_double(series.positive_rate()) << "\n";
  return kExitOk;
}

struct IngestArgs {
  std::string events, spec, graph, out;
  bool grid = false;
};

int run_ingest(const IngestArgs& args) {
  require_input("event file", args.events);
  require_input("ingest spec", args.spec);
  const KeyValues kv = KeyValues::load(args.spec);
  const auto spec = IngestSpec::from_key_values(kv);
  GraphSpec graph;
  if (args.grid) {
    if (!spec.grid) throw ValidationError("--grid needs grid_rows/grid_cols and grid bounds in the spec");
    graph = build_grid_graph(*spec.grid);
  } else {
    if (spec.grid) throw ValidationError("spec describes a grid; pass --grid instead of --graph");
    require_input("edge list", args.graph);
    graph = build_area_graph(load_edge_list(args.graph));
  }
  std::ifstream csv(args.events);
  if (!csv) throw DataError("cannot open " + args.events);
  const auto result = ingest_events(csv, spec, graph);

  const auto out = resolve_output(args.out, kv, fs::path(args.events).stem().string() + ".gtd");
  KeyValues effective = kv;
  effective.set("events", args.events);
  effective.set("graph", args.grid ? std::string("grid") : args.graph);
  ensure_parent(out);
  save_dataset(out.string(), result.series);
  write_text(sidecar(out, ".cfg"), effective.serialize());
  std::cout << "wrote " << out.string() << ": " << result.series.frame_count() << " frames from "
            << result.rows_read << " rows; skipped " << result.skipped_unparseable << " unparseable, "
            << result.skipped_outside << " outside the graph\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, model_out, report;
  Overrides overrides;
};

int run_train(TrainArgs& args) {
  KeyValues kv = load_config(args.config);
  args.overrides.apply(kv);
  if (args.data.empty()) args.data = kv.get_string("data", "");
  require_input("dataset", args.data);
  const auto series = load_dataset(args.data);
  auto config = model_config(kv, series);
  const auto parts = split(series, split_fraction(kv));
  make_windows(parts.train, config.window);

  const auto model_path =
      resolve_output(args.model_out, kv, to_string(config.kind) + "-seed" + std::to_string(config.seed) + ".ckpt");
  const auto report_path = args.report.empty() ? sidecar(model_path, ".train.csv") : fs::path(args.report);

  auto model = make_forecaster<float>(config);
  const auto report = train(*model, parts.train, series.graph);

  KeyValues effective = kv;
  effective.merge(config.to_key_values());
  effective.set("data", args.data);
  effective.set("split", format_double(split_fraction(kv)));
  ensure_parent(model_path);
  save_checkpoint(model_path.string(), *model);
  std::ostringstream report_text;
  write_train_report(report_text, report);
  write_text(report_path, report_text.str());
  write_text(sidecar(model_path, ".cfg"), effective.serialize());
  const auto& last = report.epochs.empty() ? EpochRecord{} : report.epochs.back();
  std::cout << "trained " << to_string(config.kind) << " for " << report.epochs.size() << " epochs; final loss "
            << format_double(last.loss) << "; wrote " << model_path.string() << "\n";
  return kExitOk;
}

struct DetectArgs {
  std::string config, model, data, report, artifacts;
  Overrides overrides;
};

int run_detect(DetectArgs& args) {
  KeyValues kv = load_config(args.config);
  args.overrides.apply(kv);
  if (args.data.empty()) args.data = kv.get_string("data", "");
  require_input("checkpoint", args.model);
  require_input("dataset", args.data);
  DetectorOptions options;
  options.method = parse_threshold_method(kv.get_string("threshold_method", "quantile"));
  options.extreme_rate = kv.get_double("extreme_rate", -1.0);
  options.threshold_scale = kv.get_double("threshold_scale", 1.0);
  if (kv.contains("extreme_rate") && !(options.extreme_rate > 0.0 && options.extreme_rate < 1.0)) {
    throw ValidationError("extreme_rate must lie in (0, 1)");
  }
  const auto model = load_checkpoint(args.model);
  const auto series = load_dataset(args.data);
  if (series.nodes() != model->config().nodes || series.features() != model->config().features) {
    throw DataError("dataset shape does not match the checkpoint");
  }
  const auto parts = split(series, split_fraction(kv));
  make_windows(parts.test, model->config().window);
  const auto report_path = resolve_output(args.report, kv, fs::path(args.model).stem().string() + ".report.csv");
  const auto artifacts_path = args.artifacts.empty() ? sidecar(report_path, ".artifacts") : fs::path(args.artifacts);

  const auto artifacts = fit_detector(*model, parts.train, series.graph, options);
  const auto predicted = predict(*model, artifacts, parts.test, series.graph);
  const auto truth = nowcast_labels(parts.test, model->config().window);
  const ReportRow row{dataset_name(kv, args.data), to_string(model->kind()), confusion(predicted, truth)};

  KeyValues effective = kv;
  effective.merge(model->config().to_key_values());
  effective.set("data", args.data);
  effective.set("checkpoint", args.model);
  effective.set("threshold_method", to_string(artifacts.method));
  effective.set("extreme_rate", format_double(artifacts.extreme_rate));
  effective.set("threshold_scale", format_double(artifacts.threshold_scale));
  effective.set("epsilon", format_double(artifacts.epsilon));
  const std::string table = format_report({row});
  write_text(report_path, table);
  ensure_parent(artifacts_path);
  save_artifacts(artifacts_path.string(), artifacts);
  write_text(sidecar(report_path, ".cfg"), effective.serialize());
  std::cout << table;
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> reports;
  std::string out;
};

int run_eval(const EvalArgs& args) {
  std::vector<std::vector<ReportRow>> all;
  for (const auto& path : args.reports) {
    require_input("report", path);
    all.push_back(load_report(path));
  }
  const auto merged = merge_reports(all);
  if (merged.empty()) throw DataError("reports contain no rows");
  const std::string table = format_report(merged);
  if (!args.out.empty()) write_text(args.out, table);
  std::cout << table;
  return kExitOk;
}

struct ExportArgs {
  std::string model, data, out;
};

int run_export(const ExportArgs& args) {
  require_input("checkpoint", args.model);
  require_input("dataset", args.data);
  const auto model = load_checkpoint(args.model);
  const auto series = load_dataset(args.data);
  if (series.nodes() != model->config().nodes || series.features() != model->config().features) {
    throw DataError("dataset shape does not match the checkpoint");
  }
  make_windows(series, model->config().window);
  const auto out = resolve_output(args.out, {}, fs::path(args.model).stem().string() + ".latent.csv");
  std::ostringstream text;
  const auto rows = export_latent(text, *model, series, series.graph);
  write_text(out, text.str());
  std::cout << "wrote " << rows << " latent rows to " << out.string() << "\n";
  return kExitOk;
}

void add_model_overrides(CLI::App* app, Overrides& o) {
  o.add(app, "--model", "model", "gtrans, mlp-ae, lstm-ae or gcn-lstm");
  o.add(app, "--window", "window", "look-back window T");
  o.add(app, "--embed-dim", "embed_dim", "node embedding width D");
  o.add(app, "--heads", "heads", "attention heads");
  o.add(app, "--encoder-blocks", "encoder_blocks", "transformer encoder blocks");
  o.add(app, "--decoder-blocks", "decoder_blocks", "transformer decoder blocks");
  o.add(app, "--gamma", "gamma", "smoothing/sharpening mix in [0, 1]");
  o.add(app, "--lambda", "lambda", "reconstruction weight of the loss");
  o.add(app, "--dropout", "dropout", "dropout rate during training");
  o.add(app, "--learning-rate", "learning_rate", "initial ADAM learning rate");
  o.add(app, "--epochs", "epochs", "training epochs");
  o.add(app, "--batch-size", "batch_size", "windows per mini-batch");
  o.add(app, "--seed", "seed", "run seed");
  o.add(app, "--split", "split", "chronological train fraction");
  o.add(app, "--output-dir", "output_dir", "directory for default output names");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-embedding transformer autoencoder for spatiotemporal extreme-event nowcasting"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset");
  synth_cmd->add_option("--config", synth.config, "key = value config file");
  synth.overrides.add(synth_cmd, "--preset", "preset", "grid16 or area45");
  synth.overrides.add(synth_cmd, "--frames", "frames", "number of frames");
  synth.overrides.add(synth_cmd, "--rate", "rate", "fraction of spike frames");
  synth.overrides.add(synth_cmd, "--seed", "seed", "generator seed");
  synth.overrides.add(synth_cmd, "--output-dir", "output_dir", "directory for the default output name");
  synth_cmd->add_option("--out", synth.out, "dataset path");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "bucket a CSV of events into a dataset");
  ingest_cmd->add_option("--events", ingest.events, "event CSV with a header row")->required();
  ingest_cmd->add_option("--spec", ingest.spec, "ingest spec (key = value)")->required();
  auto* graph_opt = ingest_cmd->add_option("--graph", ingest.graph, "edge list of area ids");
  auto* grid_flag = ingest_cmd->add_flag("--grid", ingest.grid, "use the grid described in the ingest spec");
  graph_opt->excludes(grid_flag);
  ingest_cmd->add_option("--out", ingest.out, "dataset path");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model on the training split");
  train_cmd->add_option("--config", train_args.config, "run config (key = value)");
  train_cmd->add_option("--data", train_args.data, "dataset path");
  train_cmd->add_option("--model-out", train_args.model_out, "checkpoint path");
  train_cmd->add_option("--report", train_args.report, "training report path (default <checkpoint>.train.csv)");
  add_model_overrides(train_cmd, train_args.overrides);

  DetectArgs detect;
  auto* detect_cmd = app.add_subcommand("detect", "fit the threshold on the train split and score the test split");
  detect_cmd->add_option("--config", detect.config, "run config (key = value)");
  detect_cmd->add_option("--model", detect.model, "checkpoint path")->required();
  detect_cmd->add_option("--data", detect.data, "dataset path");
  detect_cmd->add_option("--report", detect.report, "report path");
  detect_cmd->add_option("--artifacts", detect.artifacts, "detector artifacts path (default <report>.artifacts)");
  detect.overrides.add(detect_cmd, "--threshold-method", "threshold_method", "quantile or scaled-mean");
  detect.overrides.add(detect_cmd, "--extreme-rate", "extreme_rate", "quantile rate (default: train label rate)");
  detect.overrides.add(detect_cmd, "--threshold-scale", "threshold_scale", "scaled-mean factor");
  detect.overrides.add(detect_cmd, "--split", "split", "chronological train fraction");
  detect.overrides.add(detect_cmd, "--dataset-name", "dataset_name", "Dataset column of the report");
  detect.overrides.add(detect_cmd, "--output-dir", "output_dir", "directory for default output names");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "merge report files into one table");
  eval_cmd->add_option("--reports", eval.reports, "report files")->required();
  eval_cmd->add_option("--out", eval.out, "merged report path");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-latent", "write latent vectors with labels as CSV");
  export_cmd->add_option("--model", exp.model, "checkpoint path")->required();
  export_cmd->add_option("--data", exp.data, "dataset path")->required();
  export_cmd->add_option("--out", exp.out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (ingest_cmd->parsed()) return run_ingest(ingest);
    if (train_cmd->parsed()) return run_train(train_args);
    if (detect_cmd->parsed()) return run_detect(detect);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (export_cmd->parsed()) return run_export(exp);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitTraining;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitTraining;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitValidation;
}
