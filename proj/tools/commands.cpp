#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "d2c/binio.hpp"
#include "d2c/evaluator.hpp"
#include "run_config.hpp"

namespace d2c::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const fs::path& p) {
  const auto bytes = read_file(p);
  return {bytes.begin(), bytes.end()};
}

void write_text(const fs::path& p, const std::string& s) {
  write_file(p, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

json file_entry(const fs::path& p) {
  const auto bytes = read_file(p);
  return {{"path", p.string()}, {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}};
}

// One stage invocation: resolves inputs, records everything it read and
// wrote, and leaves config.json and manifest.json in the output directory.
class Run {
 public:
  Run(std::string command, const StageOptions& opts, json cfg) : command_(std::move(command)), opts_(opts), cfg_(std::move(cfg)) {
    fs::create_directories(opts_.out);
    write_text(opts_.out / "config.json", cfg_.dump(2) + "\n");
  }

  const json& cfg() const { return cfg_; }
  fs::path out(const std::string& name) {
    outputs_.push_back(opts_.out / name);
    return outputs_.back();
  }

  std::optional<fs::path> find(const std::string& name) {
    for (const auto& dir : opts_.inputs) {
      const fs::path p = dir / name;
      if (fs::exists(p)) {
        inputs_.push_back(file_entry(p));
        return p;
      }
    }
    return std::nullopt;
  }

  fs::path need(const std::string& name) {
    if (auto p = find(name)) return *p;
    std::string dirs;
    for (const auto& d : opts_.inputs) dirs += (dirs.empty() ? "" : ", ") + d.string();
    throw MissingArtifact(name + " not found in input directories [" + dirs + "]");
  }

  void warn(const std::string& w) {
    warnings_.push_back(w);
    std::cerr << json{{"warning", w}}.dump() << "\n";
  }

  void say(const std::string& s) const {
    if (!opts_.quiet) std::cout << s << "\n";
  }

  void finish() {
    json outs = json::array();
    for (const auto& p : outputs_) {
      if (fs::exists(p)) outs.push_back(file_entry(p));
    }
    const json manifest = {{"command", command_}, {"inputs", inputs_}, {"outputs", outs}, {"warnings", warnings_}};
    write_text(opts_.out / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::string command_;
  const StageOptions& opts_;
  json cfg_;
  json inputs_ = json::array();
  std::vector<fs::path> outputs_;
  std::vector<std::string> warnings_;
};

void cmd_gen_data(Run& run) {
  const DatasetSplit split = split_by_parity(generate_data(run.cfg()));
  write_dataset(run.out("train.d2cd"), split.train);
  write_dataset(run.out("heldout.d2cd"), split.heldout);
  run.say("train " + std::to_string(split.train.size()) + " heldout " + std::to_string(split.heldout.size()));
}

void cmd_train_ref(Run& run) {
  const ComparisonConfig cc = comparison_config(run.cfg());
  const std::uint64_t seed = pipeline_seed(run.cfg());
  const LabeledDataset train_set = read_dataset(run.need("train.d2cd"));
  const TrainConfig tc = reference_train_config(cc, seed, train_set.size());
  const DenoiserModel fresh(cc.dims, tc.prediction, stage_seed(seed, Stage::reference_init));
  const CondensedDataset full = attach_all(train_set, default_class_names(train_set), cc.encoders);
  const TrainResult tr = train(fresh, full, tc);
  tr.ema.save(run.out("reference.d2cm"));
  write_text(run.out("reference_log.csv"), tr.log.csv());
  run.say("reference trained for " + std::to_string(tc.steps) + " steps");
}

void cmd_score(Run& run) {
  const ComparisonConfig cc = comparison_config(run.cfg());
  const LabeledDataset train_set = read_dataset(run.need("train.d2cd"));
  const DenoiserModel ref = DenoiserModel::load(run.need("reference.d2cm"));
  const ScoreTable scores = score_dataset(ref, make_schedule(cc.reference.schedule), train_set, cell_mc_config(cc, pipeline_seed(run.cfg())), cc.workers);
  for (const auto& w : scores.warnings) run.warn(w);
  write_scores(run.out("scores.d2cs"), scores);
  write_text(run.out("scores.csv"), scores_csv(scores));
  run.say("scored " + std::to_string(train_set.size()) + " samples");
}

void cmd_select(Run& run) {
  const LabeledDataset train_set = read_dataset(run.need("train.d2cd"));
  const StrategyVariant v = pipeline_variant(run.cfg());
  SelectionSpec spec = selection_spec(run.cfg());
  std::optional<ScoreTable> scores;
  if (uses_scores(spec.strategy)) {
    scores = read_scores(run.need("scores.d2cs"));
    if (spec.strategy == Strategy::interval && spec.k == 0) {
      spec.k = max_feasible_k(*scores, spec.budget);
      if (spec.k == 0) throw InfeasibleBudget("budget " + std::to_string(spec.budget) + " exceeds the smallest class");
    }
  }
  const SelectionSpec cell = cell_selection_spec(v, spec.budget, spec.k, pipeline_seed(run.cfg()));
  const SelectionResult sel = select(cell, train_set, scores ? &*scores : nullptr);
  write_selection(run.out("selection.csv"), sel);
  run.out("selection.json");
  run.say("selected " + std::to_string(sel.total()) + " samples (" + to_string(cell.strategy) + ", k=" + std::to_string(cell.k) + ")");
}

void cmd_attach(Run& run) {
  const ComparisonConfig cc = comparison_config(run.cfg());
  const LabeledDataset train_set = read_dataset(run.need("train.d2cd"));
  const SelectionResult sel = read_selection(run.need("selection.csv"));
  std::string fingerprint = "none";
  if (auto p = run.find("scores.d2cs")) fingerprint = hex64(read_scores(*p).model_fingerprint);
  const CondensedDataset c = build_condensed(train_set, sel, default_class_names(train_set), cc.encoders,
                                             {{"scorer_fingerprint", fingerprint}, {"variant", pipeline_variant(run.cfg()).name}});
  write_condensed(run.out("condensed.d2cd"), c);
  run.say("condensed " + std::to_string(c.size()) + " samples");
}

void cmd_train(Run& run) {
  const ComparisonConfig cc = comparison_config(run.cfg());
  const std::uint64_t seed = pipeline_seed(run.cfg());
  const CondensedDataset c = read_condensed(run.need("condensed.d2cd"));
  const TrainConfig tc = cell_train_config(cc, pipeline_variant(run.cfg()), seed, c.size());
  const DenoiserModel fresh(cc.dims, tc.prediction, stage_seed(seed, Stage::model_init));
  const TrainResult tr = train(fresh, c, tc);
  tr.ema.save(run.out("model.d2cm"));
  write_text(run.out("train_log.csv"), tr.log.csv());
  const auto& rows = tr.log.rows;
  if (!rows.empty()) run.say("final L_total " + std::to_string(rows.back().l_total));
}

void cmd_sample(Run& run) {
  const ComparisonConfig cc = comparison_config(run.cfg());
  const std::uint64_t seed = pipeline_seed(run.cfg());
  const fs::path cpath = run.need("condensed.d2cd");
  const CondensedDataset c = read_condensed(cpath);
  const DenoiserModel model = DenoiserModel::load(run.need("model.d2cm"));
  const TrainConfig tc = cell_train_config(cc, pipeline_variant(run.cfg()), seed, c.size());
  std::vector<std::uint32_t> labels;
  const SampleSet s = sample_classes(model, make_schedule(tc.schedule), c, cc.n_eval, cell_sample_options(cc, tc, seed), labels);
  write_samples(run.out("samples.csv"), s.values, s.dim, labels);
  run.say("sampled " + std::to_string(s.size()) + " points");
}

void cmd_eval(Run& run) {
  std::vector<double> values;
  std::size_t dim = 0;
  std::vector<std::uint32_t> labels;
  read_samples(run.need("samples.csv"), values, dim, labels);
  const LabeledDataset heldout = read_dataset(run.need("heldout.d2cd"));
  const MetricReport m = evaluate_samples(SampleSet{dim, std::move(values)}, labels, heldout);
  write_text(run.out("metrics.json"), metrics_to_json(m).dump(2) + "\n");
  run.say("mean class FD " + std::to_string(m.mean_class_frechet));
}

std::string cell_name(const ComparisonRow& r) {
  return r.strategy + "_b" + std::to_string(r.budget) + "_k" + std::to_string(r.k) + "_s" + std::to_string(r.seed) + ".json";
}

void cmd_compare(Run& run, const fs::path& out_dir) {
  ComparisonConfig cc = comparison_config(run.cfg());
  if (cc.cache_dir.empty()) cc.cache_dir = out_dir / "cache";
  DatasetSplit split;
  auto tr = run.find("train.d2cd");
  auto ho = run.find("heldout.d2cd");
  if (tr && ho) split = {read_dataset(*tr), read_dataset(*ho)};
  else split = split_by_parity(generate_data(run.cfg()));

  fs::create_directories(out_dir / "cells");
  ComparisonStats stats;
  const ComparisonTable table = run_comparison(split, cc, &stats, [&](const ComparisonRow& r) {
    if (r.ok) {
      write_text(run.out("cells/" + cell_name(r)), metrics_to_json(r.metrics).dump(2) + "\n");
      run.say(r.strategy + " b=" + std::to_string(r.budget) + " k=" + std::to_string(r.k) + " s=" + std::to_string(r.seed) +
              " fd=" + std::to_string(r.metrics.mean_class_frechet));
    } else {
      run.warn(cell_name(r) + ": " + r.error);
    }
  });
  write_text(run.out("comparison.csv"), table.csv());
  write_text(run.out("plot_interval_k.csv"), plot_data_k(table));
  write_text(run.out("plot_strategies.csv"), plot_data_strategies(table));
  run.say("cells " + std::to_string(table.rows.size()) + ", trainings " + std::to_string(stats.trainings) + ", cache hits " +
          std::to_string(stats.cache_hits));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError(FormatErrorKind::malformed, where + ": bad number '" + s + "'");
  return v;
}

ComparisonTable parse_comparison(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  std::getline(in, line);
  ComparisonTable t;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    const std::string where = p.string() + ":" + std::to_string(n);
    if (c.size() != 10) throw FormatError(FormatErrorKind::malformed, where + ": expected 10 columns");
    ComparisonRow r;
    r.strategy = c[0];
    r.budget = static_cast<std::uint32_t>(parse_double(c[1], where));
    r.k = static_cast<std::uint32_t>(parse_double(c[2], where));
    r.seed = static_cast<std::uint64_t>(parse_double(c[3], where));
    r.steps = static_cast<std::uint64_t>(parse_double(c[4], where));
    r.ok = c[5] == "1";
    if (r.ok) {
      r.metrics.mean_class_frechet = parse_double(c[6], where);
      r.metrics.frechet = parse_double(c[7], where);
      r.metrics.mmd = parse_double(c[8], where);
    }
    r.error = c[9];
    t.rows.push_back(std::move(r));
  }
  return t;
}

TrainLog parse_train_log(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  std::getline(in, line);
  TrainLog log;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    const std::string where = p.string() + ":" + std::to_string(n);
    if (c.size() < 5) throw FormatError(FormatErrorKind::malformed, where + ": expected 5 columns");
    TrainLogRow r;
    r.step = static_cast<std::uint64_t>(parse_double(c[0], where));
    r.l_diff = parse_double(c[1], where);
    r.l_proj = parse_double(c[2], where);
    r.l_total = parse_double(c[3], where);
    r.grad_norm = parse_double(c[4], where);
    log.rows.push_back(r);
  }
  return log;
}

void cmd_plot_data(Run& run) {
  bool any = false;
  if (auto p = run.find("comparison.csv")) {
    const ComparisonTable t = parse_comparison(*p);
    write_text(run.out("plot_interval_k.csv"), plot_data_k(t));
    write_text(run.out("plot_strategies.csv"), plot_data_strategies(t));
    any = true;
  }
  for (const char* name : {"train_log.csv", "reference_log.csv"}) {
    if (auto p = run.find(name)) {
      const std::string stem = fs::path(name).stem().string();
      write_text(run.out("plot_loss_" + stem.substr(0, stem.size() - 4) + ".csv"), plot_data_loss(parse_train_log(*p)));
      any = true;
    }
  }
  if (!any) throw MissingArtifact("plot-data needs comparison.csv, train_log.csv or reference_log.csv in an input directory");
}

}  // namespace

json effective_config(const std::string& command, const StageOptions& opts) {
  json cfg = load_config(opts.config);
  json over = json::object();
  if (opts.seed) {
    if (command == "gen-data") over["data"]["seed"] = *opts.seed;
    else over["train"]["seed"] = *opts.seed;
  }
  if (opts.k) over["select"]["k"] = *opts.k;
  if (opts.budget) over["select"]["budget"] = *opts.budget;
  if (opts.strategy) over["select"]["strategy"] = *opts.strategy;
  if (opts.cfg_scale) over["eval"]["cfg_scale"] = *opts.cfg_scale;
  if (opts.steps) over["train"]["steps"] = *opts.steps;
  cfg = merge_config(cfg, over);
  // Validate every section up front so a bad value fails before any work.
  comparison_config(cfg);
  pipeline_variant(cfg);
  return cfg;
}

void run_command(const std::string& command, const StageOptions& opts) {
  Run run(command, opts, effective_config(command, opts));
  if (command == "gen-data") cmd_gen_data(run);
  else if (command == "train-ref") cmd_train_ref(run);
  else if (command == "score") cmd_score(run);
  else if (command == "select") cmd_select(run);
  else if (command == "attach") cmd_attach(run);
  else if (command == "train") cmd_train(run);
  else if (command == "sample") cmd_sample(run);
  else if (command == "eval") cmd_eval(run);
  else if (command == "compare") cmd_compare(run, opts.out);
  else if (command == "plot-data") cmd_plot_data(run);
  else throw std::invalid_argument("unknown command " + command);
  run.finish();
}

Failure describe_failure(const std::string& command) {
  json j = {{"command", command}};
  int code = 1;
  try {
    throw;
  } catch (const ConfigError& e) {
    code = 2;
    j["error"] = "config";
    j["pointer"] = e.pointer();
    j["message"] = e.what();
  } catch (const MissingArtifact& e) {
    code = 3;
    j["error"] = "missing_artifact";
    j["message"] = e.what();
  } catch (const FormatError& e) {
    code = 3;
    j["error"] = "corrupt_artifact";
    j["kind"] = to_string(e.kind());
    j["message"] = e.what();
  } catch (const NumericError& e) {
    code = 4;
    j["error"] = "numeric";
    j["message"] = e.what();
  } catch (const std::invalid_argument& e) {
    code = 2;
    j["error"] = "invalid_argument";
    j["message"] = e.what();
  } catch (const std::exception& e) {
    j["error"] = "internal";
    j["message"] = e.what();
  }
  return {code, j.dump()};
}

void write_samples(const fs::path& path, const std::vector<double>& values, std::size_t dim, const std::vector<std::uint32_t>& labels) {
  std::string out = "label";
  for (std::size_t d = 0; d < dim; ++d) out += ",x" + std::to_string(d);
  out += "\n";
  char buf[32];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += std::to_string(labels[i]);
    for (std::size_t d = 0; d < dim; ++d) {
      std::snprintf(buf, sizeof buf, ",%.17g", values[i * dim + d]);
      out += buf;
    }
    out += "\n";
  }
  write_text(path, out);
}

void read_samples(const fs::path& path, std::vector<double>& values, std::size_t& dim, std::vector<std::uint32_t>& labels) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(FormatErrorKind::truncated, path.string() + ": empty samples file");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "label") throw FormatError(FormatErrorKind::malformed, path.string() + ": bad header");
  dim = header.size() - 1;
  values.clear();
  labels.clear();
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(n);
    if (c.size() != dim + 1) throw FormatError(FormatErrorKind::malformed, where + ": expected " + std::to_string(dim + 1) + " columns");
    labels.push_back(static_cast<std::uint32_t>(parse_double(c[0], where)));
    for (std::size_t d = 0; d < dim; ++d) values.push_back(parse_double(c[d + 1], where));
  }
}

}  // namespace d2c::cli
