#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "json.hpp"

namespace {

struct Stage {
  const char* name;
  const char* help;
  bool overrides;  // accepts --k/--budget/--strategy/--cfg-scale/--steps
};

constexpr Stage kStages[] = {
    {"gen-data", "Generate the toy dataset and write train.d2cd and heldout.d2cd", false},
    {"train-ref", "Train the reference (scoring) model on train.d2cd", true},
    {"score", "Compute difficulty scores for train.d2cd with reference.d2cm", true},
    {"select", "Select a budgeted subset per class (selection.csv, selection.json)", true},
    {"attach", "Attach text and visual embeddings to the selection (condensed.d2cd)", true},
    {"train", "Train the denoiser on condensed.d2cd (model.d2cm, train_log.csv)", true},
    {"sample", "Draw n_eval samples per class from model.d2cm (samples.csv)", true},
    {"eval", "Score samples.csv against heldout.d2cd (metrics.json)", true},
    {"compare", "Run the strategy x budget x k x seed grid (comparison.csv, cells/)", true},
    {"plot-data", "Write plot CSVs from comparison.csv and training logs", false},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d2c: select, attach and train diffusion models on condensed toy datasets"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "d2c 1.0.0");

  d2c::cli::StageOptions opts;
  std::string config, out = ".";
  std::vector<std::string> inputs;
  std::uint64_t seed = 0, steps = 0;
  std::uint32_t k = 0, budget = 0;
  std::string strategy;
  double cfg_scale = 1.0;

  for (const Stage& s : kStages) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config, "Run config JSON; missing keys take built-in defaults")->check(CLI::ExistingFile)->default_str("built-in defaults");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--in", inputs, "Input directory, searched in order (repeatable)")->default_str("none");
    sub->add_option("--seed", seed, s.name == std::string("gen-data") ? "Overrides data.seed" : "Overrides train.seed, the pipeline seed")
        ->default_str(s.name == std::string("gen-data") ? "config /data/seed" : "config /train/seed");
    sub->add_flag("--quiet", opts.quiet, "Suppress progress lines on stdout")->default_str("false");
    if (s.overrides) {
      sub->add_option("--k", k, "Overrides select.k; 0 picks the largest feasible k")->default_str("config /select/k");
      sub->add_option("--budget", budget, "Overrides select.budget")->default_str("config /select/budget");
      sub->add_option("--strategy", strategy, "Overrides select.strategy")->default_str("config /select/strategy");
      sub->add_option("--cfg-scale", cfg_scale, "Overrides eval.cfg_scale")->default_str("config /eval/cfg_scale");
      sub->add_option("--steps", steps, "Overrides train.steps")->default_str("config /train/steps");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  opts.config = config;
  opts.out = out;
  for (const auto& d : inputs) opts.inputs.emplace_back(d);
  if (sub->count("--seed") > 0) opts.seed = seed;
  if (sub->get_option_no_throw("--k") != nullptr) {
    if (sub->count("--k") > 0) opts.k = k;
    if (sub->count("--budget") > 0) opts.budget = budget;
    if (sub->count("--strategy") > 0) opts.strategy = strategy;
    if (sub->count("--cfg-scale") > 0) opts.cfg_scale = cfg_scale;
    if (sub->count("--steps") > 0) opts.steps = steps;
  }

  try {
    d2c::cli::run_command(command, opts);
  } catch (...) {
    const auto f = d2c::cli::describe_failure(command);
    std::cerr << f.json << "\n";
    return f.code;
  }
  return 0;
}
