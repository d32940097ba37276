#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace d2c::cli {

namespace {

using nlohmann::json;

// Every integer in the schema is a count, size or seed.
std::string type_name(const json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>() >= 0 || v.is_number_unsigned() ? "non-negative integer" : "negative integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

bool same_kind(const json& want, const json& got) {
  if (want.is_number_integer()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
  if (want.is_number()) return got.is_number();
  return want.type() == got.type();
}

void merge_into(json& target, const json& user, const std::string& at) {
  if (!user.is_object()) throw ConfigError(at.empty() ? "/" : at, "expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = (json::json_pointer(at) / key).to_string();
    if (!target.contains(key)) throw ConfigError(here, "unknown key");
    json& slot = target[key];
    if (slot.is_object()) {
      merge_into(slot, value, here);
    } else if (slot.is_array()) {
      if (!value.is_array()) throw ConfigError(here, "expected an array");
      // Element kind follows the default's first element.
      if (!slot.empty()) {
        for (std::size_t i = 0; i < value.size(); ++i) {
          if (!same_kind(slot.front(), value[i])) {
            throw ConfigError(here + "/" + std::to_string(i), "expected " + type_name(slot.front()) + ", got " + type_name(value[i]));
          }
        }
      }
      slot = value;
    } else {
      if (!same_kind(slot, value)) throw ConfigError(here, "expected " + type_name(slot) + ", got " + type_name(value));
      slot = value;
    }
  }
}

// Runs f and rethrows library argument errors as config errors at `where`.
template <class F>
auto at_section(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where, e.what());
  } catch (const json::exception& e) {
    throw ConfigError(where, e.what());
  }
}

void require(bool ok, const std::string& pointer, const std::string& what) {
  if (!ok) throw ConfigError(pointer, what);
}

ModelDims model_dims(const json& cfg) {
  const json& m = cfg.at("model");
  const json& a = cfg.at("attach");
  ModelDims d;
  d.classes = cfg.at("data").at("classes").get<std::uint32_t>();
  d.dim = cfg.at("data").at("kind") == "shapes8x8" ? 64 : 2;
  d.d_model = m.at("d_model").get<std::uint32_t>();
  d.blocks = m.at("blocks").get<std::uint32_t>();
  d.align_layer = m.at("align_layer").get<std::uint32_t>();
  d.d_text = a.at("d_text").get<std::uint32_t>();
  d.d_feat = a.at("d_feat").get<std::uint32_t>();
  d.tokens = a.at("tokens").get<std::uint32_t>();
  at_section("/model", [&] {
    d.validate();
    return 0;
  });
  require(d.dim % d.tokens == 0, "/attach/tokens", "sample dimension " + std::to_string(d.dim) + " is not divisible by tokens");
  return d;
}

TrainConfig train_fields(const json& t, const json& cfg, TrainConfig base, const std::string& where) {
  base.steps = t.at("steps").get<std::uint64_t>();
  base.batch = t.at("batch").get<std::size_t>();
  base.lambda = t.at("lambda").get<double>();
  base.alignment = t.at("alignment").get<bool>();
  base.text_branch = t.at("text_branch").get<bool>();
  base.class_branch = t.at("class_branch").get<bool>();
  base.p_null = t.at("p_null").get<double>();
  base.ema_decay = t.at("ema_decay").get<double>();
  base.lr = t.at("lr").get<double>();
  base.prediction = at_section("/model/prediction", [&] { return prediction_kind_from_string(cfg.at("model").at("prediction").get<std::string>()); });
  base.schedule = at_section("/schedule/kind", [&] { return schedule_kind_from_string(cfg.at("schedule").at("kind").get<std::string>()); });
  require(base.batch >= 1, where + "/batch", "batch must be at least 1");
  require(base.lr > 0.0, where + "/lr", "lr must be positive");
  require(base.text_branch || base.class_branch, where, "at least one of text_branch and class_branch must be on");
  at_section(where, [&] {
    base.validate();
    return 0;
  });
  return base;
}

}  // namespace

json default_config() {
  return {
      {"data", {{"kind", "gauss2d"}, {"classes", 8}, {"n_per_class", 200}, {"clutter_max", 1.0}, {"seed", 7}, {"radius", 2.0},
                {"base_std", 0.1}, {"max_shift", 1}}},
      {"schedule", {{"kind", "vp-continuous"}}},
      {"model", {{"prediction", "epsilon"}, {"d_model", 32}, {"blocks", 2}, {"align_layer", 1}}},
      {"score",
       {{"strata", 8},
        {"draws", 4},
        {"reference",
         {{"steps", 2000}, {"batch", 64}, {"lambda", 0.0}, {"alignment", false}, {"text_branch", false}, {"class_branch", true},
          {"p_null", 0.0}, {"ema_decay", 0.99}, {"lr", 2e-3}}}}},
      {"select", {{"strategy", "interval"}, {"k", 10}, {"budget", 10}}},
      {"attach", {{"text_length", 8}, {"d_text", 32}, {"tokens", 1}, {"d_feat", 16}, {"seed", 0}}},
      {"train",
       {{"steps", 1000}, {"batch", 64}, {"lambda", 0.5}, {"alignment", true}, {"text_branch", true}, {"class_branch", true},
        {"p_null", 0.1}, {"ema_decay", 0.99}, {"lr", 2e-3}, {"seed", 0}}},
      {"eval",
       {{"n_eval", 300},
        {"sample_steps", 100},
        {"cfg_scale", 1.0},
        {"strategies", {"d2c", "random", "min", "max"}},
        {"budgets", {10}},
        {"k_grid", {10}},
        {"seeds", {0, 1, 2}},
        {"cache_dir", ""},
        {"workers", 0}}},
  };
}

json merge_config(const json& defaults, const json& user) {
  json out = defaults;
  merge_into(out, user, "");
  return out;
}

json load_config(const std::filesystem::path& path) {
  if (path.empty()) return default_config();
  std::ifstream in(path);
  if (!in) throw MissingArtifact("config file " + path.string() + " not found");
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
  return merge_config(default_config(), user);
}

LabeledDataset generate_data(const json& cfg) {
  const json& d = cfg.at("data");
  const std::string kind = d.at("kind");
  require(kind == "gauss2d" || kind == "shapes8x8", "/data/kind", "unknown data kind '" + kind + "' (gauss2d or shapes8x8)");
  const auto classes = d.at("classes").get<std::size_t>();
  const auto n = d.at("n_per_class").get<std::size_t>();
  require(n >= 8 && n % 2 == 0, "/data/n_per_class", "n_per_class must be even and at least 8 (half is held out)");
  const double clutter = d.at("clutter_max").get<double>();
  const auto seed = d.at("seed").get<std::uint64_t>();
  return at_section("/data", [&] {
    if (kind == "gauss2d") {
      Gauss2dOptions o;
      o.radius = d.at("radius").get<double>();
      o.base_std = d.at("base_std").get<double>();
      return gen_gauss2d(classes, n, clutter, seed, o);
    }
    Shapes8x8Options o;
    o.max_shift = static_cast<int>(d.at("max_shift").get<std::uint32_t>());
    return gen_shapes8x8(classes, n, clutter, seed, o);
  });
}

ComparisonConfig comparison_config(const json& cfg) {
  ComparisonConfig c;
  c.dims = model_dims(cfg);
  const json& a = cfg.at("attach");
  c.encoders.text_length = a.at("text_length").get<std::size_t>();
  c.encoders.d_text = a.at("d_text").get<std::size_t>();
  c.encoders.tokens = a.at("tokens").get<std::size_t>();
  c.encoders.d_feat = a.at("d_feat").get<std::size_t>();
  c.encoders.seed = a.at("seed").get<std::uint64_t>();
  at_section("/attach", [&] {
    c.encoders.validate();
    return 0;
  });

  c.train = train_fields(cfg.at("train"), cfg, TrainConfig{}, "/train");
  c.train.seed = pipeline_seed(cfg);
  c.reference = train_fields(cfg.at("score").at("reference"), cfg, TrainConfig{}, "/score/reference");

  const json& s = cfg.at("score");
  c.mc.strata = s.at("strata").get<std::uint32_t>();
  c.mc.draws = s.at("draws").get<std::uint32_t>();
  require(c.mc.strata >= 1, "/score/strata", "strata must be at least 1");
  require(c.mc.draws >= 1, "/score/draws", "draws must be at least 1");

  const json& e = cfg.at("eval");
  c.n_eval = e.at("n_eval").get<std::size_t>();
  c.sample_steps = e.at("sample_steps").get<std::size_t>();
  c.cfg_scale = e.at("cfg_scale").get<double>();
  c.strategies = e.at("strategies").get<std::vector<std::string>>();
  c.budgets = e.at("budgets").get<std::vector<std::uint32_t>>();
  c.k_grid = e.at("k_grid").get<std::vector<std::uint32_t>>();
  c.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
  c.cache_dir = e.at("cache_dir").get<std::string>();
  c.workers = e.at("workers").get<std::size_t>();
  require(c.n_eval >= c.dims.dim + 1, "/eval/n_eval", "n_eval must exceed the sample dimension");
  require(c.sample_steps >= 1, "/eval/sample_steps", "sample_steps must be at least 1");
  require(c.cfg_scale >= 1.0, "/eval/cfg_scale", "cfg_scale must be >= 1");
  for (std::size_t i = 0; i < c.strategies.size(); ++i) {
    at_section("/eval/strategies/" + std::to_string(i), [&] { return variant_by_name(c.strategies[i]); });
  }
  for (std::size_t i = 0; i < c.budgets.size(); ++i) require(c.budgets[i] >= 1, "/eval/budgets/" + std::to_string(i), "budgets must be at least 1");
  return c;
}

SelectionSpec selection_spec(const json& cfg) {
  const json& s = cfg.at("select");
  SelectionSpec spec;
  spec.strategy = at_section("/select/strategy", [&] { return strategy_from_string(s.at("strategy").get<std::string>()); });
  spec.k = s.at("k").get<std::uint32_t>();
  spec.budget = s.at("budget").get<std::uint32_t>();
  require(spec.budget >= 1, "/select/budget", "budget must be at least 1");
  return spec;
}

StrategyVariant pipeline_variant(const json& cfg) {
  const TrainConfig t = train_fields(cfg.at("train"), cfg, TrainConfig{}, "/train");
  StrategyVariant v;
  v.name = "pipeline";
  v.selection = selection_spec(cfg).strategy;
  v.lambda = t.effective_lambda();
  v.text_branch = t.text_branch;
  v.class_branch = t.class_branch;
  return v;
}

std::uint64_t pipeline_seed(const json& cfg) { return cfg.at("train").at("seed").get<std::uint64_t>(); }

}  // namespace d2c::cli
