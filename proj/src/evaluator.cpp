#include "d2c/evaluator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "d2c/binio.hpp"
#include "d2c/rng.hpp"

namespace d2c {

namespace {

Eigen::MatrixXd as_matrix(const SampleSet& s, const char* what) {
  if (s.dim == 0 || s.values.size() % s.dim != 0) throw DimensionError(std::string(what) + ": sample matrix is not n x dim");
  const std::size_t n = s.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s.dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < s.dim; ++d) {
      const double v = s.values[i * s.dim + d];
      if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite sample value");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v;
    }
  }
  return m;
}

// Square root of a symmetric positive semi-definite matrix; eigenvalues
// below zero are rounding noise and are clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

std::uint64_t hash_text(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}, h);
}

std::uint64_t hash_bytes(std::span<const std::uint8_t> b, std::uint64_t h = 0xcbf29ce484222325ULL) { return fnv1a64(b, h); }

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

nlohmann::json metrics_to_json(const MetricReport& m) {
  return {{"frechet", m.frechet},     {"mean_class_frechet", m.mean_class_frechet}, {"class_frechet", m.class_frechet},
          {"mmd", m.mmd},             {"bandwidth", m.bandwidth},                   {"generated", m.generated},
          {"reference", m.reference}};
}

MetricReport metrics_from_json(const nlohmann::json& j) {
  MetricReport m;
  m.frechet = j.at("frechet").get<double>();
  m.mean_class_frechet = j.at("mean_class_frechet").get<double>();
  m.class_frechet = j.at("class_frechet").get<std::vector<double>>();
  m.mmd = j.at("mmd").get<double>();
  m.bandwidth = j.at("bandwidth").get<double>();
  m.generated = j.at("generated").get<std::size_t>();
  m.reference = j.at("reference").get<std::size_t>();
  return m;
}

std::uint64_t stage_seed(std::uint64_t seed, Stage stage) { return derive_seed(seed, 0x7374616765ULL, static_cast<std::uint64_t>(stage)); }

double frechet_distance(const SampleSet& a, const SampleSet& b) {
  if (a.dim != b.dim) throw DimensionError("frechet_distance: dims differ");
  const Eigen::MatrixXd A = as_matrix(a, "frechet_distance"), B = as_matrix(b, "frechet_distance");
  const std::size_t need = a.dim + 1;
  if (a.size() < need || b.size() < need) {
    throw std::invalid_argument("frechet_distance needs at least dim+1 = " + std::to_string(need) + " samples per set");
  }
  const Eigen::RowVectorXd mu_a = A.colwise().mean(), mu_b = B.colwise().mean();
  const Eigen::MatrixXd ca = A.rowwise() - mu_a, cb = B.rowwise() - mu_b;
  const Eigen::MatrixXd sa = ca.transpose() * ca / static_cast<double>(A.rows() - 1);
  const Eigen::MatrixXd sb = cb.transpose() * cb / static_cast<double>(B.rows() - 1);
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::MatrixXd prod = ra * sb * ra;
  prod = 0.5 * (prod + prod.transpose());
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(prod, Eigen::EigenvaluesOnly).eigenvalues();
  const double tr_sqrt = ev.cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(fd, 0.0);
}

double mmd_rbf(const SampleSet& a, const SampleSet& b, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mmd_rbf bandwidth must be positive");
  if (a.dim != b.dim) throw DimensionError("mmd_rbf: dims differ");
  const std::size_t n = a.size(), m = b.size(), D = a.dim;
  if (n < 2 || m < 2) throw std::invalid_argument("mmd_rbf needs at least 2 samples per set");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  auto k = [&](const double* x, const double* y) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += (x[d] - y[d]) * (x[d] - y[d]);
    return std::exp(-s * inv);
  };
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) xx += k(&a.values[i * D], &a.values[j * D]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) yy += k(&b.values[i * D], &b.values[j * D]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) xy += k(&a.values[i * D], &b.values[j * D]);
  }
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return 2.0 * xx / (nn * (nn - 1.0)) + 2.0 * yy / (mm * (mm - 1.0)) - 2.0 * xy / (nn * mm);
}

double median_bandwidth(const SampleSet& a, std::size_t cap) {
  const std::size_t n = std::min(a.size(), cap), D = a.dim;
  if (n < 2) throw std::invalid_argument("median_bandwidth needs at least 2 samples");
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < D; ++c) s += (a.values[i * D + c] - a.values[j * D + c]) * (a.values[i * D + c] - a.values[j * D + c]);
      d.push_back(std::sqrt(s));
    }
  }
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  const double med = *mid;
  if (!(med > 0.0)) throw std::invalid_argument("median pairwise distance is zero");
  return med;
}

MetricReport evaluate_samples(const SampleSet& gen, std::span<const std::uint32_t> gen_labels, const LabeledDataset& reference, double bandwidth) {
  if (gen.dim != reference.dim) throw DimensionError("generated and reference dims differ");
  if (gen_labels.size() != gen.size()) throw DimensionError("generated labels do not match sample count");
  SampleSet ref{reference.dim, reference.samples};
  MetricReport r;
  r.generated = gen.size();
  r.reference = ref.size();
  r.frechet = frechet_distance(gen, ref);
  r.bandwidth = bandwidth > 0.0 ? bandwidth : median_bandwidth(ref);
  r.mmd = mmd_rbf(gen, ref, r.bandwidth);
  double sum = 0.0;
  for (std::uint32_t y = 0; y < reference.class_count; ++y) {
    SampleSet g{gen.dim, {}}, h{gen.dim, {}};
    for (std::size_t i = 0; i < gen_labels.size(); ++i) {
      if (gen_labels[i] == y) g.values.insert(g.values.end(), gen.values.begin() + static_cast<std::ptrdiff_t>(i * gen.dim),
                                               gen.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * gen.dim));
    }
    for (std::size_t i : reference.class_indices(y)) {
      const auto x = reference.sample(i);
      h.values.insert(h.values.end(), x.begin(), x.end());
    }
    const double fd = frechet_distance(g, h);
    r.class_frechet.push_back(fd);
    sum += fd;
  }
  r.mean_class_frechet = sum / static_cast<double>(reference.class_count);
  return r;
}

nlohmann::json StrategyVariant::to_json() const {
  return {{"name", name}, {"selection", to_string(selection)}, {"lambda", lambda}, {"text_branch", text_branch}, {"class_branch", class_branch}};
}

StrategyVariant variant_by_name(const std::string& name) {
  // Score-free baselines and the plain interval variant train with class
  // conditioning only, matching how those baselines are usually run.
  if (name == "d2c") return {name, Strategy::interval, 0.5, true, true, true};
  if (name == "no-align") return {name, Strategy::interval, 0.0, true, true, true};
  if (name == "only-class") return {name, Strategy::interval, 0.5, false, true, true};
  if (name == "interval-plain") return {name, Strategy::interval, 0.0, false, true, true};
  if (name == "min") return {name, Strategy::min, 0.5, true, true, false};
  if (name == "max") return {name, Strategy::max, 0.5, true, true, false};
  if (name == "random") return {name, Strategy::random, 0.0, false, true, false};
  if (name == "herding") return {name, Strategy::herding, 0.0, false, true, false};
  if (name == "kcenter") return {name, Strategy::kcenter, 0.0, false, true, false};
  throw std::invalid_argument("unknown strategy variant '" + name + "'");
}

nlohmann::json ComparisonConfig::to_json() const {
  return {{"strategies", strategies},
          {"budgets", budgets},
          {"k_grid", k_grid},
          {"seeds", seeds},
          {"dims", {{"classes", dims.classes}, {"dim", dims.dim}, {"d_model", dims.d_model}, {"d_text", dims.d_text},
                    {"d_feat", dims.d_feat}, {"blocks", dims.blocks}, {"tokens", dims.tokens}, {"align_layer", dims.align_layer}}},
          {"train", train.to_json()},
          {"reference", reference.to_json()},
          {"mc", {{"strata", mc.strata}, {"draws", mc.draws}}},
          {"encoders", encoders.to_json()},
          {"n_eval", n_eval},
          {"sample_steps", sample_steps},
          {"cfg_scale", cfg_scale}};
}

std::string ComparisonTable::csv() const {
  std::string out = "strategy,budget,k,seed,step,ok,mean_class_fd,fd,mmd,error\n";
  for (const auto& r : rows) {
    out += r.strategy + "," + std::to_string(r.budget) + "," + std::to_string(r.k) + "," + std::to_string(r.seed) + "," + std::to_string(r.steps) +
           "," + (r.ok ? "1" : "0") + ",";
    if (r.ok) out += fmt(r.metrics.mean_class_frechet) + "," + fmt(r.metrics.frechet) + "," + fmt(r.metrics.mmd);
    else out += ",,";
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += "," + err + "\n";
  }
  return out;
}

double ComparisonTable::mean_fd(const std::string& strategy, std::uint32_t budget, std::uint32_t k) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.ok && r.strategy == strategy && r.budget == budget && r.k == k) {
      sum += r.metrics.mean_class_frechet;
      ++n;
    }
  }
  return n == 0 ? NAN : sum / static_cast<double>(n);
}

TrainConfig reference_train_config(const ComparisonConfig& cfg, std::uint64_t seed, std::size_t data_size) {
  TrainConfig tc = cfg.reference;
  tc.seed = stage_seed(seed, Stage::reference_train);
  tc.batch = std::min(tc.batch, data_size);
  return tc;
}

McConfig cell_mc_config(const ComparisonConfig& cfg, std::uint64_t seed) {
  McConfig mc = cfg.mc;
  mc.seed = stage_seed(seed, Stage::score);
  return mc;
}

SelectionSpec cell_selection_spec(const StrategyVariant& variant, std::uint32_t budget, std::uint32_t k, std::uint64_t seed) {
  SelectionSpec spec;
  spec.strategy = variant.selection;
  spec.k = variant.selection == Strategy::interval ? k : 1;
  spec.budget = budget;
  spec.seed = stage_seed(seed, Stage::select);
  return spec;
}

TrainConfig cell_train_config(const ComparisonConfig& cfg, const StrategyVariant& variant, std::uint64_t seed, std::size_t data_size) {
  TrainConfig tc = cfg.train;
  tc.seed = stage_seed(seed, Stage::train);
  tc.lambda = variant.lambda;
  tc.alignment = variant.lambda > 0.0;
  tc.text_branch = variant.text_branch;
  tc.class_branch = variant.class_branch;
  tc.batch = std::min(tc.batch, data_size);
  return tc;
}

SampleOptions cell_sample_options(const ComparisonConfig& cfg, const TrainConfig& tc, std::uint64_t seed) {
  SampleOptions so;
  so.cfg_scale = cfg.cfg_scale;
  so.steps = cfg.sample_steps;
  so.seed = stage_seed(seed, Stage::sample);
  so.trained_p_null = tc.p_null;
  so.branches = tc.branches();
  return so;
}

SampleSet sample_classes(const DenoiserModel& model, const NoiseSchedule& sched, const CondensedDataset& data, std::size_t n,
                         const SampleOptions& opts, std::vector<std::uint32_t>& labels) {
  SampleSet gen{data.dim, {}};
  labels.clear();
  for (std::uint32_t y = 0; y < data.class_count; ++y) {
    const SampleResult sr = sample(model, sched, y, &data.texts[y], n, opts);
    gen.values.insert(gen.values.end(), sr.samples.begin(), sr.samples.end());
    labels.insert(labels.end(), n, y);
  }
  return gen;
}

DenoiserModel reference_model(const DatasetSplit& split, const ComparisonConfig& cfg, std::uint64_t seed, ComparisonStats& stats) {
  TrainConfig tc = reference_train_config(cfg, seed, split.train.size());
  const std::uint64_t init = stage_seed(seed, Stage::reference_init);
  const DenoiserModel fresh(cfg.dims, tc.prediction, init);
  std::filesystem::path file;
  if (!cfg.cache_dir.empty()) {
    std::uint64_t key = hash_bytes(serialize_dataset(split.train));
    key = hash_text(tc.to_json().dump(), key);
    key = hash_bytes(fresh.serialize(), key);
    key = hash_text(cfg.encoders.to_json().dump(), key);
    file = cfg.cache_dir / ("ref-" + hex64(key) + ".d2cm");
    if (std::filesystem::exists(file)) {
      ++stats.cache_hits;
      return DenoiserModel::load(file);
    }
  }
  const CondensedDataset full = attach_all(split.train, default_class_names(split.train), cfg.encoders);
  ++stats.trainings;
  TrainResult tr = train(fresh, full, tc);
  if (!file.empty()) tr.ema.save(file);
  return std::move(tr.ema);
}

ComparisonRow run_cell(const DatasetSplit& split, const ComparisonConfig& cfg, const StrategyVariant& variant, std::uint32_t budget,
                       std::uint32_t k, std::uint64_t seed, ComparisonStats& stats, CellArtifacts* artifacts) {
  ComparisonRow row;
  row.strategy = variant.name;
  row.budget = budget;
  row.k = variant.selection == Strategy::interval ? k : 0;
  row.seed = seed;
  row.steps = cfg.train.steps;

  const DenoiserModel ref = reference_model(split, cfg, seed, stats);
  const McConfig mc = cell_mc_config(cfg, seed);
  ScoreTable scores;
  std::filesystem::path score_file;
  if (!cfg.cache_dir.empty()) {
    std::uint64_t key = hash_text(hex64(ref.fingerprint()));
    key = hash_bytes(serialize_dataset(split.train), key);
    key = hash_text(std::to_string(mc.strata) + "/" + std::to_string(mc.draws) + "/" + std::to_string(mc.seed), key);
    score_file = cfg.cache_dir / ("scores-" + hex64(key) + ".d2cs");
  }
  if (!score_file.empty() && std::filesystem::exists(score_file)) {
    ++stats.cache_hits;
    scores = read_scores(score_file);
  } else {
    scores = score_dataset(ref, make_schedule(cfg.reference.schedule), split.train, mc, cfg.workers);
    if (!score_file.empty()) write_scores(score_file, scores);
  }

  if (variant.selection == Strategy::interval && k == 0) {
    k = max_feasible_k(scores, budget);
    if (k == 0) throw InfeasibleBudget("budget " + std::to_string(budget) + " exceeds the smallest class");
    row.k = k;
  }
  const SelectionSpec spec = cell_selection_spec(variant, budget, k, seed);
  const SelectionResult sel = select(spec, split.train, &scores);
  const CondensedDataset condensed = build_condensed(split.train, sel, default_class_names(split.train), cfg.encoders,
                                                     {{"scorer_fingerprint", hex64(scores.model_fingerprint)}, {"variant", variant.name}});

  const TrainConfig tc = cell_train_config(cfg, variant, seed, condensed.size());
  const DenoiserModel fresh(cfg.dims, tc.prediction, stage_seed(seed, Stage::model_init));

  std::filesystem::path model_file, metrics_file;
  std::uint64_t model_key = 0;
  if (!cfg.cache_dir.empty()) {
    model_key = hash_bytes(serialize_condensed(condensed));
    model_key = hash_text(tc.to_json().dump(), model_key);
    model_key = hash_bytes(fresh.serialize(), model_key);
    std::uint64_t mkey = hash_text(hex64(model_key));
    mkey = hash_bytes(serialize_dataset(split.heldout), mkey);
    mkey = hash_text(std::to_string(cfg.n_eval) + "/" + std::to_string(cfg.sample_steps) + "/" + fmt(cfg.cfg_scale), mkey);
    model_file = cfg.cache_dir / ("model-" + hex64(model_key) + ".d2cm");
    metrics_file = cfg.cache_dir / ("metrics-" + hex64(mkey) + ".json");
  }
  if (artifacts != nullptr) *artifacts = {scores, sel, condensed};
  if (!metrics_file.empty() && std::filesystem::exists(metrics_file) && std::filesystem::exists(model_file)) {
    ++stats.cache_hits;
    const auto bytes = read_file(metrics_file);
    row.metrics = metrics_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    return row;
  }

  std::optional<DenoiserModel> model;
  if (!model_file.empty() && std::filesystem::exists(model_file)) {
    ++stats.cache_hits;
    model = DenoiserModel::load(model_file);
  } else {
    ++stats.trainings;
    TrainResult tr = train(fresh, condensed, tc);
    if (!model_file.empty()) tr.ema.save(model_file);
    model = std::move(tr.ema);
  }

  const NoiseSchedule sched = make_schedule(tc.schedule);
  std::vector<std::uint32_t> labels;
  const SampleSet gen = sample_classes(*model, sched, condensed, cfg.n_eval, cell_sample_options(cfg, tc, seed), labels);
  row.metrics = evaluate_samples(gen, labels, split.heldout);
  if (!metrics_file.empty()) {
    const std::string js = metrics_to_json(row.metrics).dump(2) + "\n";
    write_file(metrics_file, {reinterpret_cast<const std::uint8_t*>(js.data()), js.size()});
  }
  return row;
}

ComparisonTable run_comparison(const DatasetSplit& split, const ComparisonConfig& cfg, ComparisonStats* stats,
                               const std::function<void(const ComparisonRow&)>& progress) {
  ComparisonStats local;
  ComparisonStats& st = stats != nullptr ? *stats : local;
  const auto start = std::chrono::steady_clock::now();
  if (!cfg.cache_dir.empty()) std::filesystem::create_directories(cfg.cache_dir);
  ComparisonTable table;
  for (const auto& name : cfg.strategies) {
    const StrategyVariant v = variant_by_name(name);
    for (std::uint32_t budget : cfg.budgets) {
      const std::vector<std::uint32_t> ks = v.sweeps_k ? cfg.k_grid : std::vector<std::uint32_t>{1};
      for (std::uint32_t k : ks) {
        for (std::uint64_t seed : cfg.seeds) {
          ComparisonRow row;
          try {
            row = run_cell(split, cfg, v, budget, k, seed, st);
          } catch (const std::exception& e) {
            row.strategy = name;
            row.budget = budget;
            row.k = v.selection == Strategy::interval ? k : 0;
            row.seed = seed;
            row.steps = cfg.train.steps;
            row.ok = false;
            row.error = e.what();
          }
          if (progress) progress(row);
          table.rows.push_back(std::move(row));
        }
      }
    }
  }
  st.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return table;
}

std::string plot_data_k(const ComparisonTable& t) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<double, std::size_t>> acc;
  for (const auto& r : t.rows) {
    if (!r.ok || r.strategy != "d2c") continue;
    auto& a = acc[{r.budget, r.k}];
    a.first += r.metrics.mean_class_frechet;
    ++a.second;
  }
  std::string out = "budget,k,mean_class_fd,seeds\n";
  for (const auto& [key, a] : acc) {
    out += std::to_string(key.first) + "," + std::to_string(key.second) + "," + fmt(a.first / static_cast<double>(a.second)) + "," +
           std::to_string(a.second) + "\n";
  }
  return out;
}

std::string plot_data_strategies(const ComparisonTable& t) {
  std::map<std::tuple<std::string, std::uint32_t, std::uint32_t>, std::pair<double, std::size_t>> acc;
  for (const auto& r : t.rows) {
    if (!r.ok) continue;
    auto& a = acc[{r.strategy, r.budget, r.k}];
    a.first += r.metrics.mean_class_frechet;
    ++a.second;
  }
  std::string out = "strategy,budget,k,mean_class_fd,seeds\n";
  for (const auto& [key, a] : acc) {
    out += std::get<0>(key) + "," + std::to_string(std::get<1>(key)) + "," + std::to_string(std::get<2>(key)) + "," +
           fmt(a.first / static_cast<double>(a.second)) + "," + std::to_string(a.second) + "\n";
  }
  return out;
}

std::string plot_data_loss(const TrainLog& log, std::size_t window) {
  std::string out = "step,L_diff_smoothed\n";
  window = std::max<std::size_t>(1, window);
  double acc = 0.0;
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    acc += log.rows[i].l_diff;
    if (i >= window) acc -= log.rows[i - window].l_diff;
    const std::size_t n = std::min(i + 1, window);
    out += std::to_string(log.rows[i].step) + "," + fmt(acc / static_cast<double>(n)) + "\n";
  }
  return out;
}

}  // namespace d2c
