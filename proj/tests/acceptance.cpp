// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Usage: d2c_acceptance [--cache DIR] [--only N]...
//
// Criteria 5 to 7 train on the default toy grid (the CLI's built-in config)
// and share one cache directory, so a second run only re-reads metrics.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "d2c/binio.hpp"
#include "d2c/container.hpp"
#include "d2c/evaluator.hpp"
#include "d2c/rng.hpp"
#include "oracles.hpp"
#include "run_config.hpp"

using namespace d2c;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::filesystem::path g_cache = std::filesystem::temp_directory_path() / "d2c_acceptance_cache";

// ---------------------------------------------------------------- 1

void randomize(DenoiserModel& m, Rng& rng, double scale) {
  for (auto& p : m.parameters()) {
    for (double& v : p.tensor.mutable_values()) v = scale * (2.0 * rng.uniform() - 1.0);
  }
}

Outcome gradients() {
  using oracle::check_gradients;
  using oracle::random_tensor;
  using Fn = oracle::ScalarFn;
  std::size_t cases = 0, failed = 0;
  double worst = 0.0;
  std::string worst_name;
  auto record = [&](const std::string& name, double err) {
    ++cases;
    if (!(err < 1e-4)) ++failed;
    if (!(err <= worst)) {
      worst = err;
      worst_name = name;
    }
  };

  for (std::uint64_t s = 0; s < 8; ++s) {
    Rng rng(1000 + s);
    const std::size_t r = 1 + rng.below(4), c = 1 + rng.below(5), k = 1 + rng.below(4);
    auto a = random_tensor({r, c}, rng), b = random_tensor({c, k}, rng), a2 = random_tensor({r, c}, rng), row = random_tensor({c}, rng);
    const std::vector<std::pair<std::string, std::pair<Fn, std::vector<Tensor>>>> ops = {
        {"matmul", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.tanh(t.matmul(l[0], l[1]))); }, {a, b}}},
        {"add", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.tanh(t.add(l[0], l[1]))); }, {a, a2}}},
        {"add-broadcast", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.tanh(t.add(l[0], l[1]))); }, {a, row}}},
        {"sub", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.tanh(t.sub(l[0], l[1]))); }, {a, row}}},
        {"mul", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.mul(l[0], l[1])); }, {a, row}}},
        {"scale", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.tanh(t.scale(l[0], -1.3))); }, {a}}},
        {"silu", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.mul(t.silu(l[0]), l[1])); }, {a, a2}}},
        {"tanh", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.mul(t.tanh(l[0]), l[1])); }, {a, a2}}},
        {"sum-axis", {[](Tape& t, std::vector<Tensor>& l) {
                        const Tensor s0 = t.sum(l[0], 0), s1 = t.sum(l[0], 1);
                        return t.add(t.sum(t.mul(s0, s0)), t.sum(t.mul(s1, s1)));
                      },
                      {a}}},
        {"mean-reshape", {[c, r](Tape& t, std::vector<Tensor>& l) {
                            const Tensor m = t.mean(t.reshape(l[0], {c, r}), 0);
                            return t.add(t.sum(t.mul(m, m)), t.mean(t.tanh(l[0])));
                          },
                          {a}}},
        {"row_normalize", {[](Tape& t, std::vector<Tensor>& l) { return t.sum(t.mul(t.row_normalize(l[0]), l[1])); }, {a, a2}}},
        {"negative_mean_cosine", {[](Tape& t, std::vector<Tensor>& l) { return negative_mean_cosine(t, l[0], l[1]); }, {a, a2}}},
    };
    for (const auto& [name, op] : ops) record(name, check_gradients(op.first, op.second).rel_err);
  }

  // Whole models: the fusion path, forward, projection, and L_total.
  for (std::uint64_t s = 0; s < 6; ++s) {
    Rng rng(2000 + s);
    ModelDims d;
    d.classes = 3;
    d.dim = 2;
    d.d_model = 2 * (2 + rng.below(3));
    d.blocks = 1 + rng.below(3);
    d.align_layer = 1 + rng.below(d.blocks);
    d.tokens = 1 + rng.below(2);
    EncoderConfig enc;
    enc.text_length = 6;
    enc.d_text = 3 + rng.below(3);
    enc.tokens = d.tokens;
    enc.d_feat = 2 + rng.below(4);
    enc.seed = s;
    d.d_text = enc.d_text;
    d.d_feat = enc.d_feat;
    const auto ds = gen_gauss2d(3, 4, 0.5, s);
    const CondensedDataset data = attach_all(ds, default_class_names(ds), enc);

    for (PredictionKind kind : {PredictionKind::epsilon, PredictionKind::velocity}) {
      PrecisionScope p64(Precision::f64);
      DenoiserModel m(d, kind, s);
      randomize(m, rng, 0.5);
      std::vector<Tensor> leaves;
      for (auto& np : m.parameters()) leaves.push_back(np.tensor);
      TrainConfig tc;
      tc.batch = 6;
      tc.p_null = 0.3;
      tc.prediction = kind;
      tc.schedule = kind == PredictionKind::velocity ? ScheduleKind::linear_flow : ScheduleKind::vp_continuous;
      tc.seed = s;
      const TrainBatch batch = draw_batch(m, make_schedule(tc.schedule), data, tc, s);
      const double lambda = 0.25 + 0.5 * rng.uniform();
      record("L_total", check_gradients([&](Tape& t, std::vector<Tensor>&) { return compute_loss(t, m, batch, lambda).total; }, leaves).rel_err);
      if (kind == PredictionKind::epsilon) {
        record("L_total-only-class", check_gradients([&](Tape& t, std::vector<Tensor>&) {
                                       return compute_loss(t, m, batch, lambda, {false, true}).total;
                                     },
                                     leaves)
                                         .rel_err);
        record("forward+projection", check_gradients([&](Tape& t, std::vector<Tensor>&) {
                                       const Tensor cnd = m.fuse_conditions(t, batch.bundles);
                                       const ForwardResult fr = m.forward(t, batch.x_t, batch.times, cnd);
                                       return t.add(t.sum(t.mul(fr.prediction, fr.prediction)), t.sum(t.tanh(m.project_features(t, fr.features))));
                                     },
                                     leaves)
                                         .rel_err);
      }
    }
  }
  return {failed == 0 && cases >= 100, std::to_string(cases) + " cases, " + std::to_string(failed) + " over 1e-4, worst " +
                                            fmt("%.2e", worst) + " (" + worst_name + ")"};
}

// ---------------------------------------------------------------- 2

Outcome forward_moments() {
  const std::size_t n = 100000;
  const std::vector<double> x0{1.5, -0.7};
  std::size_t checks = 0, failed = 0;
  double worst_z = 0.0, worst_var = 0.0;
  const std::vector<std::pair<NoiseSchedule, std::vector<double>>> cases = {
      {NoiseSchedule::vp_continuous(), {0.05, 0.25, 0.5, 0.75, 0.95}},
      {NoiseSchedule::linear_flow(), {0.05, 0.25, 0.5, 0.75, 0.95}},
      {NoiseSchedule::ddpm_linear(), {1, 25, 50, 75, 100}},
  };
  std::uint64_t seed = 0;
  for (const auto& [sched, times] : cases) {
    for (double t : times) {
      Rng rng(++seed);
      std::vector<double> s1(x0.size(), 0.0), s2(x0.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto ps = perturb(sched, x0, t, rng);
        for (std::size_t d = 0; d < x0.size(); ++d) {
          s1[d] += ps.x_t[d];
          s2[d] += ps.x_t[d] * ps.x_t[d];
        }
      }
      const AlphaSigma as = sched.alpha_sigma(t);
      for (std::size_t d = 0; d < x0.size(); ++d) {
        const double mean = s1[d] / n;
        const double var = (s2[d] - n * mean * mean) / (n - 1);
        const double z = std::abs(mean - as.alpha * x0[d]) / (as.sigma / std::sqrt(static_cast<double>(n)));
        const double rel = std::abs(var / (as.sigma * as.sigma) - 1.0);
        worst_z = std::max(worst_z, z);
        worst_var = std::max(worst_var, rel);
        ++checks;
        if (!(z < 4.0) || !(rel < 0.02)) ++failed;
      }
    }
  }
  return {failed == 0, std::to_string(checks) + " (schedule, t, coordinate) checks at 1e5 draws, worst mean error " + fmt("%.2f", worst_z) +
                           " SE, worst variance error " + fmt("%.2f%%", 100.0 * worst_var)};
}

// ---------------------------------------------------------------- 3

Outcome selection_oracles() {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // name -> (instances, mismatches)
  for (std::uint64_t s = 0; s < 150; ++s) {
    Rng rng(5000 + s);
    const std::size_t classes = 2 + rng.below(3);
    LabeledDataset ds;
    ds.kind = "gauss2d";
    ds.dim = 2;
    ds.class_count = classes;
    ScoreTable table;
    std::vector<oracle::Item> items;
    std::size_t smallest = 99;
    for (std::uint32_t y = 0; y < classes; ++y) {
      const std::size_t n = 2 + rng.below(9);
      smallest = std::min(smallest, n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t idx = static_cast<std::uint32_t>(ds.labels.size());
        // Coarse values force ties in scores and distances.
        ds.samples.push_back(static_cast<double>(rng.below(4)));
        ds.samples.push_back(static_cast<double>(rng.below(4)));
        ds.labels.push_back(y);
        ds.difficulty_factor.push_back(0.0);
        const double score = 0.25 * static_cast<double>(rng.below(5));
        table.indices.push_back(idx);
        table.labels.push_back(y);
        table.scores.push_back(score);
        items.push_back({y, idx, score});
      }
    }
    const std::uint32_t m = static_cast<std::uint32_t>(1 + rng.below(smallest));
    const std::uint32_t kmax = m == 1 ? 1 : static_cast<std::uint32_t>((smallest - 1) / (m - 1));
    const std::uint32_t k = static_cast<std::uint32_t>(1 + rng.below(std::max<std::uint32_t>(kmax, 1)));

    auto picks = [](const SelectionResult& r) {
      oracle::Picks p;
      for (const auto& c : r.classes) p.push_back(c.indices);
      return p;
    };
    auto check = [&](const std::string& name, const oracle::Picks& got, const oracle::Picks& want) {
      auto& t = tally[name];
      ++t.first;
      if (got != want) ++t.second;
    };
    check("interval", picks(interval_select(table, k, m)), oracle::interval(items, k, m));
    check("min", picks(extreme_select(table, Extreme::min, m)), oracle::extreme(items, false, m));
    check("max", picks(extreme_select(table, Extreme::max, m)), oracle::extreme(items, true, m));
    check("herding", picks(herding_select(ds, m)), oracle::herding(ds, m));
    check("kcenter", picks(kcenter_select(ds, m)), oracle::kcenter(ds, m));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, t] : tally) {
    pass = pass && t.second == 0 && t.first >= 100;
    detail += (detail.empty() ? "" : ", ") + name + " " + std::to_string(t.first - t.second) + "/" + std::to_string(t.first);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 4

Outcome score_validity() {
  const ComparisonConfig cfg = [] {
    ComparisonConfig c = cli::comparison_config(cli::default_config());
    c.cache_dir = g_cache;
    return c;
  }();
  std::filesystem::create_directories(g_cache);
  const DatasetSplit split = split_by_parity(cli::generate_data(cli::default_config()));
  double worst = 1.0, sum = 0.0;
  std::size_t n = 0, below = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    ComparisonStats st;
    const DenoiserModel ref = reference_model(split, cfg, seed, st);
    const ScoreTable scores = score_dataset(ref, make_schedule(cfg.reference.schedule), split.train, cell_mc_config(cfg, seed), cfg.workers);
    for (std::uint32_t y = 0; y < split.train.class_count; ++y) {
      std::vector<double> f, s;
      for (std::size_t r = 0; r < scores.size(); ++r) {
        if (scores.labels[r] != y) continue;
        f.push_back(split.train.difficulty_factor[scores.indices[r]]);
        s.push_back(scores.scores[r]);
      }
      const double rho = oracle::spearman(f, s);
      worst = std::min(worst, rho);
      sum += rho;
      ++n;
      if (!(rho > 0.8)) ++below;
    }
  }
  return {below == 0, "Spearman over " + std::to_string(n) + " (seed, class) pairs: min " + fmt("%.3f", worst) + ", mean " +
                          fmt("%.3f", sum / n) + ", " + std::to_string(below) + " not above 0.8"};
}

// ---------------------------------------------------------------- 5, 6, 7

struct Grid {
  ComparisonConfig cfg;
  DatasetSplit split;
  ComparisonTable table;
  std::uint32_t budget = 0;
  std::uint32_t kmax = 0;
  std::uint32_t best_k = 0;
  bool ran = false;
};

Grid& grid() {
  static Grid g;
  return g;
}

void run_k_grid() {
  Grid& g = grid();
  if (g.ran) return;
  const auto doc = cli::default_config();
  g.cfg = cli::comparison_config(doc);
  g.cfg.cache_dir = g_cache;
  g.split = split_by_parity(cli::generate_data(doc));
  g.budget = g.cfg.budgets.front();
  // Widest spacing that still fits the smallest class.
  std::size_t smallest = SIZE_MAX;
  for (std::uint32_t y = 0; y < g.split.train.class_count; ++y) smallest = std::min(smallest, g.split.train.class_indices(y).size());
  g.kmax = static_cast<std::uint32_t>((smallest - 1) / (g.budget - 1));
  g.cfg.strategies = {"d2c"};
  g.cfg.budgets = {g.budget};
  g.cfg.k_grid.clear();
  for (std::uint32_t k = 1; k <= g.kmax; ++k) g.cfg.k_grid.push_back(k);
  g.table = run_comparison(g.split, g.cfg);
  double best = INFINITY;
  for (std::uint32_t k = 2; k < g.kmax; ++k) {
    const double v = g.table.mean_fd("d2c", g.budget, k);
    if (v < best) {
      best = v;
      g.best_k = k;
    }
  }
  g.ran = true;
}

Outcome interval_u_shape() {
  run_k_grid();
  const Grid& g = grid();
  std::string curve;
  for (std::uint32_t k = 1; k <= g.kmax; ++k) curve += (k == 1 ? "" : " ") + std::to_string(k) + ":" + fmt("%.4f", g.table.mean_fd("d2c", g.budget, k));
  const double first = g.table.mean_fd("d2c", g.budget, 1), last = g.table.mean_fd("d2c", g.budget, g.kmax);
  const double best = g.table.mean_fd("d2c", g.budget, g.best_k);
  return {best < first && best < last,
          "best interior k=" + std::to_string(g.best_k) + " FD " + fmt("%.4f", best) + " vs k=1 " + fmt("%.4f", first) + ", k=" +
              std::to_string(g.kmax) + " " + fmt("%.4f", last) + "; curve " + curve};
}

double variant_fd(const std::string& name) {
  Grid& g = grid();
  ComparisonConfig c = g.cfg;
  c.strategies = {name};
  c.k_grid = {g.best_k};
  const ComparisonTable t = run_comparison(g.split, c);
  const StrategyVariant v = variant_by_name(name);
  return t.mean_fd(name, g.budget, v.selection == Strategy::interval ? g.best_k : 0);
}

Outcome strategy_ordering() {
  run_k_grid();
  const double d2c = grid().table.mean_fd("d2c", grid().budget, grid().best_k);
  const double rnd = variant_fd("random"), mn = variant_fd("min"), mx = variant_fd("max");
  return {d2c <= rnd && d2c <= mn && d2c < mx, "D2C (k=" + std::to_string(grid().best_k) + ") " + fmt("%.4f", d2c) + ", random " +
                                                   fmt("%.4f", rnd) + ", min " + fmt("%.4f", mn) + ", max " + fmt("%.4f", mx)};
}

Outcome ablations() {
  run_k_grid();
  const double d2c = grid().table.mean_fd("d2c", grid().budget, grid().best_k);
  const double no_align = variant_fd("no-align"), only_class = variant_fd("only-class");
  return {no_align > d2c && only_class > d2c,
          "full " + fmt("%.4f", d2c) + ", no visual injection " + fmt("%.4f", no_align) + ", only class " + fmt("%.4f", only_class)};
}

// ---------------------------------------------------------------- 8

SampleSet gaussian(std::size_t n, std::size_t d, const std::vector<double>& mu, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  SampleSet s{d, std::vector<double>(n * d)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.values[i * d + j] = mu[j] + sigma * rng.normal();
  }
  return s;
}

Outcome frechet_metric() {
  const std::size_t n = 10000;
  const auto base = gaussian(n, 2, {0, 0}, 1.0, 1);
  const double shift = frechet_distance(base, gaussian(n, 2, {2, 1}, 1.0, 2));
  const double scale = frechet_distance(base, gaussian(n, 2, {0, 0}, 2.0, 3));
  const auto a3 = gaussian(500, 3, {0.5, -1, 2}, 0.7, 4), b3 = gaussian(500, 3, {0, 0, 1}, 1.3, 5);
  const double ab = frechet_distance(a3, b3), ba = frechet_distance(b3, a3);
  // Rotation about a random axis (Rodrigues) applied to both sets.
  Rng rng(6);
  double ax[3] = {rng.normal(), rng.normal(), rng.normal()};
  const double nrm = std::sqrt(ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]);
  for (double& v : ax) v /= nrm;
  const double th = 0.9, c = std::cos(th), s = std::sin(th);
  double R[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) R[i][j] = (i == j ? c : 0.0) + (1 - c) * ax[i] * ax[j];
  }
  R[0][1] -= s * ax[2];
  R[0][2] += s * ax[1];
  R[1][0] += s * ax[2];
  R[1][2] -= s * ax[0];
  R[2][0] -= s * ax[1];
  R[2][1] += s * ax[0];
  auto rotate = [&](const SampleSet& x) {
    SampleSet y{3, std::vector<double>(x.values.size())};
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int q = 0; q < 3; ++q) acc += R[r][q] * x.values[i * 3 + q];
        y.values[i * 3 + r] = acc;
      }
    }
    return y;
  };
  const double rot = frechet_distance(rotate(a3), rotate(b3));
  const double e_shift = std::abs(shift / 5.0 - 1.0), e_scale = std::abs(scale / 2.0 - 1.0);
  const bool pass = e_shift < 0.05 && e_scale < 0.05 && std::abs(ab - ba) < 1e-6 && std::abs(rot - ab) < 1e-6;
  return {pass, "shift " + fmt("%.4f", shift) + " (want 5), scale " + fmt("%.4f", scale) + " (want 2), asymmetry " + fmt("%.1e", std::abs(ab - ba)) +
                    ", rotation change " + fmt("%.1e", std::abs(rot - ab))};
}

// ---------------------------------------------------------------- 9

Outcome determinism_and_formats() {
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  auto raw = gen_gauss2d(3, 40, 0.5, 11);
  const DatasetSplit split = split_by_parity(raw);
  ModelDims d;
  d.classes = 3;
  d.dim = 2;
  d.d_model = 16;
  d.blocks = 2;
  d.align_layer = 1;
  d.tokens = 1;
  EncoderConfig enc;
  enc.text_length = 8;
  enc.d_text = 8;
  enc.tokens = 1;
  enc.d_feat = 8;
  d.d_text = enc.d_text;
  d.d_feat = enc.d_feat;
  TrainConfig tc;
  tc.steps = 150;
  tc.batch = 15;
  tc.lr = 2e-3;
  tc.seed = 4;
  McConfig mc;
  mc.strata = 4;
  mc.draws = 2;
  mc.seed = 8;

  auto pipeline = [&] {
    const DenoiserModel ref(d, PredictionKind::epsilon, 1);
    const ScoreTable scores = score_dataset(ref, NoiseSchedule::vp_continuous(), split.train, mc);  // default thread count
    const SelectionResult sel = select({Strategy::interval, 2, 5, 0}, split.train, &scores);
    const CondensedDataset c = build_condensed(split.train, sel, default_class_names(split.train), enc);
    const TrainResult tr = train(DenoiserModel(d, PredictionKind::epsilon, 2), c, tc);
    return std::make_tuple(serialize_scores(scores), selection_csv(sel), serialize_condensed(c), tr.ema.serialize());
  };
  const auto first = pipeline(), second = pipeline();
  expect(std::get<0>(first) == std::get<0>(second), "scores differ between runs");
  expect(std::get<1>(first) == std::get<1>(second), "selection differs between runs");
  expect(std::get<2>(first) == std::get<2>(second), "condensed set differs between runs");
  expect(std::get<3>(first) == std::get<3>(second), "trained model differs between runs");

  // Round-trips and corruption for each container.
  const auto dir = std::filesystem::temp_directory_path() / "d2c_acceptance_formats";
  std::filesystem::create_directories(dir);
  const auto& [score_bytes, sel_csv, cond_bytes, model_bytes] = first;
  struct Format {
    std::string name;
    std::vector<std::uint8_t> bytes;
    std::function<std::vector<std::uint8_t>(const std::filesystem::path&)> reread;
    std::size_t header;  // fixed fields before the payload
  };
  const std::vector<Format> formats = {
      {"D2CD dataset", serialize_dataset(split.train), [](const auto& p) { return serialize_dataset(read_dataset(p)); }, 0},
      {"D2CD condensed", cond_bytes, [](const auto& p) { return serialize_condensed(read_condensed(p)); }, 0},
      {"D2CM", model_bytes, [](const auto& p) { return DenoiserModel::load(p).serialize(); }, 4 + 4 + 1 + 8 * 4},
      {"D2CS", score_bytes, [](const auto& p) { return serialize_scores(read_scores(p)); }, 4 + 4 + 8 + 4 + 4 + 8 + 8},
  };
  for (const auto& f : formats) {
    const auto path = dir / "artifact.bin";
    write_file(path, f.bytes);
    expect(f.reread(path) == f.bytes, f.name + " round-trip is not bit-exact");
    // Flip one bit in every 7th payload byte in turn and require a checksum error.
    const std::size_t header = f.name.starts_with("D2CD") ? container_header_size(f.bytes) : f.header;
    std::size_t flips = 0, caught = 0;
    for (std::size_t i = header; i < f.bytes.size(); i += 7) {
      auto bad = f.bytes;
      bad[i] ^= 0x10;
      write_file(path, bad);
      ++flips;
      try {
        f.reread(path);
      } catch (const FormatError& e) {
        if (e.kind() == FormatErrorKind::checksum_mismatch) ++caught;
      }
    }
    expect(flips > 0 && caught == flips, f.name + ": " + std::to_string(caught) + "/" + std::to_string(flips) + " corruptions raised checksum errors");
  }
  std::filesystem::remove_all(dir);
  std::string detail = "scores, selection, condensed set and model identical across runs; 4 containers round-trip and reject payload flips";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------- 10

Outcome cfg_and_sampling() {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> cond(4), null(4);
    for (std::size_t i = 0; i < 4; ++i) {
      cond[i] = 1e3 * rng.normal();
      null[i] = trial % 2 == 0 ? 1e-3 * rng.normal() : 1e8 * rng.normal();
    }
    if (guided_prediction(cond, null, 1.0) != cond) ++mismatches;
  }

  // One class isolated far from the other; its samples should recover the center.
  Gauss2dOptions go;
  go.radius = 2.0;
  go.base_std = 0.5;
  const auto ds = gen_gauss2d(2, 400, 0.0, 21, go);
  EncoderConfig enc;
  enc.text_length = 8;
  enc.d_text = 16;
  enc.tokens = 1;
  enc.d_feat = 8;
  const CondensedDataset data = attach_all(ds, default_class_names(ds), enc);
  ModelDims d;
  d.classes = 2;
  d.dim = 2;
  d.d_model = 32;
  d.blocks = 2;
  d.align_layer = 1;
  d.tokens = 1;
  d.d_text = enc.d_text;
  d.d_feat = enc.d_feat;
  TrainConfig tc;
  tc.steps = 3000;
  tc.batch = 128;
  tc.lr = 2e-3;
  tc.ema_decay = 0.99;
  tc.seed = 3;
  const TrainResult tr = train(DenoiserModel(d, PredictionKind::epsilon, 5), data, tc);

  SampleOptions so;
  so.cfg_scale = 1.0;
  so.steps = 100;
  so.seed = 9;
  so.trained_p_null = tc.p_null;
  const std::size_t n = 2000;
  const auto out = sample(tr.ema, make_schedule(tc.schedule), 0, &data.texts[0], n, so);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += out.samples[2 * i];
    my += out.samples[2 * i + 1];
  }
  mx /= n;
  my /= n;
  // Class 0 sits at (radius, 0) with spread base_std per axis.
  const double err = std::hypot(mx - go.radius, my) / go.base_std;

  // At scale 1 the null branch must not matter: perturbing the null
  // embedding leaves the samples unchanged.
  DenoiserModel altered = tr.ema.clone();
  for (auto& p : altered.parameters()) {
    if (p.name == "null_emb") {
      for (double& v : p.tensor.mutable_values()) v += 0.75;
    }
  }
  const bool null_ignored = sample(altered, make_schedule(tc.schedule), 0, &data.texts[0], 64, so).samples ==
                            sample(tr.ema, make_schedule(tc.schedule), 0, &data.texts[0], 64, so).samples;
  return {mismatches == 0 && null_ignored && err < 0.15, "guided(s=1) == cond in " + std::to_string(10000 - mismatches) +
                                                             "/10000 trials; null branch ignored at s=1: " + (null_ignored ? "yes" : "no") +
                                                             "; class mean error " + fmt("%.3f", err) + " sigma over n=2000"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--cache") == 0 && i + 1 < argc) g_cache = argv[++i];
    else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    else {
      std::fprintf(stderr, "usage: %s [--cache DIR] [--only N]...\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradients},        {2, forward_moments},  {3, selection_oracles}, {4, score_validity},
      {5, interval_u_shape}, {6, strategy_ordering}, {7, ablations},        {8, frechet_metric},
      {9, determinism_and_formats}, {10, cfg_and_sampling},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && only.count(id) == 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %s  %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
