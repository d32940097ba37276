#include "d2c/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "d2c/rng.hpp"
#include "d2c/scorer.hpp"

namespace d2c {

namespace {

constexpr std::uint64_t kBatchTag = 0x6261746368ULL;
constexpr std::uint64_t kSampleTag = 0x73616d706c65ULL;

void check_pairing(PredictionKind kind, ScheduleKind sched) {
  const bool flow = sched == ScheduleKind::linear_flow;
  if (kind == PredictionKind::velocity && !flow) throw std::invalid_argument("velocity prediction pairs only with the linear-flow schedule");
  if (kind == PredictionKind::epsilon && flow) throw std::invalid_argument("the linear-flow schedule needs velocity prediction");
}

void check_compatible(const DenoiserModel& model, const CondensedDataset& data) {
  const ModelDims& d = model.dims();
  auto fail = [](const std::string& what) { throw DimensionError("model/data mismatch: " + what); };
  if (data.dim != d.dim) fail("sample dim " + std::to_string(data.dim) + " vs " + std::to_string(d.dim));
  if (data.class_count > d.classes) fail("classes " + std::to_string(data.class_count) + " vs " + std::to_string(d.classes));
  if (data.encoders.tokens != d.tokens) fail("visual tokens " + std::to_string(data.encoders.tokens) + " vs " + std::to_string(d.tokens));
  if (data.encoders.d_feat != d.d_feat) fail("d_feat " + std::to_string(data.encoders.d_feat) + " vs " + std::to_string(d.d_feat));
  if (data.encoders.d_text != d.d_text) fail("d_text " + std::to_string(data.encoders.d_text) + " vs " + std::to_string(d.d_text));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(p_null >= 0.0 && p_null < 1.0)) throw std::invalid_argument("p_null must lie in [0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("ema_decay must lie in [0, 1]");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (!text_branch && !class_branch) throw std::invalid_argument("at least one of the text and class branches must be on");
  check_pairing(prediction, schedule);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch", batch},
          {"lambda", lambda},
          {"prediction", to_string(prediction)},
          {"schedule", to_string(schedule)},
          {"p_null", p_null},
          {"ema_decay", ema_decay},
          {"lr", lr},
          {"seed", seed},
          {"alignment", alignment},
          {"text_branch", text_branch},
          {"class_branch", class_branch}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<std::uint64_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.prediction = prediction_kind_from_string(j.at("prediction").get<std::string>());
  c.schedule = schedule_kind_from_string(j.at("schedule").get<std::string>());
  c.p_null = j.at("p_null").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.lr = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.alignment = j.at("alignment").get<bool>();
  c.text_branch = j.at("text_branch").get<bool>();
  c.class_branch = j.at("class_branch").get<bool>();
  return c;
}

Tensor negative_mean_cosine(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw DimensionError("cosine rows need matching 2-D shapes, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const Tensor dots = tape.sum(tape.mul(tape.row_normalize(a), tape.row_normalize(b)));
  return tape.scale(dots, -1.0 / static_cast<double>(a.dim(0)));
}

LossTerms compute_loss(Tape& tape, const DenoiserModel& model, const TrainBatch& batch, double lambda, ConditionBranches branches) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  const std::size_t n = batch.x_t.dim(0);
  const Tensor cond = model.fuse_conditions(tape, batch.bundles, branches);
  const ForwardResult fr = model.forward(tape, batch.x_t, batch.times, cond);
  const Tensor err = tape.sub(fr.prediction, batch.target);
  const Tensor l_diff = tape.scale(tape.sum(tape.mul(err, err)), 1.0 / static_cast<double>(n));
  const Tensor l_proj = negative_mean_cosine(tape, model.project_features(tape, fr.features), batch.visual);

  LossTerms out;
  out.diff = l_diff.item();
  out.proj = l_proj.item();
  out.total = lambda > 0.0 ? tape.add(l_diff, tape.scale(l_proj, lambda)) : l_diff;
  out.total_value = out.total.item();
  return out;
}

NoiseSchedule make_schedule(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::vp_continuous: return NoiseSchedule::vp_continuous();
    case ScheduleKind::linear_flow: return NoiseSchedule::linear_flow();
    case ScheduleKind::ddpm_discrete: return NoiseSchedule::ddpm_linear();
  }
  throw std::invalid_argument("unknown schedule kind");
}

TrainBatch draw_batch(const DenoiserModel& model, const NoiseSchedule& sched, const CondensedDataset& data, const TrainConfig& cfg,
                      std::uint64_t step) {
  const std::size_t N = data.size(), n = cfg.batch, D = data.dim;
  if (n > N) throw std::invalid_argument("batch " + std::to_string(n) + " exceeds dataset size " + std::to_string(N));
  Rng rng(derive_seed(cfg.seed, kBatchTag, step));

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t j = 0; j < n; ++j) std::swap(order[j], order[j + static_cast<std::size_t>(rng.below(N - j))]);
  // Latin-hypercube times: one draw in each of n equal strata, strata shuffled.
  std::vector<std::size_t> strata(n);
  std::iota(strata.begin(), strata.end(), 0);
  for (std::size_t j = n; j > 1; --j) std::swap(strata[j - 1], strata[static_cast<std::size_t>(rng.below(j))]);

  TrainBatch b;
  std::vector<double> xt(n * D), target(n * D), visual;
  const std::size_t h = data.encoders.tokens, df = data.encoders.d_feat;
  visual.reserve(n * h * df);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = order[j];
    double t = (static_cast<double>(strata[j]) + rng.uniform()) / static_cast<double>(n);
    if (sched.discrete()) t = std::min(static_cast<double>(sched.steps()), 1.0 + std::floor(t * static_cast<double>(sched.steps())));
    const PerturbedSample p = perturb(sched, data.sample(i), t, rng);
    const auto tgt = denoising_target(model.prediction_kind(), data.sample(i), p.epsilon);
    std::copy(p.x_t.begin(), p.x_t.end(), xt.begin() + static_cast<std::ptrdiff_t>(j * D));
    std::copy(tgt.begin(), tgt.end(), target.begin() + static_cast<std::ptrdiff_t>(j * D));
    b.times.push_back(sched.network_time(t));
    ConditionBundle c;
    c.label = data.labels[i];
    c.text = &data.texts[data.labels[i]];
    c.null = rng.uniform() < cfg.p_null;
    b.bundles.push_back(c);
    visual.insert(visual.end(), data.visual[i].tokens.begin(), data.visual[i].tokens.end());
  }
  b.x_t = Tensor::from({n, D}, std::move(xt));
  b.target = Tensor::from({n, D}, std::move(target));
  b.visual = Tensor::from({n * h, df}, std::move(visual));
  return b;
}

std::string TrainLog::csv() const {
  std::string out = "step,L_diff,L_proj,L_total,grad_norm\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.l_diff, r.l_proj, r.l_total, r.grad_norm);
    out += buf;
  }
  return out;
}

TrainResult train(const DenoiserModel& model, const CondensedDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  check_compatible(model, data);
  if (model.prediction_kind() != cfg.prediction) throw std::invalid_argument("model prediction kind differs from the training config");
  if (cfg.batch > data.size()) throw std::invalid_argument("batch " + std::to_string(cfg.batch) + " exceeds dataset size " + std::to_string(data.size()));

  TrainResult res{model.clone(), model.clone(), {}};
  if (cfg.steps == 0) return res;
  const NoiseSchedule sched = make_schedule(cfg.schedule);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam adam(res.model.parameters(), ac);
  const double lambda = cfg.effective_lambda();
  const auto start = std::chrono::steady_clock::now();

  for (std::uint64_t step = 0; step < cfg.steps; ++step) {
    const TrainBatch batch = draw_batch(res.model, sched, data, cfg, step);
    Tape tape;
    const LossTerms loss = compute_loss(tape, res.model, batch, lambda, cfg.branches());
    if (!std::isfinite(loss.total_value) || !std::isfinite(loss.diff) || !std::isfinite(loss.proj)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "step %llu: non-finite loss (L_diff=%g, L_proj=%g)", static_cast<unsigned long long>(step), loss.diff, loss.proj);
      throw NumericError(buf);
    }
    res.model.zero_grad();
    tape.backward(loss.total);
    double gn = 0.0;
    for (const auto& p : res.model.parameters()) {
      for (double g : p.tensor.grad()) gn += g * g;
    }
    try {
      adam.step();
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    auto& live = res.model.parameters();
    auto& avg = res.ema.parameters();
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto src = live[i].tensor.values();
      auto dst = avg[i].tensor.mutable_values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = quantize(cfg.ema_decay * dst[k] + (1.0 - cfg.ema_decay) * src[k]);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.log.rows.push_back({step, loss.diff, loss.proj, loss.total_value, std::sqrt(gn), secs});
  }
  return res;
}

std::vector<double> guided_prediction(std::span<const double> cond, std::span<const double> null, double scale) {
  std::vector<double> out(cond.begin(), cond.end());
  if (scale == 1.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize(null[i] + scale * (cond[i] - null[i]));
  return out;
}

SampleResult sample(const DenoiserModel& model, const NoiseSchedule& sched, std::uint32_t label, const TextEmbedding* text, std::size_t n,
                    const SampleOptions& opts) {
  if (!(opts.cfg_scale >= 1.0)) throw std::invalid_argument("cfg_scale must be >= 1");
  if (n == 0) throw std::invalid_argument("sample count must be positive");
  if (opts.steps == 0 && !sched.discrete()) throw std::invalid_argument("sampling needs at least one step");
  check_pairing(model.prediction_kind(), sched.kind());
  const std::size_t D = model.dims().dim;

  SampleResult res;
  if (opts.cfg_scale > 1.0 && opts.trained_p_null && *opts.trained_p_null == 0.0) {
    res.warnings.push_back("cfg_scale > 1 but the model was trained without condition dropout; the null embedding is untrained");
  }
  const bool guided = opts.cfg_scale != 1.0;

  Tape consts(false);
  ConditionBundle cb;
  cb.label = label;
  cb.text = text;
  ConditionBundle nb;
  nb.null = true;
  const Tensor cond = model.fuse_conditions(consts, std::vector<ConditionBundle>(n, cb), opts.branches);
  const Tensor null = guided ? model.fuse_conditions(consts, std::vector<ConditionBundle>(n, nb), opts.branches) : Tensor();

  Rng rng(derive_seed(opts.seed, kSampleTag, label));
  std::vector<double> x(n * D);
  for (double& v : x) v = rng.normal();

  auto predict = [&](double net_t) {
    Tape tape(false);
    const std::vector<double> times(n, net_t);
    const Tensor xt = Tensor::from({n, D}, x);
    const Tensor c = model.forward(tape, xt, times, cond).prediction;
    if (!guided) return std::vector<double>(c.values().begin(), c.values().end());
    const Tensor u = model.forward(tape, xt, times, null).prediction;
    return guided_prediction(c.values(), u.values(), opts.cfg_scale);
  };

  if (sched.kind() == ScheduleKind::linear_flow) {
    for (std::size_t k = 0; k < opts.steps; ++k) {
      const double t = 1.0 - static_cast<double>(k) / static_cast<double>(opts.steps);
      const double t_next = 1.0 - static_cast<double>(k + 1) / static_cast<double>(opts.steps);
      const auto v = predict(t);
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = euler_flow_step({x.data() + r * D, D}, t, {v.data() + r * D, D}, t - t_next);
        std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(r * D));
      }
    }
  } else {
    const NoiseSchedule chain = sched.discrete() ? sched : sched.discretize(opts.steps);
    for (std::size_t t = chain.steps(); t >= 1; --t) {
      const auto eps = predict(chain.network_time(static_cast<double>(t)));
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = ddpm_reverse_step(chain, {x.data() + r * D, D}, t, {eps.data() + r * D, D}, rng);
        std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(r * D));
      }
    }
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("sampling produced non-finite values");
  }
  res.samples = std::move(x);
  return res;
}

}  // namespace d2c
