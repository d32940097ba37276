#include "d2c/scorer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "d2c/binio.hpp"
#include "d2c/parallel.hpp"
#include "d2c/rng.hpp"

namespace d2c {

namespace {

constexpr char kScoreMagic[4] = {'D', '2', 'C', 'S'};
constexpr std::uint32_t kScoreVersion = 1;

bool output_head_is_zero(const DenoiserModel& model) {
  for (const char* name : {"out_w", "out_b"}) {
    for (double v : model.param(name).values()) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

void McConfig::validate() const {
  if (strata < 1 || draws < 1) throw std::invalid_argument("MC config needs at least one stratum and one draw");
}

std::vector<double> stratum_times(const NoiseSchedule& sched, std::uint32_t strata) {
  std::vector<double> out(strata);
  for (std::uint32_t i = 0; i < strata; ++i) {
    const double mid = (i + 0.5) / strata;
    if (sched.discrete()) {
      const double T = static_cast<double>(sched.steps());
      out[i] = std::min(T, 1.0 + std::floor(mid * T));
    } else {
      out[i] = mid;
    }
  }
  return out;
}

std::vector<double> denoising_target(PredictionKind kind, std::span<const double> x0, std::span<const double> eps) {
  std::vector<double> out(eps.begin(), eps.end());
  if (kind == PredictionKind::velocity) {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] -= x0[d];
  }
  return out;
}

double score_sample(const DenoiserModel& model, const NoiseSchedule& sched, std::span<const double> x, const ConditionBundle& cond,
                    const McConfig& mc, std::uint64_t seed, ConditionBranches branches) {
  mc.validate();
  const std::size_t D = model.dims().dim;
  if (x.size() != D) throw DimensionError("score_sample: sample width " + std::to_string(x.size()) + " != model dim " + std::to_string(D));
  const std::size_t rows = static_cast<std::size_t>(mc.strata) * mc.draws;
  const std::vector<double> times = stratum_times(sched, mc.strata);

  Rng rng(seed);
  std::vector<double> xt(rows * D), target(rows * D), net_t(rows);
  for (std::uint32_t i = 0; i < mc.strata; ++i) {
    for (std::uint32_t j = 0; j < mc.draws; ++j) {
      const std::size_t r = static_cast<std::size_t>(i) * mc.draws + j;
      const PerturbedSample p = perturb(sched, x, times[i], rng);
      const std::vector<double> tgt = denoising_target(model.prediction_kind(), x, p.epsilon);
      std::copy(p.x_t.begin(), p.x_t.end(), xt.begin() + static_cast<std::ptrdiff_t>(r * D));
      std::copy(tgt.begin(), tgt.end(), target.begin() + static_cast<std::ptrdiff_t>(r * D));
      net_t[r] = sched.network_time(times[i]);
    }
  }

  Tape tape(false);
  const std::vector<ConditionBundle> bundles(rows, cond);
  const Tensor c = model.fuse_conditions(tape, bundles, branches);
  const Tensor pred = model.forward(tape, Tensor::from({rows, D}, std::move(xt)), net_t, c).prediction;

  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double e = target[r * D + d] - pred[r * D + d];
      sq += e * e;
    }
    total += sq;
  }
  const double s = total / static_cast<double>(rows);
  if (!std::isfinite(s)) throw ScoreError("non-finite denoising loss");
  return s;
}

std::uint64_t sample_seed(std::uint64_t base_seed, std::span<const double> x, std::uint32_t label) {
  std::uint64_t h = fnv1a64({reinterpret_cast<const std::uint8_t*>(x.data()), x.size_bytes()});
  h = fnv1a64({reinterpret_cast<const std::uint8_t*>(&label), sizeof label}, h);
  return derive_seed(base_seed, h);
}

ScoreTable score_dataset(const DenoiserModel& model, const NoiseSchedule& sched, const LabeledDataset& ds, const McConfig& mc,
                         std::size_t workers) {
  mc.validate();
  ds.validate();
  if (ds.dim != model.dims().dim) throw DimensionError("dataset dim " + std::to_string(ds.dim) + " != model dim " + std::to_string(model.dims().dim));
  if (ds.class_count > model.dims().classes) throw DimensionError("dataset has more classes than the reference model");

  ScoreTable table;
  table.mc = mc;
  table.model_fingerprint = model.fingerprint();
  const std::size_t n = ds.size();
  table.indices.resize(n);
  table.labels = ds.labels;
  table.scores.assign(n, 0.0);
  if (output_head_is_zero(model)) table.warnings.push_back("reference model output head is all zero; it looks untrained");

  parallel_for(
      n,
      [&](std::size_t i) {
        table.indices[i] = static_cast<std::uint32_t>(i);
        ConditionBundle cond;
        cond.label = ds.labels[i];
        try {
          table.scores[i] = score_sample(model, sched, ds.sample(i), cond, mc, sample_seed(mc.seed, ds.sample(i), ds.labels[i]));
        } catch (const ScoreError& e) {
          throw ScoreError("sample " + std::to_string(i) + ": " + e.what());
        }
      },
      workers == 0 ? worker_count() : workers);
  return table;
}

std::string fingerprint_warning(const ScoreTable& table, const DenoiserModel& model) {
  const std::uint64_t fp = model.fingerprint();
  if (fp == table.model_fingerprint) return {};
  return "score table was produced by model " + hex64(table.model_fingerprint) + ", not " + hex64(fp);
}

std::vector<std::uint8_t> serialize_scores(const ScoreTable& t) {
  if (t.indices.size() != t.scores.size() || t.labels.size() != t.scores.size()) throw std::invalid_argument("score table columns differ in length");
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kScoreMagic), 4});
  w.u32(kScoreVersion);
  w.u64(t.size());
  w.u32(t.mc.strata);
  w.u32(t.mc.draws);
  w.u64(t.mc.seed);
  w.u64(t.model_fingerprint);
  for (std::size_t i = 0; i < t.size(); ++i) {
    w.u32(t.indices[i]);
    w.u32(t.labels[i]);
    w.f64(t.scores[i]);
  }
  w.u64(fnv1a64(w.data()));
  return w.take();
}

ScoreTable deserialize_scores(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (std::memcmp(r.bytes(4).data(), kScoreMagic, 4) != 0) throw FormatError(FormatErrorKind::bad_magic, "not a D2CS score table");
  const std::uint32_t version = r.u32();
  if (version != kScoreVersion) throw FormatError(FormatErrorKind::unsupported_version, "D2CS version " + std::to_string(version) + " (supported: 1)");
  ScoreTable t;
  const std::uint64_t n = r.u64();
  t.mc.strata = r.u32();
  t.mc.draws = r.u32();
  t.mc.seed = r.u64();
  t.model_fingerprint = r.u64();
  if (n > r.remaining() / 16) throw FormatError(FormatErrorKind::truncated, "score table shorter than its record count");
  t.indices.resize(n);
  t.labels.resize(n);
  t.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.indices[i] = r.u32();
    t.labels[i] = r.u32();
    t.scores[i] = r.f64();
  }
  const std::size_t body = r.position();
  if (fnv1a64(bytes.subspan(0, body)) != r.u64()) throw FormatError(FormatErrorKind::checksum_mismatch, "score table checksum mismatch");
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::malformed, "trailing bytes after score table");
  return t;
}

void write_scores(const std::filesystem::path& path, const ScoreTable& t) { write_file(path, serialize_scores(t)); }
ScoreTable read_scores(const std::filesystem::path& path) { return deserialize_scores(read_file(path)); }

std::string scores_csv(const ScoreTable& t) {
  std::string out = "index,label,score\n";
  char buf[96];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%u,%u,%.17g\n", t.indices[i], t.labels[i], t.scores[i]);
    out += buf;
  }
  return out;
}

}  // namespace d2c
