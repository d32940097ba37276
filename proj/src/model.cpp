#include "d2c/model.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "d2c/binio.hpp"
#include "d2c/rng.hpp"

namespace d2c {

namespace {

constexpr char kModelMagic[4] = {'D', '2', 'C', 'M'};
constexpr std::uint32_t kModelVersion = 1;

bool is_zero_init(const std::string& name) {
  // Modulation maps, the final head, and the fusion MLP's output layer start
  // at zero.
  static const char* suffixes[] = {".shift_w", ".shift_b", ".scale_w", ".scale_b", ".gate_w", ".gate_b"};
  for (const char* s : suffixes) {
    const std::size_t n = std::strlen(s);
    if (name.size() >= n && name.compare(name.size() - n, n, s) == 0) return true;
  }
  return name == "out_w" || name == "out_b" || name == "fuse_w2" || name == "fuse_b2";
}

}  // namespace

std::string to_string(PredictionKind k) { return k == PredictionKind::epsilon ? "epsilon" : "velocity"; }

PredictionKind prediction_kind_from_string(const std::string& s) {
  if (s == "epsilon") return PredictionKind::epsilon;
  if (s == "velocity") return PredictionKind::velocity;
  throw std::invalid_argument("unknown prediction kind '" + s + "'");
}

void ModelDims::validate() const {
  if (classes < 1 || dim < 1 || d_model < 2 || d_text < 1 || d_feat < 1 || blocks < 1 || tokens < 1) {
    throw std::invalid_argument("model dimensions must be positive (d_model >= 2)");
  }
  if (d_model % 2 != 0) throw std::invalid_argument("d_model must be even for sinusoidal time features");
  if (align_layer < 1 || align_layer > blocks) {
    throw std::invalid_argument("alignment layer " + std::to_string(align_layer) + " outside [1, " + std::to_string(blocks) + "]");
  }
}

DenoiserModel::DenoiserModel(ModelDims dims, PredictionKind kind, std::uint64_t seed) : dims_(dims), kind_(kind) {
  dims_.validate();
  const std::size_t D = dims_.dim, H = dims_.hidden(), dm = dims_.d_model, dt = dims_.d_text, df = dims_.d_feat;
  add_param("in_w", {D, H});
  add_param("in_b", {H});
  add_param("time_w1", {dm, dm});
  add_param("time_b1", {dm});
  add_param("time_w2", {dm, dm});
  add_param("time_b2", {dm});
  add_param("class_emb", {dims_.classes, dm});
  add_param("null_emb", {dm});
  add_param("conv_w", {3 * dt, dm});
  add_param("conv_b", {dm});
  add_param("fuse_w1", {dm, dm});
  add_param("fuse_b1", {dm});
  add_param("fuse_w2", {dm, dm});
  add_param("fuse_b2", {dm});
  for (std::uint32_t j = 0; j < dims_.blocks; ++j) {
    const std::string p = "block" + std::to_string(j);
    add_param(p + ".shift_w", {dm, H});
    add_param(p + ".shift_b", {H});
    add_param(p + ".scale_w", {dm, H});
    add_param(p + ".scale_b", {H});
    add_param(p + ".gate_w", {dm, H});
    add_param(p + ".gate_b", {H});
    add_param(p + ".mlp_w1", {H, H});
    add_param(p + ".mlp_b1", {H});
    add_param(p + ".mlp_w2", {H, H});
    add_param(p + ".mlp_b2", {H});
  }
  add_param("final.shift_w", {dm, H});
  add_param("final.shift_b", {H});
  add_param("final.scale_w", {dm, H});
  add_param("final.scale_b", {H});
  add_param("out_w", {H, D});
  add_param("out_b", {D});
  add_param("proj.lin_w", {dm, df});
  add_param("proj.lin_b", {df});
  add_param("proj.w1", {dm, dm});
  add_param("proj.b1", {dm});
  add_param("proj.w2", {dm, df});
  add_param("proj.b2", {df});
  initialize(seed);
}

Tensor& DenoiserModel::add_param(const std::string& name, Shape shape) {
  params_.push_back({name, Tensor::zeros(std::move(shape), true)});
  return params_.back().tensor;
}

void DenoiserModel::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, t] = params_[i];
    auto w = t.mutable_values();
    if (is_zero_init(name)) continue;
    Rng rng(derive_seed(seed, hash_string(name)));
    if (name == "class_emb" || name == "null_emb") {
      for (double& v : w) v = quantize(0.02 * rng.normal());
    } else if (t.rank() == 2) {
      // Xavier-uniform.
      const double bound = std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1)));
      for (double& v : w) v = quantize(bound * (2.0 * rng.uniform() - 1.0));
    }
    // Remaining 1-D tensors are biases and stay zero.
  }
}

Tensor& DenoiserModel::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Tensor& DenoiserModel::param(const std::string& name) const {
  return const_cast<DenoiserModel*>(this)->param(name);
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

Tensor DenoiserModel::fuse_conditions(Tape& tape, std::span<const ConditionBundle> bundles, ConditionBranches branches) const {
  const std::size_t n = bundles.size();
  const std::size_t C = dims_.classes, dm = dims_.d_model, dt = dims_.d_text;
  if (n == 0) throw DimensionError("fuse_conditions on an empty batch");

  // Unique prompt embeddings among the non-null bundles.
  std::vector<const TextEmbedding*> texts;
  std::vector<std::size_t> text_row(n, 0);
  std::vector<double> onehot(n * C, 0.0), nullcol(n, 0.0);
  bool any_null = false, any_live = false;
  for (std::size_t i = 0; i < n; ++i) {
    const ConditionBundle& b = bundles[i];
    if (b.null) {
      nullcol[i] = 1.0;
      any_null = true;
      continue;
    }
    any_live = true;
    if (b.label >= C) throw std::out_of_range("class label " + std::to_string(b.label) + " out of range [0, " + std::to_string(C) + ")");
    onehot[i * C + b.label] = 1.0;
    if (!branches.text) continue;
    if (b.text == nullptr) throw std::invalid_argument("condition bundle lacks a text embedding");
    const TextEmbedding& te = *b.text;
    if (te.width != dt || te.tokens.size() != te.length * te.width || te.mask.size() != te.length) {
      throw DimensionError("text embedding shape does not match d_text=" + std::to_string(dt));
    }
    if (te.active_tokens() == 0) throw std::invalid_argument("text mask is all false (empty prompt)");
    std::size_t k = 0;
    while (k < texts.size() && texts[k] != b.text) ++k;
    if (k == texts.size()) texts.push_back(b.text);
    text_row[i] = k;
  }

  Tensor fused;
  if (any_live && branches.text) {
    // im2col over every unique prompt: row p holds tokens p-1, p, p+1 with
    // masked or out-of-range neighbours zeroed.
    std::size_t total_rows = 0;
    for (const auto* te : texts) total_rows += te->length;
    std::vector<double> cols(total_rows * 3 * dt, 0.0);
    std::vector<double> pool(texts.size() * total_rows, 0.0);
    std::size_t row0 = 0;
    for (std::size_t u = 0; u < texts.size(); ++u) {
      const TextEmbedding& te = *texts[u];
      const double inv = 1.0 / static_cast<double>(te.active_tokens());
      for (std::size_t p = 0; p < te.length; ++p) {
        for (int off = -1; off <= 1; ++off) {
          const long q = static_cast<long>(p) + off;
          if (q < 0 || q >= static_cast<long>(te.length) || !te.mask[static_cast<std::size_t>(q)]) continue;
          for (std::size_t c = 0; c < dt; ++c) {
            cols[(row0 + p) * 3 * dt + static_cast<std::size_t>(off + 1) * dt + c] = te.tokens[static_cast<std::size_t>(q) * dt + c];
          }
        }
        if (te.mask[p]) pool[u * total_rows + row0 + p] = inv;
      }
      row0 += te.length;
    }
    const Tensor im2col = Tensor::from({total_rows, 3 * dt}, std::move(cols));
    const Tensor pooling = Tensor::from({texts.size(), total_rows}, std::move(pool));
    const Tensor conv = tape.linear(im2col, param("conv_w"), param("conv_b"));
    const Tensor pooled = tape.matmul(pooling, conv);  // U x d_model
    const Tensor hidden = tape.silu(tape.linear(pooled, param("fuse_w1"), param("fuse_b1")));
    const Tensor per_text = tape.add(tape.linear(hidden, param("fuse_w2"), param("fuse_b2")), pooled);
    std::vector<double> select(n * texts.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!bundles[i].null) select[i * texts.size() + text_row[i]] = 1.0;
    }
    fused = tape.matmul(Tensor::from({n, texts.size()}, std::move(select)), per_text);
  }
  if (any_live && branches.label) {
    const Tensor labels = tape.matmul(Tensor::from({n, C}, std::move(onehot)), param("class_emb"));
    fused = fused.defined() ? tape.add(fused, labels) : labels;
  }
  if (any_null) {
    const Tensor null_row = tape.reshape(param("null_emb"), {1, dm});
    const Tensor nulls = tape.matmul(Tensor::from({n, 1}, std::move(nullcol)), null_row);
    fused = fused.defined() ? tape.add(fused, nulls) : nulls;
  }
  if (!fused.defined()) fused = Tensor::zeros({n, dm});
  return fused;
}

Tensor time_features(std::span<const double> times, std::size_t width) {
  const std::size_t half = width / 2;
  std::vector<double> out(times.size() * width);
  for (std::size_t r = 0; r < times.size(); ++r) {
    const double t = 1000.0 * times[r];
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      out[r * width + i] = std::cos(t * freq);
      out[r * width + half + i] = std::sin(t * freq);
    }
  }
  return Tensor::from({times.size(), width}, std::move(out));
}

ForwardResult DenoiserModel::forward(Tape& tape, const Tensor& x_t, std::span<const double> times, const Tensor& conditions) const {
  const std::size_t D = dims_.dim, dm = dims_.d_model;
  if (x_t.rank() != 2 || x_t.dim(1) != D) throw DimensionError("forward expects n x " + std::to_string(D) + " input, got " + shape_string(x_t.shape()));
  const std::size_t n = x_t.dim(0);
  if (times.size() != n) throw DimensionError("forward: time count does not match batch");
  if (conditions.rank() != 2 || conditions.dim(0) != n || conditions.dim(1) != dm) {
    throw DimensionError("forward: conditions must be " + std::to_string(n) + " x " + std::to_string(dm) + ", got " +
                         shape_string(conditions.shape()));
  }
  for (double v : x_t.values()) {
    if (!std::isfinite(v)) throw NumericError("forward: non-finite input");
  }

  const Tensor temb = time_features(times, dm);
  const Tensor t_hidden = tape.linear(tape.silu(tape.linear(temb, param("time_w1"), param("time_b1"))), param("time_w2"), param("time_b2"));
  const Tensor cond = tape.silu(tape.add(t_hidden, conditions));

  ForwardResult out;
  Tensor h = tape.linear(x_t, param("in_w"), param("in_b"));
  for (std::uint32_t j = 0; j < dims_.blocks; ++j) {
    const std::string p = "block" + std::to_string(j);
    const Tensor shift = tape.linear(cond, param(p + ".shift_w"), param(p + ".shift_b"));
    const Tensor scale = tape.linear(cond, param(p + ".scale_w"), param(p + ".scale_b"));
    const Tensor gate = tape.linear(cond, param(p + ".gate_w"), param(p + ".gate_b"));
    const Tensor modulated = tape.add(tape.add(h, tape.mul(h, scale)), shift);
    const Tensor inner = tape.silu(tape.linear(modulated, param(p + ".mlp_w1"), param(p + ".mlp_b1")));
    const Tensor update = tape.linear(inner, param(p + ".mlp_w2"), param(p + ".mlp_b2"));
    h = tape.add(h, tape.mul(gate, update));
    if (j + 1 == dims_.align_layer) out.features = tape.reshape(h, {n * dims_.tokens, dm});
  }
  const Tensor shift = tape.linear(cond, param("final.shift_w"), param("final.shift_b"));
  const Tensor scale = tape.linear(cond, param("final.scale_w"), param("final.scale_b"));
  const Tensor modulated = tape.add(tape.add(h, tape.mul(h, scale)), shift);
  out.prediction = tape.linear(tape.silu(modulated), param("out_w"), param("out_b"));
  return out;
}

Tensor DenoiserModel::project_features(Tape& tape, const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != dims_.d_model) {
    throw DimensionError("project_features expects rows of width " + std::to_string(dims_.d_model) + ", got " + shape_string(features.shape()));
  }
  const Tensor affine = tape.linear(features, param("proj.lin_w"), param("proj.lin_b"));
  const Tensor hidden = tape.silu(tape.linear(features, param("proj.w1"), param("proj.b1")));
  return tape.add(affine, tape.linear(hidden, param("proj.w2"), param("proj.b2")));
}

void DenoiserModel::configure_identity_projection() {
  if (dims_.d_model != dims_.d_feat) throw DimensionError("identity projection needs d_model == d_feat");
  for (const char* name : {"proj.lin_b", "proj.w1", "proj.b1", "proj.w2", "proj.b2"}) {
    for (double& v : param(name).mutable_values()) v = 0.0;
  }
  auto w = param("proj.lin_w").mutable_values();
  for (std::size_t i = 0; i < dims_.d_model; ++i) {
    for (std::size_t j = 0; j < dims_.d_feat; ++j) w[i * dims_.d_feat + j] = i == j ? 1.0 : 0.0;
  }
}

DenoiserModel DenoiserModel::clone() const {
  DenoiserModel copy(*this);
  for (auto& p : copy.params_) p.tensor = p.tensor.clone(true);
  return copy;
}

void DenoiserModel::copy_values_from(const DenoiserModel& other) {
  if (!(other.dims_ == dims_)) throw DimensionError("copy_values_from: model dimensions differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_values();
    const auto src = other.params_[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void DenoiserModel::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::uint8_t> DenoiserModel::serialize() const {
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kModelMagic), 4});
  w.u32(kModelVersion);
  w.u8(static_cast<std::uint8_t>(kind_));
  for (std::uint32_t v : {dims_.classes, dims_.dim, dims_.d_model, dims_.d_text, dims_.d_feat, dims_.blocks, dims_.tokens, dims_.align_layer}) {
    w.u32(v);
  }
  for (const auto& p : params_) {
    for (double v : p.tensor.values()) w.f32(static_cast<float>(v));
  }
  w.u64(fnv1a64(w.data()));
  return w.take();
}

DenoiserModel DenoiserModel::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kModelMagic, 4) != 0) throw FormatError(FormatErrorKind::bad_magic, "not a D2CM checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw FormatError(FormatErrorKind::unsupported_version, "D2CM version " + std::to_string(version) + " (supported: 1)");
  }
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw FormatError(FormatErrorKind::malformed, "unknown prediction kind " + std::to_string(kind));
  ModelDims d;
  d.classes = r.u32();
  d.dim = r.u32();
  d.d_model = r.u32();
  d.d_text = r.u32();
  d.d_feat = r.u32();
  d.blocks = r.u32();
  d.tokens = r.u32();
  d.align_layer = r.u32();
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::malformed, e.what());
  }
  DenoiserModel m(d, static_cast<PredictionKind>(kind), 0);
  std::size_t expected = 0;
  for (const auto& p : m.params_) expected += p.tensor.size();
  if (r.remaining() < expected * 4 + 8) {
    throw FormatError(FormatErrorKind::truncated, "checkpoint payload shorter than its dimensions require");
  }
  for (auto& p : m.params_) {
    for (double& v : p.tensor.mutable_values()) v = static_cast<double>(r.f32());
  }
  const std::size_t body = r.position();
  const std::uint64_t checksum = r.u64();
  if (fnv1a64(bytes.subspan(0, body)) != checksum) throw FormatError(FormatErrorKind::checksum_mismatch, "checkpoint checksum mismatch");
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::malformed, "trailing bytes after checkpoint");
  return m;
}

void DenoiserModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }
DenoiserModel DenoiserModel::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::uint64_t DenoiserModel::fingerprint() const {
  const auto bytes = serialize();
  return fnv1a64(bytes);
}

std::size_t TextEmbedding::active_tokens() const {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

}  // namespace d2c
