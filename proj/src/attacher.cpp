#include "d2c/attacher.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "d2c/binio.hpp"
#include "d2c/container.hpp"
#include "d2c/rng.hpp"

namespace d2c {

namespace {

constexpr std::uint64_t kVisualTag = 0x76697375616cULL;

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Gaussian draws scaled to unit length, accumulated in double.
std::vector<double> unit_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

template <typename T>
std::vector<float> to_f32(const std::vector<T>& v) {
  return std::vector<float>(v.begin(), v.end());
}

}  // namespace

void EncoderConfig::validate() const {
  if (text_length < 1 || d_text < 1 || tokens < 1 || d_feat < 1) throw std::invalid_argument("encoder dimensions must be positive");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"text_length", text_length}, {"d_text", d_text}, {"tokens", tokens}, {"d_feat", d_feat}, {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig e;
  e.text_length = j.at("text_length").get<std::size_t>();
  e.d_text = j.at("d_text").get<std::size_t>();
  e.tokens = j.at("tokens").get<std::size_t>();
  e.d_feat = j.at("d_feat").get<std::size_t>();
  e.seed = j.at("seed").get<std::uint64_t>();
  return e;
}

std::string class_prompt(const std::string& class_name) { return "a photo of a " + class_name; }

TextEmbedding text_encode(const std::string& class_name, std::size_t d_text, std::size_t length, std::uint64_t seed, std::uint32_t class_id) {
  if (split_words(class_name).empty()) throw std::invalid_argument("class name is empty");
  if (d_text < 1 || length < 1) throw std::invalid_argument("text encoder dimensions must be positive");
  TextEmbedding te;
  te.class_id = class_id;
  te.prompt = class_prompt(class_name);
  te.length = length;
  te.width = d_text;
  const auto words = split_words(te.prompt);
  if (words.size() > length) {
    throw std::invalid_argument("prompt '" + te.prompt + "' has " + std::to_string(words.size()) + " tokens, limit is " + std::to_string(length));
  }
  te.tokens.assign(length * d_text, 0.0f);
  te.mask.assign(length, 0);
  for (std::size_t p = 0; p < words.size(); ++p) {
    Rng rng(derive_seed(seed, hash_string(words[p])));
    const auto v = unit_vector(rng, d_text);
    std::copy(v.begin(), v.end(), te.tokens.begin() + static_cast<std::ptrdiff_t>(p * d_text));
    te.mask[p] = 1;
  }
  return te;
}

VisualTokens visual_encode(std::span<const double> x, std::size_t h, std::size_t d_feat, std::uint64_t seed, std::uint64_t sample_id) {
  if (h < 1 || d_feat < 1) throw std::invalid_argument("visual encoder dimensions must be positive");
  if (x.empty() || x.size() % h != 0) {
    throw std::invalid_argument("sample width " + std::to_string(x.size()) + " is not divisible by token count " + std::to_string(h));
  }
  const std::size_t p = x.size() / h;
  Rng rng(derive_seed(seed, kVisualTag, p, d_feat));
  std::vector<double> proj(p * d_feat);
  for (double& v : proj) v = rng.normal() / std::sqrt(static_cast<double>(p));

  VisualTokens vt;
  vt.sample_id = sample_id;
  vt.count = h;
  vt.width = d_feat;
  vt.tokens.assign(h * d_feat, 0.0f);
  std::vector<double> row(d_feat);
  for (std::size_t i = 0; i < h; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t a = 0; a < p; ++a) {
      const double xv = x[i * p + a];
      for (std::size_t b = 0; b < d_feat; ++b) row[b] += xv * proj[a * d_feat + b];
    }
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      vt.tokens[i * d_feat] = 1.0f;
      continue;
    }
    for (std::size_t b = 0; b < d_feat; ++b) vt.tokens[i * d_feat + b] = static_cast<float>(row[b] / norm);
  }
  return vt;
}

std::vector<std::string> default_class_names(const LabeledDataset& ds) {
  std::vector<std::string> names;
  if (ds.kind == "shapes8x8") {
    const auto& all = shape_names();
    names.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), ds.class_count)));
    return names;
  }
  static const char* compass[] = {"east", "northeast", "north", "northwest", "west", "southwest", "south", "southeast"};
  for (std::size_t y = 0; y < ds.class_count; ++y) {
    names.push_back(ds.class_count == 8 ? std::string(compass[y]) + " cluster" : "cluster " + std::to_string(y));
  }
  return names;
}

void CondensedDataset::validate() const {
  const std::size_t n = labels.size();
  if (samples.size() != n * dim) throw std::invalid_argument("condensed samples do not match count x dim");
  if (source_index.size() != n || visual.size() != n) throw std::invalid_argument("condensed per-sample columns differ in length");
  if (texts.size() != class_count || class_names.size() != class_count) throw std::invalid_argument("condensed dataset needs one text embedding per class");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= class_count) throw std::invalid_argument("condensed label out of range");
    if (visual[i].count != encoders.tokens || visual[i].width != encoders.d_feat) throw std::invalid_argument("visual token shape mismatch");
  }
  for (std::size_t y = 0; y < class_count; ++y) {
    if (texts[y].length != encoders.text_length || texts[y].width != encoders.d_text) throw std::invalid_argument("text embedding shape mismatch");
  }
}

CondensedDataset build_condensed(const LabeledDataset& ds, const SelectionResult& selection, const std::vector<std::string>& class_names,
                                 const EncoderConfig& enc, nlohmann::json provenance) {
  enc.validate();
  if (class_names.size() < ds.class_count) {
    throw std::invalid_argument("class name table has " + std::to_string(class_names.size()) + " entries, dataset has " +
                                std::to_string(ds.class_count) + " classes");
  }
  selection.validate(ds.labels);
  CondensedDataset c;
  c.dim = ds.dim;
  c.class_count = ds.class_count;
  c.encoders = enc;
  c.class_names.assign(class_names.begin(), class_names.begin() + static_cast<std::ptrdiff_t>(ds.class_count));
  for (std::size_t y = 0; y < ds.class_count; ++y) {
    c.texts.push_back(text_encode(c.class_names[y], enc.d_text, enc.text_length, enc.seed, static_cast<std::uint32_t>(y)));
  }
  double lo = INFINITY, hi = -INFINITY, sum = 0.0;
  std::size_t scored = 0;
  for (const auto& cls : selection.classes) {
    for (std::size_t j = 0; j < cls.indices.size(); ++j) {
      const std::size_t i = cls.indices[j];
      const auto x = ds.sample(i);
      c.samples.insert(c.samples.end(), x.begin(), x.end());
      c.labels.push_back(cls.label);
      c.source_index.push_back(i);
      c.visual.push_back(visual_encode(x, enc.tokens, enc.d_feat, enc.seed, i));
      if (!std::isnan(cls.scores[j])) {
        lo = std::min(lo, cls.scores[j]);
        hi = std::max(hi, cls.scores[j]);
        sum += cls.scores[j];
        ++scored;
      }
    }
  }
  provenance["selection"] = selection.spec.to_json();
  if (scored > 0) provenance["score_stats"] = {{"count", scored}, {"min", lo}, {"max", hi}, {"mean", sum / static_cast<double>(scored)}};
  c.provenance = std::move(provenance);
  c.validate();
  return c;
}

CondensedDataset attach_all(const LabeledDataset& ds, const std::vector<std::string>& class_names, const EncoderConfig& enc) {
  SelectionResult all;
  all.spec = {Strategy::random, 1, 0, 0};
  std::size_t smallest = ds.size();
  for (std::uint32_t y = 0; y < ds.class_count; ++y) {
    auto members = ds.class_indices(y);
    smallest = std::min(smallest, members.size());
    all.classes.push_back({y, members, std::vector<double>(members.size(), NAN)});
  }
  // A selection carries one per-class budget, so classes must match in size.
  bool equal = true;
  for (const auto& cls : all.classes) equal = equal && cls.indices.size() == smallest;
  if (!equal) throw std::invalid_argument("attach_all needs equally sized classes");
  all.spec.budget = static_cast<std::uint32_t>(smallest);
  return build_condensed(ds, all, class_names, enc, {{"source", "full"}});
}

std::vector<std::uint8_t> serialize_condensed(const CondensedDataset& c) {
  c.validate();
  const EncoderConfig& e = c.encoders;
  Container box;
  std::vector<std::string> prompts;
  for (const auto& t : c.texts) prompts.push_back(t.prompt);
  box.manifest = {{"profile", "condensed"},   {"format_version", c.format_version}, {"dim", c.dim},
                  {"class_count", c.class_count}, {"count", c.size()},                {"class_names", c.class_names},
                  {"prompts", prompts},           {"encoders", e.to_json()},           {"provenance", c.provenance}};
  std::vector<float> text_tokens, text_mask, visual;
  for (const auto& t : c.texts) {
    text_tokens.insert(text_tokens.end(), t.tokens.begin(), t.tokens.end());
    text_mask.insert(text_mask.end(), t.mask.begin(), t.mask.end());
  }
  for (const auto& v : c.visual) visual.insert(visual.end(), v.tokens.begin(), v.tokens.end());
  for (std::uint64_t i : c.source_index) {
    if (i >= (1ULL << 24)) throw std::invalid_argument("source index exceeds the exactly representable f32 range");
  }
  box.sections = {{"samples", to_f32(c.samples)},   {"labels", to_f32(c.labels)},     {"source_index", to_f32(c.source_index)},
                  {"text_tokens", std::move(text_tokens)}, {"text_mask", std::move(text_mask)}, {"visual_tokens", std::move(visual)}};
  return encode_container(box);
}

CondensedDataset deserialize_condensed(std::span<const std::uint8_t> bytes) {
  const Container box = decode_container(bytes);
  CondensedDataset c;
  try {
    const auto& m = box.manifest;
    if (m.at("profile").get<std::string>() != "condensed") throw FormatError(FormatErrorKind::malformed, "container is not a condensed dataset");
    c.format_version = m.at("format_version").get<std::uint32_t>();
    if (c.format_version != 1) throw FormatError(FormatErrorKind::unsupported_version, "condensed format version " + std::to_string(c.format_version));
    c.dim = m.at("dim").get<std::size_t>();
    c.class_count = m.at("class_count").get<std::size_t>();
    const std::size_t n = m.at("count").get<std::size_t>();
    c.class_names = m.at("class_names").get<std::vector<std::string>>();
    const auto prompts = m.at("prompts").get<std::vector<std::string>>();
    c.encoders = EncoderConfig::from_json(m.at("encoders"));
    c.provenance = m.at("provenance");
    const EncoderConfig& e = c.encoders;
    const auto& samples = box.section("samples").data;
    const auto& labels = box.section("labels").data;
    const auto& source = box.section("source_index").data;
    const auto& tt = box.section("text_tokens").data;
    const auto& tm = box.section("text_mask").data;
    const auto& vis = box.section("visual_tokens").data;
    if (samples.size() != n * c.dim || labels.size() != n || source.size() != n || tt.size() != c.class_count * e.text_length * e.d_text ||
        tm.size() != c.class_count * e.text_length || vis.size() != n * e.tokens * e.d_feat || prompts.size() != c.class_count ||
        c.class_names.size() != c.class_count) {
      throw FormatError(FormatErrorKind::malformed, "section sizes disagree with manifest");
    }
    c.samples.assign(samples.begin(), samples.end());
    for (float v : labels) c.labels.push_back(static_cast<std::uint32_t>(v));
    for (float v : source) c.source_index.push_back(static_cast<std::uint64_t>(v));
    for (std::size_t y = 0; y < c.class_count; ++y) {
      TextEmbedding t;
      t.class_id = static_cast<std::uint32_t>(y);
      t.prompt = prompts[y];
      t.length = e.text_length;
      t.width = e.d_text;
      const std::size_t tok = e.text_length * e.d_text;
      t.tokens.assign(tt.begin() + static_cast<std::ptrdiff_t>(y * tok), tt.begin() + static_cast<std::ptrdiff_t>((y + 1) * tok));
      for (std::size_t p = 0; p < e.text_length; ++p) t.mask.push_back(tm[y * e.text_length + p] != 0.0f ? 1 : 0);
      c.texts.push_back(std::move(t));
    }
    const std::size_t per = e.tokens * e.d_feat;
    for (std::size_t i = 0; i < n; ++i) {
      VisualTokens v;
      v.sample_id = c.source_index[i];
      v.count = e.tokens;
      v.width = e.d_feat;
      v.tokens.assign(vis.begin() + static_cast<std::ptrdiff_t>(i * per), vis.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
      c.visual.push_back(std::move(v));
    }
    c.validate();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(FormatErrorKind::malformed, std::string("condensed manifest: ") + ex.what());
  } catch (const std::out_of_range& ex) {
    throw FormatError(FormatErrorKind::malformed, std::string("condensed container: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw FormatError(FormatErrorKind::malformed, std::string("condensed container: ") + ex.what());
  }
  return c;
}

void write_condensed(const std::filesystem::path& path, const CondensedDataset& c) { write_file(path, serialize_condensed(c)); }
CondensedDataset read_condensed(const std::filesystem::path& path) { return deserialize_condensed(read_file(path)); }

}  // namespace d2c
