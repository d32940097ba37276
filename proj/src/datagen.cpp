#include "d2c/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "d2c/binio.hpp"
#include "d2c/container.hpp"
#include "d2c/rng.hpp"

namespace d2c {

namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Templates drawn on an 8x8 grid, '#' = 1.
constexpr const char* kTemplates[kShapeTemplates][8] = {
    {"........", "........", "........", "########", "########", "........", "........", "........"},  // hbar
    {"...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##..."},  // vbar
    {"...##...", "...##...", "...##...", "########", "########", "...##...", "...##...", "...##..."},  // cross
    {"########", "#......#", "#......#", "#......#", "#......#", "#......#", "#......#", "########"},  // square
    {"#.......", ".#......", "..#.....", "...#....", "....#...", ".....#..", "......#.", ".......#"},  // diagonal
    {"#......#", ".#....#.", "..#..#..", "...##...", "...##...", "..#..#..", ".#....#.", "#......#"},  // x
    {"..####..", ".#....#.", "#......#", "#......#", "#......#", "#......#", ".#....#.", "..####.."},  // ring
    {"#.......", "#.......", "#.......", "#.......", "#.......", "#.......", "#.......", "########"},  // ell
};

}  // namespace

std::vector<std::size_t> LabeledDataset::class_indices(std::uint32_t y) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == y) out.push_back(i);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (dim == 0) throw std::invalid_argument("dataset dimension is zero");
  if (samples.size() != labels.size() * dim) throw std::invalid_argument("sample matrix does not match label count");
  if (difficulty_factor.size() != labels.size()) throw std::invalid_argument("difficulty factor count mismatch");
  std::vector<std::size_t> counts(class_count, 0);
  for (std::uint32_t y : labels) {
    if (y >= class_count) throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    ++counts[y];
  }
  for (std::size_t y = 0; y < class_count; ++y) {
    if (counts[y] == 0) throw std::invalid_argument("class " + std::to_string(y) + " has no samples");
  }
  for (double f : difficulty_factor) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("difficulty factor outside [0,1]");
  }
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite sample value");
  }
}

LabeledDataset gen_gauss2d(std::size_t classes, std::size_t n_per_class, double clutter_max, std::uint64_t seed,
                           const Gauss2dOptions& opts) {
  if (classes < 2) throw std::invalid_argument("gen_gauss2d needs at least 2 classes");
  if (n_per_class < 4) throw std::invalid_argument("gen_gauss2d needs at least 4 samples per class");
  if (!(clutter_max >= 0.0)) throw std::invalid_argument("clutter_max must be non-negative");
  LabeledDataset ds;
  ds.kind = "gauss2d";
  ds.dim = 2;
  ds.class_count = classes;
  ds.seed = seed;
  for (std::size_t y = 0; y < classes; ++y) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(y) / static_cast<double>(classes);
    const double cx = opts.radius * std::cos(angle), cy = opts.radius * std::sin(angle);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::size_t global = y * n_per_class + i;
      Rng rng(derive_seed(seed, 0x67617573ULL, global));
      const double u = rng.uniform();
      const double clutter = u * clutter_max;
      const double x = cx + opts.base_std * rng.normal() + clutter * rng.normal();
      const double z = cy + opts.base_std * rng.normal() + clutter * rng.normal();
      ds.samples.push_back(to_f32(x));
      ds.samples.push_back(to_f32(z));
      ds.labels.push_back(static_cast<std::uint32_t>(y));
      ds.difficulty_factor.push_back(to_f32(u));
    }
  }
  return ds;
}

std::vector<double> shape_template(std::size_t y) {
  if (y >= kShapeTemplates) throw std::invalid_argument("no shape template " + std::to_string(y));
  std::vector<double> out(64);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 8; ++c) out[r * 8 + c] = kTemplates[y][r][c] == '#' ? 1.0 : 0.0;
  }
  return out;
}

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names = {"hbar", "vbar", "cross", "square", "diagonal", "x", "ring", "ell"};
  return names;
}

LabeledDataset gen_shapes8x8(std::size_t classes, std::size_t n_per_class, double clutter_max, std::uint64_t seed,
                             const Shapes8x8Options& opts) {
  if (classes > kShapeTemplates) {
    throw std::invalid_argument("gen_shapes8x8 supports at most " + std::to_string(kShapeTemplates) + " classes, asked for " +
                                std::to_string(classes));
  }
  if (classes < 2) throw std::invalid_argument("gen_shapes8x8 needs at least 2 classes");
  if (n_per_class < 4) throw std::invalid_argument("gen_shapes8x8 needs at least 4 samples per class");
  if (!(clutter_max >= 0.0)) throw std::invalid_argument("clutter_max must be non-negative");
  if (opts.max_shift < 0) throw std::invalid_argument("max_shift must be non-negative");
  LabeledDataset ds;
  ds.kind = "shapes8x8";
  ds.dim = 64;
  ds.class_count = classes;
  ds.seed = seed;
  const int span = 2 * opts.max_shift + 1;
  for (std::size_t y = 0; y < classes; ++y) {
    const auto tmpl = shape_template(y);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::size_t global = y * n_per_class + i;
      Rng rng(derive_seed(seed, 0x73686170ULL, global));
      const double u = rng.uniform();
      const int dr = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) - opts.max_shift;
      const int dc = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) - opts.max_shift;
      for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
          const int sr = ((r - dr) % 8 + 8) % 8;
          const int sc = ((c - dc) % 8 + 8) % 8;
          const double base = tmpl[static_cast<std::size_t>(sr * 8 + sc)];
          const double v = base + u * clutter_max * rng.uniform();
          ds.samples.push_back(to_f32(std::clamp(v, 0.0, 1.0)));
        }
      }
      ds.labels.push_back(static_cast<std::uint32_t>(y));
      ds.difficulty_factor.push_back(to_f32(u));
    }
  }
  return ds;
}

DatasetSplit split_by_parity(const LabeledDataset& full) {
  std::vector<std::size_t> even, odd;
  for (std::size_t i = 0; i < full.size(); ++i) (i % 2 == 0 ? even : odd).push_back(i);
  DatasetSplit s{subset(full, even), subset(full, odd)};
  s.train.validate();
  s.heldout.validate();
  return s;
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  LabeledDataset out;
  out.kind = ds.kind;
  out.dim = ds.dim;
  out.class_count = ds.class_count;
  out.seed = ds.seed;
  for (std::size_t i : indices) {
    if (i >= ds.size()) throw std::out_of_range("subset index " + std::to_string(i) + " out of range");
    const auto s = ds.sample(i);
    out.samples.insert(out.samples.end(), s.begin(), s.end());
    out.labels.push_back(ds.labels[i]);
    out.difficulty_factor.push_back(ds.difficulty_factor[i]);
  }
  return out;
}

std::vector<std::uint8_t> serialize_dataset(const LabeledDataset& ds) {
  Container c;
  c.manifest = {{"profile", "samples"},
                {"kind", ds.kind},
                {"dim", ds.dim},
                {"class_count", ds.class_count},
                {"count", ds.size()},
                {"seed", ds.seed}};
  ContainerSection samples{"samples", {}}, labels{"labels", {}}, difficulty{"difficulty_factor", {}};
  for (double v : ds.samples) samples.data.push_back(static_cast<float>(v));
  for (std::uint32_t y : ds.labels) labels.data.push_back(static_cast<float>(y));
  for (double v : ds.difficulty_factor) difficulty.data.push_back(static_cast<float>(v));
  c.sections = {std::move(samples), std::move(labels), std::move(difficulty)};
  return encode_container(c);
}

LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  const Container c = decode_container(bytes);
  try {
    if (c.manifest.at("profile").get<std::string>() != "samples") {
      throw FormatError(FormatErrorKind::malformed, "container is not a samples-only dataset");
    }
    LabeledDataset ds;
    ds.kind = c.manifest.at("kind").get<std::string>();
    ds.dim = c.manifest.at("dim").get<std::size_t>();
    ds.class_count = c.manifest.at("class_count").get<std::size_t>();
    ds.seed = c.manifest.at("seed").get<std::uint64_t>();
    const std::size_t n = c.manifest.at("count").get<std::size_t>();
    const auto& s = c.section("samples").data;
    const auto& l = c.section("labels").data;
    const auto& d = c.section("difficulty_factor").data;
    if (s.size() != n * ds.dim || l.size() != n || d.size() != n) throw FormatError(FormatErrorKind::malformed, "section sizes disagree with manifest");
    ds.samples.assign(s.begin(), s.end());
    for (float v : l) ds.labels.push_back(static_cast<std::uint32_t>(v));
    ds.difficulty_factor.assign(d.begin(), d.end());
    ds.validate();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("dataset manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("dataset: ") + e.what());
  }
}

void write_dataset(const std::filesystem::path& path, const LabeledDataset& ds) { write_file(path, serialize_dataset(ds)); }
LabeledDataset read_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

}  // namespace d2c
