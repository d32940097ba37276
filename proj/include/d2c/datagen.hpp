#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace d2c {

/// Flat-vector samples with class labels.
///
/// difficulty_factor is generation-time ground truth (the clutter level of
/// each sample). It exists so scoring can be validated; training and
/// selection never read it.
struct LabeledDataset {
  std::string kind;
  std::size_t dim = 0;
  std::size_t class_count = 0;
  std::vector<double> samples;  ///< n x dim, row-major
  std::vector<std::uint32_t> labels;
  std::vector<double> difficulty_factor;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const { return {samples.data() + i * dim, dim}; }
  /// Global indices of every sample of class y, ascending.
  std::vector<std::size_t> class_indices(std::uint32_t y) const;
  /// Throws std::invalid_argument when any structural invariant fails.
  void validate() const;
};

struct Gauss2dOptions {
  double radius = 2.0;    ///< class centers sit on a circle of this radius
  double base_std = 0.1;  ///< s: per-class isotropic spread before clutter
};

/// Class y is centered at radius * (cos 2πy/C, sin 2πy/C). Each sample is
/// center + N(0, s^2 I) + clutter * N(0, I), clutter = u * clutter_max with
/// u ~ U[0,1] recorded as the difficulty factor. Samples are class-major.
LabeledDataset gen_gauss2d(std::size_t classes, std::size_t n_per_class, double clutter_max, std::uint64_t seed,
                           const Gauss2dOptions& opts = {});

struct Shapes8x8Options {
  int max_shift = 1;  ///< random cyclic translation in [-max_shift, max_shift] per axis
};

constexpr std::size_t kShapeTemplates = 8;

/// 8x8 procedural shapes. Each sample is a cyclically shifted template plus
/// per-pixel background clutter u * clutter_max * U[0,1], clamped to [0,1].
LabeledDataset gen_shapes8x8(std::size_t classes, std::size_t n_per_class, double clutter_max, std::uint64_t seed,
                             const Shapes8x8Options& opts = {});

/// The unjittered template for class y (64 values in {0,1}).
std::vector<double> shape_template(std::size_t y);
/// Names of the templates, usable as class names.
const std::vector<std::string>& shape_names();

/// Even global indices form the training half, odd ones the held-out half.
struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset heldout;
};
DatasetSplit split_by_parity(const LabeledDataset& full);

/// Subset in the given index order.
LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices);

/// Serialized as a samples-only D2CD container.
void write_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset read_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const LabeledDataset& ds);
LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes);

}  // namespace d2c
