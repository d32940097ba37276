#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2c/embedding.hpp"
#include "d2c/tensor.hpp"

namespace d2c {

enum class PredictionKind : std::uint8_t { epsilon = 0, velocity = 1 };

std::string to_string(PredictionKind k);
PredictionKind prediction_kind_from_string(const std::string& s);

struct ModelDims {
  std::uint32_t classes = 8;     ///< C
  std::uint32_t dim = 2;         ///< D, flat sample width
  std::uint32_t d_model = 32;    ///< condition / token width
  std::uint32_t d_text = 32;
  std::uint32_t d_feat = 16;
  std::uint32_t blocks = 2;      ///< B
  std::uint32_t tokens = 1;      ///< h; hidden width is tokens * d_model
  std::uint32_t align_layer = 1; ///< l in [1, B]

  std::uint32_t hidden() const { return tokens * d_model; }
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

/// Which parts of the dual conditional embedding are active.
struct ConditionBranches {
  bool text = true;
  bool label = true;
};

/// Conditioning for one item. `text` points at the class's prompt embedding
/// and may be null only when the null flag is set or the text branch is off.
struct ConditionBundle {
  std::uint32_t label = 0;
  const TextEmbedding* text = nullptr;
  bool null = false;
};

struct ForwardResult {
  Tensor prediction;  ///< n x D
  Tensor features;    ///< (n*h) x d_model, hidden state after block l
};

/// Conditional residual-MLP denoiser.
///
/// Each block applies h += gate * MLP(h * (1 + scale) + shift), with shift,
/// scale and gate produced from silu(time embedding + condition) by
/// zero-initialized linear maps, so a fresh block is the identity. The output
/// head is also zero-initialized, so a fresh model predicts zeros.
class DenoiserModel {
 public:
  DenoiserModel(ModelDims dims, PredictionKind kind, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  PredictionKind prediction_kind() const { return kind_; }

  /// All trainable tensors in checkpoint declaration order.
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Condition vectors, one row per bundle:
  ///   MLP(t~) + t~ + e[y] with t~ = masked-mean-pool(Conv1d_k3(t_c * mask)),
  /// or the learned null vector for null bundles.
  Tensor fuse_conditions(Tape& tape, std::span<const ConditionBundle> bundles, ConditionBranches branches = {}) const;

  /// times are network times in [0,1], one per row of x_t.
  ForwardResult forward(Tape& tape, const Tensor& x_t, std::span<const double> times, const Tensor& conditions) const;

  /// Per-token phi: x A + a + silu(x W1 + b1) W2 + b2, rows left unnormalized.
  Tensor project_features(Tape& tape, const Tensor& features) const;

  /// Sets phi to the identity map (requires d_model == d_feat).
  void configure_identity_projection();

  DenoiserModel clone() const;
  void copy_values_from(const DenoiserModel& other);
  void zero_grad();

  std::vector<std::uint8_t> serialize() const;
  static DenoiserModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static DenoiserModel load(const std::filesystem::path& path);
  /// FNV-1a 64 of the serialized checkpoint.
  std::uint64_t fingerprint() const;

 private:
  Tensor& add_param(const std::string& name, Shape shape);
  void initialize(std::uint64_t seed);

  ModelDims dims_;
  PredictionKind kind_;
  std::vector<NamedTensor> params_;
};

/// Sinusoidal time features, one row per time (width = d_model).
Tensor time_features(std::span<const double> times, std::size_t width);

}  // namespace d2c
