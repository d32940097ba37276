#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2c/datagen.hpp"
#include "d2c/embedding.hpp"
#include "d2c/selector.hpp"
#include "json.hpp"

namespace d2c {

struct EncoderConfig {
  std::size_t text_length = 8;  ///< L
  std::size_t d_text = 32;
  std::size_t tokens = 4;       ///< h
  std::size_t d_feat = 16;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

/// Prompt template applied to every class name.
std::string class_prompt(const std::string& class_name);

/// Surrogate text encoder. Each whitespace-separated word of the prompt maps
/// to a unit vector drawn from a stream seeded by (seed, word), so the same
/// word always gets the same row. Rows past the word count are zero and
/// masked out. Throws if the prompt has more than L words.
TextEmbedding text_encode(const std::string& class_name, std::size_t d_text, std::size_t length, std::uint64_t seed,
                          std::uint32_t class_id = 0);

/// Surrogate patch encoder: x is split into h contiguous patches of width
/// D/h, each multiplied by one fixed seeded (D/h x d_feat) matrix and scaled
/// to unit length. A zero patch maps to the first basis vector.
VisualTokens visual_encode(std::span<const double> x, std::size_t h, std::size_t d_feat, std::uint64_t seed,
                           std::uint64_t sample_id = 0);

/// Names usable in prompts for a generated dataset's classes.
std::vector<std::string> default_class_names(const LabeledDataset& ds);

struct CondensedDataset {
  std::uint32_t format_version = 1;
  std::size_t dim = 0;
  std::size_t class_count = 0;
  std::vector<double> samples;  ///< n x dim
  std::vector<std::uint32_t> labels;
  std::vector<std::uint64_t> source_index;  ///< index into the dataset the selection was made on
  std::vector<std::string> class_names;
  std::vector<TextEmbedding> texts;  ///< one per class, indexed by class id
  std::vector<VisualTokens> visual;  ///< one per sample
  EncoderConfig encoders;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const { return {samples.data() + i * dim, dim}; }
  void validate() const;
  bool operator==(const CondensedDataset&) const = default;
};

/// Selected samples in class-major, rank order, with their attachments.
/// provenance should describe the selection; the selection spec and score
/// statistics are added to it here.
CondensedDataset build_condensed(const LabeledDataset& ds, const SelectionResult& selection, const std::vector<std::string>& class_names,
                                 const EncoderConfig& enc, nlohmann::json provenance = nlohmann::json::object());

/// Every sample of ds, attached. Used for reference training.
CondensedDataset attach_all(const LabeledDataset& ds, const std::vector<std::string>& class_names, const EncoderConfig& enc);

std::vector<std::uint8_t> serialize_condensed(const CondensedDataset& c);
CondensedDataset deserialize_condensed(std::span<const std::uint8_t> bytes);
void write_condensed(const std::filesystem::path& path, const CondensedDataset& c);
CondensedDataset read_condensed(const std::filesystem::path& path);

}  // namespace d2c
