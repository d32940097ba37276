#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace d2c {

/// Per-class prompt embedding: L rows of width d_text plus a validity mask.
/// Rows past the prompt's token count are zero and masked out.
struct TextEmbedding {
  std::uint32_t class_id = 0;
  std::string prompt;
  std::size_t length = 0;  ///< L
  std::size_t width = 0;   ///< d_text
  std::vector<float> tokens;
  std::vector<std::uint8_t> mask;

  std::size_t active_tokens() const;
  bool operator==(const TextEmbedding&) const = default;
};

/// Per-sample patch tokens: h unit-norm rows of width d_feat.
struct VisualTokens {
  std::uint64_t sample_id = 0;
  std::size_t count = 0;  ///< h
  std::size_t width = 0;  ///< d_feat
  std::vector<float> tokens;

  bool operator==(const VisualTokens&) const = default;
};

}  // namespace d2c
