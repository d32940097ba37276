#pragma once

// The "D2CD" container: magic, u32 version, u32 manifest length, JSON
// manifest, u64 manifest checksum, then the f32 sections listed in the
// manifest's "sections" array, each followed by its own u64 checksum.
// All integers and floats are little-endian; checksums are FNV-1a 64.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace d2c {

inline constexpr char kContainerMagic[4] = {'D', '2', 'C', 'D'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerSection {
  std::string name;
  std::vector<float> data;
};

struct Container {
  nlohmann::json manifest = nlohmann::json::object();  ///< "sections" is filled in on encode
  std::vector<ContainerSection> sections;

  const ContainerSection& section(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

/// Byte offset where section payloads start (for size accounting).
std::size_t container_header_size(std::span<const std::uint8_t> bytes);

}  // namespace d2c
