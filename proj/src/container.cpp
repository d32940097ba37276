#include "d2c/container.hpp"

#include <cstring>

#include "d2c/binio.hpp"

namespace d2c {

const ContainerSection& Container::section(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return s;
  }
  throw FormatError(FormatErrorKind::malformed, "missing section '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  nlohmann::json manifest = c.manifest;
  manifest["sections"] = nlohmann::json::array();
  for (const auto& s : c.sections) manifest["sections"].push_back({{"name", s.name}, {"count", s.data.size()}});
  const std::string text = manifest.dump();

  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kContainerMagic), 4});
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  w.u64(fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
  for (const auto& s : c.sections) {
    const std::size_t start = w.size();
    for (float v : s.data) w.f32(v);
    w.u64(fnv1a64(std::span(w.data()).subspan(start)));
  }
  return w.take();
}

namespace {

nlohmann::json read_manifest(ByteReader& r) {
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) throw FormatError(FormatErrorKind::bad_magic, "not a D2CD container");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw FormatError(FormatErrorKind::unsupported_version, "D2CD version " + std::to_string(version) + " (supported: " +
                                                                std::to_string(kContainerVersion) + ")");
  }
  const std::uint32_t len = r.u32();
  const auto text = r.bytes(len);
  const std::uint64_t expected = r.u64();
  if (fnv1a64(text) != expected) throw FormatError(FormatErrorKind::checksum_mismatch, "manifest checksum mismatch");
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("manifest is not valid JSON: ") + e.what());
  }
}

}  // namespace

Container decode_container(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Container c;
  c.manifest = read_manifest(r);
  if (!c.manifest.is_object() || !c.manifest.contains("sections") || !c.manifest["sections"].is_array()) {
    throw FormatError(FormatErrorKind::malformed, "manifest lacks a sections array");
  }
  for (const auto& entry : c.manifest["sections"]) {
    if (!entry.contains("name") || !entry.contains("count") || !entry["count"].is_number_unsigned()) {
      throw FormatError(FormatErrorKind::malformed, "bad section entry " + entry.dump());
    }
    ContainerSection s;
    s.name = entry["name"].get<std::string>();
    const std::size_t count = entry["count"].get<std::size_t>();
    const auto payload = r.bytes(count * 4);
    const std::uint64_t expected = r.u64();
    if (fnv1a64(payload) != expected) throw FormatError(FormatErrorKind::checksum_mismatch, "section '" + s.name + "' checksum mismatch");
    ByteReader pr(payload);
    s.data.resize(count);
    for (auto& v : s.data) v = pr.f32();
    c.sections.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::malformed, std::to_string(r.remaining()) + " trailing bytes");
  c.manifest.erase("sections");
  return c;
}

std::size_t container_header_size(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  read_manifest(r);
  return r.position();
}

}  // namespace d2c
