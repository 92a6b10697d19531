#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "moue/types.hpp"

namespace moue {

/// Named-tensor binary container shared by MoE and MoUE models.
///
/// Layout (all integers little-endian, enforced byte-by-byte on both ends):
///   magic "MOUE" | version u32 | metadata_len u64 | metadata (UTF-8
///   key=value lines) | tensor_count u64 | per tensor: name_len u64, name,
///   dtype u32 (0 = float64 LE), rank u32, dims u64[rank], row-major payload.
/// Full byte layout in docs/formats.md. Round-trips are bit exact.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;  // row-major
  };

  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order preserved

  bool has(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  void add(const std::string& name, const Matrix& m);
  void add(const std::string& name, const Vector& v);
  Matrix matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;

  std::string meta(const std::string& key) const;        // throws FormatError if absent
  std::string meta_or(const std::string& key, const std::string& fallback) const;

  /// Serialization. Load throws FormatError with distinct messages:
  /// "bad magic", "unsupported version", "truncated", "duplicate tensor".
  std::vector<std::uint8_t> save() const;
  static Checkpoint load(const std::vector<std::uint8_t>& bytes);

  void save_file(const std::filesystem::path& path) const;
  static Checkpoint load_file(const std::filesystem::path& path);
};

}  // namespace moue
