#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vcvae/tensor.hpp"

namespace vcvae {

// Self-describing binary file: text header of key=value lines followed by
// named float64 arrays. All integers and floats are little-endian.
//
//   magic      8 bytes  "VCVAECNT"
//   version    u32
//   header     u32 byte length, then UTF-8 "key=value\n" lines
//   arrays     u32 count, then per array:
//                u32 name length, name bytes, u32 rank, u64 dims[rank],
//                f64 values[prod(dims)]
struct Container {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key) const;
  double require_number(const std::string& key) const;

  void add_array(const std::string& name, Tensor t);
  const Tensor* find_array(const std::string& name) const;
  const Tensor& require_array(const std::string& name) const;
};

// Writes to a temporary sibling and renames it into place.
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

// Shortest decimal text that reads back to the same double.
std::string exact_number(double v);

}  // namespace vcvae
