#pragma once

// Binary container shared by parameter checkpoints, world-model and policy
// bundles, and datasets.
//
//   "LOGO" | u32 version | 4-byte section tag | u32 tensor count
//   per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims... | f32 payload
//
// All integers and floats are little-endian.

#include "logo/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace logo {

inline constexpr std::uint32_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

struct Container {
  std::string tag;  // exactly four bytes
  std::vector<Tensor> tensors;

  const Tensor* find(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
};

std::string encode_container(const Container& c);
Container decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& c);
/// Reads and validates a container; when `expected_tag` is non-empty a
/// different tag raises BadFormatError.
Container read_container(const std::filesystem::path& path, std::string_view expected_tag = {});

std::vector<Tensor> to_tensors(const ad::ParamStore<float>& params);
ad::ParamStore<float> from_tensors(const std::vector<Tensor>& tensors);

/// Generic parameter checkpoint (tag "PARM").
void save_params(const std::filesystem::path& path, const ad::ParamStore<float>& params);
ad::ParamStore<float> load_params(const std::filesystem::path& path);

}  // namespace logo
