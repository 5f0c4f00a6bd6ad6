#pragma once

// Binary checkpoint container.
//
// Layout (little-endian):
//   "EXPT" | u32 version (=1) | u32 tensor count
//   per tensor: u32 name length | name bytes | u8 dtype (1 = f32, 2 = f64)
//               | u32 ndim | u64 dims[ndim] | raw element data
//   u64 CRC-64/XZ of every preceding byte

#include <cstdint>
#include <string>
#include <vector>

#include "expt/nn/layers.hpp"
#include "expt/nn/optim.hpp"

namespace expt::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

struct Record {
  std::string name;
  DType dtype = DType::kFloat32;
  std::vector<std::uint64_t> dims;
  /// Raw little-endian element bytes.
  std::vector<unsigned char> data;

  std::uint64_t element_count() const;
};

std::uint64_t crc64(const unsigned char* data, std::size_t size);

std::vector<unsigned char> encode(const std::vector<Record>& records);
/// Throws CheckpointError: kBadMagic, kVersionMismatch, kCrcMismatch, or
/// kTruncated when the verified body is inconsistent.
std::vector<Record> decode(const std::vector<unsigned char>& bytes);

/// Writes via a temporary file and rename.
void write_file(const std::string& path, const std::vector<Record>& records);
std::vector<Record> read_file(const std::string& path);

struct Metadata {
  std::string config_hash;
  std::string model_kind;
  std::int64_t step = 0;
};

/// Parameters in store order, then optimizer moments "adam.m/<name>",
/// "adam.v/<name>" and the step "adam.t", then metadata records named
/// "meta:<key>:<value>" with no elements.
template <typename T>
void save(const std::string& path, const nn::ParameterStore<T>& params, const nn::OptimizerState<T>* state,
          const Metadata& meta);

/// Copies stored values into `params` (and `state` when given). Throws
/// CheckpointError kMissingTensor naming the first absent or mis-shaped
/// tensor. Returns the stored metadata.
template <typename T>
Metadata load(const std::string& path, nn::ParameterStore<T>& params, nn::OptimizerState<T>* state);

Metadata read_metadata(const std::string& path);

}  // namespace expt::checkpoint
