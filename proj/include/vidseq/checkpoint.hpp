#pragma once

// Binary container shared by checkpoints and dataset clips:
//
//   "OVID" | u32 version | u64 config_len | config (key=value lines)
//   | u64 tensor_count | tensors... | u32 crc32 of all preceding bytes
//
// Each tensor: u32 name_len | name | u8 dtype (1=f32, 2=f64) | u32 rank
// | u64 extents[rank] | little-endian raw values.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "vidseq/tensor.hpp"

namespace vidseq {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct TensorRecord {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> values;

  DType dtype() const { return values.index() == 0 ? DType::F32 : DType::F64; }
  template <typename T>
  static TensorRecord of(std::string name, const Tensor<T>& t) {
    return {std::move(name), t.shape(), std::vector<T>(t.data().begin(), t.data().end())};
  }
  // Converts to the requested precision.
  template <typename T>
  std::vector<T> as() const {
    return std::visit([](const auto& v) { return std::vector<T>(v.begin(), v.end()); }, values);
  }
};

struct Container {
  std::map<std::string, std::string> config;
  std::vector<TensorRecord> tensors;

  const TensorRecord& tensor(const std::string& name) const;
  const std::string& value(const std::string& key) const;
};

std::string encode_config(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> decode_config(const std::string& text);

std::vector<std::uint8_t> serialize(const Container& c);
Container deserialize(const std::vector<std::uint8_t>& bytes);
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace vidseq
