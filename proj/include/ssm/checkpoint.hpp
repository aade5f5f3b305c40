#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace ssm {

// Single-file container:
//   8 bytes   magic "SSMCKPT\0"
//   u32       format version (little endian)
//   u64       metadata length, then that many bytes of UTF-8 JSON
//   u32       tensor count, then per tensor:
//               u32 name length, name bytes,
//               u8 dtype (0 = float32, 1 = float64, 2 = int64),
//               u32 rank, rank x i64 dims,
//               raw little-endian element data, row-major
class Checkpoint {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const torch::Tensor& t);
  bool contains(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;
  // Same, also checking the stored shape.
  const torch::Tensor& get(const std::string& name, torch::IntArrayRef expected_shape) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& tensors() const { return tensors_; }

  // Parameters and buffers of a module under "<prefix>.<name>".
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  // Strict: every parameter and buffer of the module must be present with the same shape.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> tensors_;
};

}  // namespace ssm
