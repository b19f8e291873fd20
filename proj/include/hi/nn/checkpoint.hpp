#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace hi::nn {

/// Versioned checkpoint container: a JSON header (network, variant,
/// resolution, palette hash, step, ...) followed by named binary blobs
/// holding serialized modules and optimizers.
///
/// Layout: "HICKPT\n", u32 version, u64 header length, header bytes,
/// u32 blob count, then per blob: u32 name length, name, u64 size, bytes.
/// Integers are little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, std::string> blobs;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  void put_module(const std::string& name, const torch::nn::Module& module);
  void get_module(const std::string& name, torch::nn::Module& module) const;
  void put_optimizer(const std::string& name, const torch::optim::Optimizer& optimizer);
  void get_optimizer(const std::string& name, torch::optim::Optimizer& optimizer) const;
};

}  // namespace hi::nn
