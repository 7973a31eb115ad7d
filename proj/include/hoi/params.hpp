// Named parameter storage and the checkpoint container.
#pragma once

#include "hoi/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hoi {

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed), seed_(seed) {}

  // Xavier-uniform initialised weight.
  ad::Var create_weight(const std::string& name, int rows, int cols);
  ad::Var create_constant(const std::string& name, int rows, int cols, double value);
  ad::Var create_normal(const std::string& name, int rows, int cols, double stddev);

  const ad::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t scalar_count() const;

  void zero_grad();
  // FNV-1a over the raw bytes of every parameter whose name starts with prefix.
  std::uint64_t hash(const std::string& prefix = "") const;
  void copy_values_from(const ParamStore& other);

 private:
  ad::Var& insert(const std::string& name, ad::Matrix value);

  std::mt19937_64 rng_;
  std::uint64_t seed_;
  std::vector<std::pair<std::string, ad::Var>> entries_;
};

// Binary container: "HOICKPT1", uint64 header length, JSON header
// ({"meta": ..., "tensors": [{"name","rows","cols"}...]}), then each tensor's
// doubles row-major, little-endian, in header order.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, ad::Matrix>> tensors;

  static Checkpoint from_params(const ParamStore& store, nlohmann::json meta);
  void apply_to(ParamStore& store) const;
  const ad::Matrix* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hoi
