#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dppt/tensor.hpp"

namespace dppt {

// Named tensors plus free-form metadata, stored as a versioned JSON document.
// Doubles are written in shortest round-trip form, so save/load is lossless.
class Checkpoint {
 public:
  static constexpr const char* kFormat = "dppt.checkpoint";
  static constexpr int kVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& doc);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::string kind_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dppt
