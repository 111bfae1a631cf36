#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cardseg/tensor.hpp"

namespace cardseg::nn {

/// Flat named-tensor archive: JSON manifest (name -> dtype/shape/offset) +
/// raw little-endian float payload, plus a free-form string meta block.
/// Used for model checkpoints, optimizer state, and the trainer manifest.
class TensorArchive {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;

  std::map<std::string, std::string> meta;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, size_t> index_;
};

}  // namespace cardseg::nn
