#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "zodiac/tensor.hpp"

namespace zodiac {

/// Name-addressable learnable tensors in insertion order.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws ContractError for unknown names.
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  /// Undefined tensor when absent.
  Tensor get(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  /// Total scalar count across every tensor.
  std::size_t count() const;

  void zero_grad();
  /// Deep copy with fresh graph leaves.
  ParamStore clone() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace zodiac
