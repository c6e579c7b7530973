// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emforge/tensor.hpp"

namespace emforge {

// Insertion-ordered name -> tensor map. Iteration order is the insertion
// order, which fixes the order of every per-parameter loop (optimizer,
// checkpoint, gradient reductions).
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  void erase(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;
  std::size_t total_elements() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace emforge
