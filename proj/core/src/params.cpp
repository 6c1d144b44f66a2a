#include "zodiac/params.hpp"

#include "zodiac/errors.hpp"

namespace zodiac {

void ParamStore::add(std::string name, Tensor tensor) {
  if (!tensor.defined()) return;
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return entries_[it->second].second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return entries_[it->second].second;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? Tensor() : entries_[it->second].second;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone(t.requires_grad()));
  return out;
}

}  // namespace zodiac
