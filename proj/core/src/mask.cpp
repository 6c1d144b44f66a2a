#include "zodiac/mask.hpp"

#include "broadcast.hpp"
#include "zodiac/errors.hpp"

namespace zodiac {

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::none: return "none";
    case MaskKind::causal: return "causal";
    case MaskKind::padding: return "padding";
    case MaskKind::combined: return "combined";
  }
  return "unknown";
}

MaskSet::MaskSet(Shape shape, std::vector<std::uint8_t> bits, MaskKind kind)
    : shape_(std::move(shape)), bits_(std::move(bits)), kind_(kind) {
  if (shape_numel(shape_) != bits_.size()) {
    throw ShapeError("mask shape " + shape_str(shape_) + " does not match bit count");
  }
  for (auto& b : bits_) {
    if (b > 1) throw ContractError("mask entries must be 0 or 1");
  }
  if (kind_ == MaskKind::none) throw ContractError("explicit mask bits need a non-none kind");
}

MaskSet MaskSet::causal(std::size_t length) {
  if (length == 0) throw ContractError("causal mask of length 0");
  std::vector<std::uint8_t> bits(length * length, 0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j <= i; ++j) bits[i * length + j] = 1;
  }
  return {{length, length}, std::move(bits), MaskKind::causal};
}

MaskSet MaskSet::padding(const std::vector<std::size_t>& lengths, std::size_t max_len) {
  if (lengths.empty() || max_len == 0) throw ContractError("padding mask needs a non-empty batch");
  std::vector<std::uint8_t> bits(lengths.size() * max_len, 0);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0) throw ContractError("sequence of length 0 in batch item " + std::to_string(b));
    if (lengths[b] > max_len) throw ContractError("sequence length exceeds padded length");
    for (std::size_t j = 0; j < lengths[b]; ++j) bits[b * max_len + j] = 1;
  }
  return {{lengths.size(), 1, 1, max_len}, std::move(bits), MaskKind::padding};
}

MaskSet MaskSet::padding_rows(const std::vector<std::size_t>& lengths, std::size_t max_len) {
  auto keys = padding(lengths, max_len);
  return {{lengths.size(), 1, max_len, 1}, keys.bits(), MaskKind::padding};
}

MaskSet MaskSet::combined(const std::vector<std::size_t>& lengths, std::size_t max_len) {
  const auto pad = padding(lengths, max_len);
  const auto causal_mask = causal(max_len);
  const Shape shape{lengths.size(), 1, max_len, max_len};
  auto a = pad.broadcast_to(shape);
  auto c = causal_mask.broadcast_to(shape);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] & c[i];
  return {shape, std::move(a), MaskKind::combined};
}

MaskSet MaskSet::cross(const std::vector<std::size_t>& source_lengths, std::size_t source_len,
                       std::size_t target_len) {
  const auto pad = padding(source_lengths, source_len);
  const Shape shape{source_lengths.size(), 1, target_len, source_len};
  return {shape, pad.broadcast_to(shape), MaskKind::padding};
}

bool MaskSet::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("mask index rank mismatch");
  std::size_t offset = 0;
  std::size_t d = 0;
  for (auto i : index) offset = offset * shape_[d++] + i;
  return bits_.at(offset) != 0;
}

std::vector<std::uint8_t> MaskSet::broadcast_to(const Shape& target) const {
  if (empty()) return std::vector<std::uint8_t>(shape_numel(target), 1);
  const auto strides = detail::broadcast_strides(shape_, target);
  std::vector<std::uint8_t> out(shape_numel(target));
  detail::for_each_broadcast(target, strides, strides,
                             [&](std::size_t i, std::size_t oa, std::size_t) { out[i] = bits_[oa]; });
  return out;
}

void MaskSet::require_nonempty_rows(const Shape& target) const {
  if (empty()) return;
  const auto bits = broadcast_to(target);
  const std::size_t row = target.back();
  for (std::size_t r = 0; r < bits.size(); r += row) {
    bool any = false;
    for (std::size_t j = 0; j < row && !any; ++j) any = bits[r + j] != 0;
    if (!any) {
      throw DegenerateMaskError("fully masked query row " + std::to_string(r / row) +
                                " at shape " + shape_str(target));
    }
  }
}

MaskSet MaskSet::operator&(const MaskSet& other) const {
  if (empty()) return other;
  if (other.empty()) return *this;
  const auto shape = detail::broadcast_shapes(shape_, other.shape_);
  auto a = broadcast_to(shape);
  const auto b = other.broadcast_to(shape);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] & b[i];
  return {shape, std::move(a), MaskKind::combined};
}

}  // namespace zodiac
