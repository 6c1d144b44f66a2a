#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "zodiac/tensor.hpp"

namespace zodiac {

enum class MaskKind { none, causal, padding, combined };

std::string_view to_string(MaskKind kind);

/// Boolean attention mask, broadcastable to [batch, heads, L_q, L_k].
///
/// The same mask serves two semantics: attention maps replace masked entries
/// with a large negative sentinel before softmax, while regional pooling
/// multiplies by the mask and renormalizes by the number of kept entries.
class MaskSet {
 public:
  /// The absent mask (kind none). Applying it is the identity.
  MaskSet() = default;
  MaskSet(Shape shape, std::vector<std::uint8_t> bits, MaskKind kind);

  static MaskSet none() { return {}; }
  /// [L, L] lower-triangular mask.
  static MaskSet causal(std::size_t length);
  /// [batch, 1, 1, max_len] key-padding mask.
  static MaskSet padding(const std::vector<std::size_t>& lengths, std::size_t max_len);
  /// [batch, 1, max_len, 1] query-row padding.
  static MaskSet padding_rows(const std::vector<std::size_t>& lengths, std::size_t max_len);
  /// [batch, 1, L, L] causal AND key padding.
  static MaskSet combined(const std::vector<std::size_t>& lengths, std::size_t max_len);
  /// Source key padding broadcast over target rows: [batch, 1, target_len, source_len].
  static MaskSet cross(const std::vector<std::size_t>& source_lengths, std::size_t source_len,
                       std::size_t target_len);

  bool empty() const { return kind_ == MaskKind::none; }
  MaskKind kind() const { return kind_; }
  const Shape& shape() const { return shape_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  bool at(std::initializer_list<std::size_t> index) const;

  /// Materializes the mask at `target` shape (numpy broadcasting).
  std::vector<std::uint8_t> broadcast_to(const Shape& target) const;

  /// Throws DegenerateMaskError if any query row over the last axis has no
  /// kept key once broadcast to `target`.
  void require_nonempty_rows(const Shape& target) const;

  /// Elementwise AND; the result is tagged `combined`.
  MaskSet operator&(const MaskSet& other) const;

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
  MaskKind kind_ = MaskKind::none;
};

}  // namespace zodiac
