#pragma once

#include <algorithm>
#include <vector>

#include "zodiac/errors.hpp"
#include "zodiac/tensor.hpp"

namespace zodiac::detail {

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Element strides of `s` viewed at broadcast shape `target` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& target) {
  if (s.size() > target.size()) {
    throw ShapeError("cannot broadcast " + shape_str(s) + " to " + shape_str(target));
  }
  std::vector<std::size_t> strides(target.size(), 0);
  const std::size_t off = target.size() - s.size();
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    if (s[i] != 1 && s[i] != target[i + off]) {
      throw ShapeError("cannot broadcast " + shape_str(s) + " to " + shape_str(target));
    }
    strides[i + off] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

/// Calls f(out_index, a_offset, b_offset) in row-major order over `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_numel(out);
  if (out.empty()) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t r = out.size();
  const std::size_t inner = out[r - 1];
  const std::size_t ia = sa[r - 1];
  const std::size_t ib = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t i = 0; i < n; i += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(i + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace zodiac::detail
