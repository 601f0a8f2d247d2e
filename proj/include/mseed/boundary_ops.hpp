#pragma once

#include <vector>

#include "mseed/label_map.hpp"
#include "mseed/tensor.hpp"

namespace mseed {

struct Offset {
    int dy = 0;
    int dx = 0;
    bool operator==(const Offset&) const = default;
};

/// Neighborhood |dy| + |dx| <= radius, center excluded, in row-major order
/// (dy ascending, then dx ascending). radius 2 reproduces the 12 unit
/// entries of the 5x5 diamond filter.
struct DiamondTemplate {
    int radius = 0;
    std::vector<Offset> offsets;
};

DiamondTemplate diamond_offsets(int radius);

/// H x W: 1 where some in-bounds diamond neighbor carries a different label.
Tensor binary_boundary_label(const LabelMap& labels, int radius);

/// N x H x W: channel k is 1 at p when some in-bounds neighbor q has exactly
/// one of labels(p), labels(q) equal to k. Both sides of a transition are
/// marked.
Tensor semantic_boundary_label(const LabelMap& labels, int radius);

struct PseudoBoundary {
    Tensor value;             // N x H x W
    std::vector<int> argmax;  // winning offset per entry, -1 when no neighbor
    int radius = 0;
};

/// b(k,p) = max over in-bounds neighbors q of |s(k,q) - s(k,p)|. Ties go to
/// the first offset in template order.
PseudoBoundary pseudo_semantic_boundary(const Tensor& probs, int radius);

/// Routes grad_out to the winning (q, p) pairs with the sign of s(q) - s(p).
Tensor pseudo_semantic_boundary_backward(const Tensor& grad_out, const Tensor& probs, const PseudoBoundary& forward);

} // namespace mseed
