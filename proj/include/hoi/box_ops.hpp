// Box overlap measures in double precision.
#pragma once

#include "hoi/annotation.hpp"

namespace hoi {

// Intersection over union in [0, 1]; 0 when the union is empty.
double iou(const Box& a, const Box& b);
// Generalized IoU in [-1, 1].
double giou(const Box& a, const Box& b);

}  // namespace hoi
