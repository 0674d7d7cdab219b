#pragma once

#include "comanip/types.hpp"

namespace comanip {

/// Moore-Penrose pseudo-inverse via SVD. Singular values below threshold
/// are damped (s / (s^2 + threshold^2)) rather than inverted.
MatX pinv(const MatX& a, double threshold = 1e-6);

/// Symmetric part of a square matrix.
inline Mat3 symmetrize(const Mat3& m) { return 0.5 * (m + m.transpose()); }

bool is_spd(const MatX& m, double tol = 0.0);

}  // namespace comanip
