#include "comanip/linalg.hpp"

#include <Eigen/SVD>

namespace comanip {

MatX pinv(const MatX& a, double threshold)
{
    Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VecX& s = svd.singularValues();
    VecX inv(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        inv[i] = s[i] > threshold ? 1.0 / s[i] : s[i] / (s[i] * s[i] + threshold * threshold);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

bool is_spd(const MatX& m, double tol)
{
    if (m.rows() != m.cols()) return false;
    if (!(m - m.transpose()).isZero(1e-9 * (1.0 + m.norm()))) return false;
    Eigen::SelfAdjointEigenSolver<MatX> es(m);
    return es.eigenvalues().minCoeff() > tol;
}

}  // namespace comanip
