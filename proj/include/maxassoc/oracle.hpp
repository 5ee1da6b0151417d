/**
 * @file oracle.hpp
 * @brief Exact penalty-free reference solutions via the symmetric whitened
 *        eigenproblem; ground truth for tests and performance metrics.
 */

#pragma once

#include "covariance.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace maxassoc {

struct TrueSolution {
    std::vector<double> rhos;        // descending, in [0, 1]
    std::vector<Vector> a_vectors;   // normalized to a' Sxx a = 1
    std::vector<Vector> b_vectors;   // normalized to b' Syy b = 1
};

namespace detail {

/// Inverse square root of a positive definite matrix via eigendecomposition.
/// Eigenvalues below 1e-12 * max trigger a singularity error.
inline Matrix pd_inverse_sqrt(const Matrix& m, const char* name) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success)
        throw std::runtime_error(std::string("eigendecomposition failed for ") + name);
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin <= 1e-12 * std::max(lmax, 0.0) || lmax <= 0.0)
        throw std::runtime_error(std::string(name) + " is singular (smallest eigenvalue " +
                                 std::to_string(lmin) + ")");
    const Vector inv_sqrt = es.eigenvalues().cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
}

inline void fix_sign(Vector& v) {
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0.0) v = -v;
}

}  // namespace detail

/// Directions and associations from a known covariance. Solves the symmetric
/// whitened problem Sxx^{-1/2} Sxy Syy^{-1} Syx Sxx^{-1/2} u = rho^2 u and
/// maps eigenvectors back; equivalent to the unsymmetric product form.
inline TrueSolution true_directions(const JointCovariance& sigma, int orders) {
    const int kmax = static_cast<int>(std::min(sigma.p(), sigma.q()));
    if (orders < 1 || orders > kmax)
        throw std::invalid_argument("true_directions: orders must be in [1, min(p, q)]");

    const Matrix wx = detail::pd_inverse_sqrt(sigma.cxx, "Sigma_xx");
    const Matrix wy = detail::pd_inverse_sqrt(sigma.cyy, "Sigma_yy");
    const Matrix K = wx * sigma.cxy * wy;  // singular values are the rhos
    Eigen::SelfAdjointEigenSolver<Matrix> es(K * K.transpose());
    if (es.info() != Eigen::Success)
        throw std::runtime_error("true_directions: eigendecomposition failed");

    // eigenvalues ascending; walk from the top
    std::vector<std::pair<double, Vector>> ordered;
    for (Eigen::Index i = es.eigenvalues().size() - 1; i >= 0; --i)
        ordered.emplace_back(std::max(0.0, es.eigenvalues()(i)), es.eigenvectors().col(i));

    TrueSolution sol;
    for (int k = 0; k < orders; ++k) {
        const double rho = std::sqrt(ordered[static_cast<std::size_t>(k)].first);
        Vector a = wx * ordered[static_cast<std::size_t>(k)].second;
        // a' Sxx a = u'u = 1 already; guard against roundoff
        a /= std::sqrt(a.dot(sigma.cxx * a));
        Vector b = wy * wy * (sigma.cxy.transpose() * a);
        const double nb = b.dot(sigma.cyy * b);
        if (nb > 1e-24) {
            b /= std::sqrt(nb);
        } else {
            // rho == 0: any Syy-unit vector orthogonal to previous ones works
            b = wy * Vector::Unit(sigma.q(), k % sigma.q());
            b /= std::sqrt(b.dot(sigma.cyy * b));
        }
        detail::fix_sign(a);
        if (a.dot(sigma.cxy * b) < 0.0) b = -b;
        sol.rhos.push_back(std::min(1.0, rho));
        sol.a_vectors.push_back(std::move(a));
        sol.b_vectors.push_back(std::move(b));
    }
    return sol;
}

/// Classical CCA: sample-covariance plug-in of true_directions.
inline TrueSolution classical_cca(const DataMatrix& data_x, const DataMatrix& data_y, int orders) {
    if (data_x.rows() != data_y.rows())
        throw std::invalid_argument("classical_cca: row-count mismatch");
    const Eigen::Index n = data_x.rows();
    const Eigen::Index p = data_x.cols(), q = data_y.cols();
    if (n <= p + q)
        throw std::invalid_argument("classical_cca: requires n > p + q (got n = " +
                                    std::to_string(n) + ")");
    const JointEstimate est = estimate_joint(data_x, data_y, Estimator::pearson, false);
    return true_directions(est.blocks, orders);
}

}  // namespace maxassoc
