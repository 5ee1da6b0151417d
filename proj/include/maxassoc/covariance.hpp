/**
 * @file covariance.hpp
 * @brief Classical and robust covariance estimation for the stacked (x, y)
 *        variables: sample covariance, transformed rank correlations with
 *        MAD scaling, the pairwise OGK estimator, and nearest-PD repair.
 */

#pragma once

#include "data.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace maxassoc {

enum class Estimator { pearson, spearman, kendall, ogk };

inline const char* estimator_name(Estimator e) {
    switch (e) {
        case Estimator::pearson: return "pearson";
        case Estimator::spearman: return "spearman";
        case Estimator::kendall: return "kendall";
        case Estimator::ogk: return "ogk";
    }
    return "?";
}

inline std::optional<Estimator> parse_estimator(const std::string& s) {
    if (s == "pearson") return Estimator::pearson;
    if (s == "spearman") return Estimator::spearman;
    if (s == "kendall") return Estimator::kendall;
    if (s == "ogk") return Estimator::ogk;
    return std::nullopt;
}

struct CovarianceEstimate {
    Matrix matrix;
    Estimator estimator = Estimator::pearson;
    bool pd_repaired = false;
    double min_eigenvalue = 0.0;
    std::vector<int> degenerate_columns;  // constant columns (rank estimators)
};

/// Covariance of the stacked vector partitioned into the blocks the
/// optimizer consumes.
struct JointCovariance {
    Matrix cxx;  // p x p
    Matrix cyy;  // q x q
    Matrix cxy;  // p x q

    Eigen::Index p() const { return cxx.rows(); }
    Eigen::Index q() const { return cyy.rows(); }

    static JointCovariance from_full(const Matrix& full, Eigen::Index p) {
        const Eigen::Index q = full.rows() - p;
        if (p <= 0 || q <= 0)
            throw std::invalid_argument("invalid block split of joint covariance");
        JointCovariance jc;
        jc.cxx = full.topLeftCorner(p, p);
        jc.cyy = full.bottomRightCorner(q, q);
        jc.cxy = full.topRightCorner(p, q);
        return jc;
    }

    Matrix full() const {
        const Eigen::Index d = p() + q();
        Matrix f(d, d);
        f.topLeftCorner(p(), p()) = cxx;
        f.bottomRightCorner(q(), q()) = cyy;
        f.topRightCorner(p(), q()) = cxy;
        f.bottomLeftCorner(q(), p()) = cxy.transpose();
        return f;
    }
};

// ---------------------------------------------------------------------------
// Univariate scale estimates
// ---------------------------------------------------------------------------

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty vector");
    const std::size_t n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    double hi = *mid;
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

inline double median(const Vector& v) {
    return median(std::vector<double>(v.data(), v.data() + v.size()));
}

/// Median absolute deviation scaled by 1.4826 for consistency with the
/// standard deviation under normality.
inline double mad(const Vector& column) {
    if (column.size() < 1) throw std::invalid_argument("mad of empty vector");
    const double med = median(column);
    std::vector<double> dev(static_cast<std::size_t>(column.size()));
    for (Eigen::Index i = 0; i < column.size(); ++i)
        dev[static_cast<std::size_t>(i)] = std::abs(column(i) - med);
    return 1.4826 * median(std::move(dev));
}

/// Tau-scale of Yohai and Zamar: a MAD-anchored truncated second moment,
/// normalized to estimate the standard deviation under normality.
/// c1 weights the location step, c2 truncates the scale step.
inline double tau_scale(const Vector& x, double c1 = 4.5, double c2 = 3.0) {
    if (x.size() < 1) throw std::invalid_argument("tau_scale of empty vector");
    const double med = median(x);
    std::vector<double> dev(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i)
        dev[static_cast<std::size_t>(i)] = std::abs(x(i) - med);
    const double s0 = median(dev);  // raw MAD
    if (s0 == 0.0) return 0.0;
    // weighted location
    double wsum = 0.0, wx = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double u = (x(i) - med) / (s0 * c1);
        if (std::abs(u) <= 1.0) {
            const double w = (1.0 - u * u) * (1.0 - u * u);
            wsum += w;
            wx += w * x(i);
        }
    }
    const double mu = wsum > 0.0 ? wx / wsum : med;
    double rho_sum = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double u = (x(i) - mu) / s0;
        rho_sum += std::min(u * u, c2 * c2);
    }
    const double tau = s0 * std::sqrt(rho_sum / static_cast<double>(x.size()));
    // normal-consistency factor for c2 = 3 (integral of min((z/MAD)^2, c2^2))
    constexpr double kTauConsistency = 0.9616212311426079;
    return tau / kTauConsistency;
}

// ---------------------------------------------------------------------------
// Sample covariance
// ---------------------------------------------------------------------------

inline CovarianceEstimate pearson_cov(const DataMatrix& data) {
    data.validate();
    const auto n = data.rows();
    Matrix centered = data.values.rowwise() - data.values.colwise().mean();
    CovarianceEstimate est;
    est.matrix = (centered.transpose() * centered) / static_cast<double>(n - 1);
    est.matrix = 0.5 * (est.matrix + est.matrix.transpose().eval());
    est.estimator = Estimator::pearson;
    Eigen::SelfAdjointEigenSolver<Matrix> es(est.matrix, Eigen::EigenvaluesOnly);
    est.min_eigenvalue = es.eigenvalues().minCoeff();
    return est;
}

// ---------------------------------------------------------------------------
// Rank correlations
// ---------------------------------------------------------------------------

enum class RankKind { spearman, kendall };

namespace detail {

/// Average ranks (ties share the mean rank).
inline Vector average_ranks(const Vector& x) {
    const Eigen::Index n = x.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });
    Vector ranks(n);
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && x(idx[static_cast<std::size_t>(j + 1)]) == x(idx[static_cast<std::size_t>(i)])) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Eigen::Index k = i; k <= j; ++k) ranks(idx[static_cast<std::size_t>(k)]) = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson_corr(const Vector& x, const Vector& y) {
    const double n = static_cast<double>(x.size());
    const double mx = x.mean(), my = y.mean();
    const Vector cx = x.array() - mx, cy = y.array() - my;
    const double sx = cx.norm(), sy = cy.norm();
    if (sx == 0.0 || sy == 0.0) return 0.0;
    double r = cx.dot(cy) / (sx * sy);
    (void)n;
    return std::clamp(r, -1.0, 1.0);
}

/// Merge sort counting the number of exchanges (discordant-pair count).
inline std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf,
                                 std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += mid - i;
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
              buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

inline std::uint64_t tie_pairs(const std::vector<double>& sorted) {
    std::uint64_t t = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const std::uint64_t run = j - i + 1;
        t += run * (run - 1) / 2;
        i = j + 1;
    }
    return t;
}

/// Kendall's tau-b via Knight's O(n log n) algorithm.
inline double kendall_tau(const Vector& x, const Vector& y) {
    const std::size_t n = static_cast<std::size_t>(x.size());
    if (n < 2) throw std::invalid_argument("kendall_tau requires n >= 2");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (x(static_cast<Eigen::Index>(a)) != x(static_cast<Eigen::Index>(b)))
            return x(static_cast<Eigen::Index>(a)) < x(static_cast<Eigen::Index>(b));
        return y(static_cast<Eigen::Index>(a)) < y(static_cast<Eigen::Index>(b));
    });

    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    // ties in x and joint (x, y) ties, counted over the x-sorted order
    std::uint64_t n1 = 0, n3 = 0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && x(static_cast<Eigen::Index>(idx[j + 1])) == x(static_cast<Eigen::Index>(idx[i]))) ++j;
            const std::uint64_t run = j - i + 1;
            n1 += run * (run - 1) / 2;
            std::size_t a = i;
            while (a <= j) {
                std::size_t b = a;
                while (b + 1 <= j && y(static_cast<Eigen::Index>(idx[b + 1])) == y(static_cast<Eigen::Index>(idx[a]))) ++b;
                const std::uint64_t jr = b - a + 1;
                n3 += jr * (jr - 1) / 2;
                a = b + 1;
            }
            i = j + 1;
        }
    }
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y(static_cast<Eigen::Index>(idx[i]));
    std::vector<double> buf(n);
    const std::uint64_t swaps = merge_count(ys, buf, 0, n);
    const std::uint64_t n2 = tie_pairs(ys);  // ys is now sorted

    const double num = static_cast<double>(n0) - static_cast<double>(n1) -
                       static_cast<double>(n2) + static_cast<double>(n3) -
                       2.0 * static_cast<double>(swaps);
    const double den = std::sqrt((static_cast<double>(n0) - static_cast<double>(n1)) *
                                 (static_cast<double>(n0) - static_cast<double>(n2)));
    if (den == 0.0) return 0.0;
    return std::clamp(num / den, -1.0, 1.0);
}

}  // namespace detail

/// Pairwise rank-correlation matrix with the arcsine transformations that
/// make the estimates consistent for the normal correlation:
/// Spearman s_ij = (6/pi) asin(r^S/2), Kendall tau_ij = (2/pi) asin(r^K).
/// Constant columns get correlation 0; their indices go to `degenerate`.
inline Matrix rank_correlation(const DataMatrix& data, RankKind kind,
                               std::vector<int>* degenerate = nullptr) {
    data.validate();
    const Eigen::Index d = data.cols();
    const Matrix& X = data.values;

    std::vector<bool> constant(static_cast<std::size_t>(d), false);
    for (Eigen::Index j = 0; j < d; ++j) {
        if ((X.col(j).array() == X(0, j)).all()) {
            constant[static_cast<std::size_t>(j)] = true;
            if (degenerate) degenerate->push_back(static_cast<int>(j));
        }
    }

    std::vector<Vector> ranks;
    if (kind == RankKind::spearman) {
        ranks.reserve(static_cast<std::size_t>(d));
        for (Eigen::Index j = 0; j < d; ++j) ranks.push_back(detail::average_ranks(X.col(j)));
    }

    Matrix R = Matrix::Identity(d, d);
    constexpr double pi = 3.14159265358979323846;
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i + 1; j < d; ++j) {
            double r = 0.0;
            if (!constant[static_cast<std::size_t>(i)] && !constant[static_cast<std::size_t>(j)]) {
                if (kind == RankKind::spearman) {
                    const double rs = detail::pearson_corr(ranks[static_cast<std::size_t>(i)],
                                                           ranks[static_cast<std::size_t>(j)]);
                    r = (6.0 / pi) * std::asin(rs / 2.0);
                } else {
                    const double rk = detail::kendall_tau(X.col(i), X.col(j));
                    r = (2.0 / pi) * std::asin(rk);
                }
            }
            R(i, j) = R(j, i) = std::clamp(r, -1.0, 1.0);
        }
    }
    return R;
}

/// diag(scales) * corr * diag(scales)
inline Matrix corr_to_cov(const Matrix& corr, const Vector& scales) {
    if (corr.rows() != corr.cols() || corr.rows() != scales.size())
        throw std::invalid_argument("corr_to_cov: dimension mismatch");
    if ((scales.array() < 0.0).any())
        throw std::domain_error("corr_to_cov: negative scale");
    return scales.asDiagonal() * corr * scales.asDiagonal();
}

// ---------------------------------------------------------------------------
// Nearest positive-definite repair (Higham alternating projections)
// ---------------------------------------------------------------------------

struct NearestPdOptions {
    int max_iterations = 200;
    double tolerance = 1e-13;       // relative Frobenius change
    double eigen_floor_ratio = 1e-8;  // final eigenvalue floor relative to the largest
};

/// Alternating projections between the PSD cone and the set of symmetric
/// matrices with the input's diagonal, with Dykstra's correction. The input
/// diagonal is preserved, so positive definite inputs are fixed points.
inline Matrix nearest_pd(const Matrix& input, const NearestPdOptions& opts = {}) {
    if (input.rows() != input.cols())
        throw std::invalid_argument("nearest_pd: matrix must be square");
    if ((input - input.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * std::max(1.0, input.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("nearest_pd: matrix must be symmetric");

    const Eigen::Index d = input.rows();
    const Vector diag = input.diagonal();
    Matrix Y = 0.5 * (input + input.transpose().eval());
    Matrix dS = Matrix::Zero(d, d);
    const double scale = std::max(1.0, Y.norm());

    double residual = 0.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        const Matrix R = Y - dS;
        Eigen::SelfAdjointEigenSolver<Matrix> es(R);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("nearest_pd: eigendecomposition failed");
        const Vector ev = es.eigenvalues().cwiseMax(0.0);
        const Matrix X = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        dS = X - R;
        const Matrix Yprev = Y;
        Y = X;
        Y.diagonal() = diag;
        residual = (Y - Yprev).norm() / scale;
        if (residual <= opts.tolerance) {
            // enforce strict positive definiteness
            Eigen::SelfAdjointEigenSolver<Matrix> fin(Y);
            const double lmax = fin.eigenvalues().maxCoeff();
            const double floor = opts.eigen_floor_ratio * std::max(lmax, 0.0);
            if (fin.eigenvalues().minCoeff() < floor) {
                const Vector clipped = fin.eigenvalues().cwiseMax(floor);
                Y = fin.eigenvectors() * clipped.asDiagonal() * fin.eigenvectors().transpose();
                Y = 0.5 * (Y + Y.transpose().eval());
            }
            return Y;
        }
    }
    throw std::runtime_error("nearest_pd: no convergence after " +
                             std::to_string(opts.max_iterations) +
                             " iterations (residual " + std::to_string(residual) + ")");
}

// ---------------------------------------------------------------------------
// OGK estimator
// ---------------------------------------------------------------------------

struct OgkOptions {
    int iterations = 2;  // orthogonalization passes
    double c1 = 4.5;
    double c2 = 3.0;
};

/// Pairwise robust covariance from the polarization identity
/// cov(u, v) = (s(u+v)^2 - s(u-v)^2) / 4 with the tau-scale, followed by
/// orthogonalization passes; the eigenvalue recomposition makes the result
/// positive semidefinite.
inline CovarianceEstimate ogk_cov(const DataMatrix& data, const OgkOptions& opts = {}) {
    data.validate();
    const Eigen::Index n = data.rows();
    const Eigen::Index d = data.cols();

    auto scale = [&](const Vector& v) { return tau_scale(v, opts.c1, opts.c2); };

    Matrix Z = data.values;
    Matrix transform = Matrix::Identity(d, d);  // accumulated D * E products

    for (int pass = 0; pass < std::max(1, opts.iterations); ++pass) {
        Vector s(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            s(j) = scale(Z.col(j));
            if (s(j) <= 0.0)
                throw std::runtime_error("ogk_cov: degenerate robust scale in column " +
                                         std::to_string(j + 1));
        }
        Matrix Y = Z * s.cwiseInverse().asDiagonal();
        Matrix U = Matrix::Identity(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i + 1; j < d; ++j) {
                const double sp = scale(Y.col(i) + Y.col(j));
                const double sm = scale(Y.col(i) - Y.col(j));
                U(i, j) = U(j, i) = 0.25 * (sp * sp - sm * sm);
            }
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(U);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("ogk_cov: eigendecomposition failed");
        const Matrix E = es.eigenvectors();
        Z = Y * E;
        transform = transform * s.asDiagonal() * E;
    }

    Vector gamma(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sj = scale(Z.col(j));
        gamma(j) = sj * sj;
    }
    CovarianceEstimate est;
    est.matrix = transform * gamma.asDiagonal() * transform.transpose();
    est.matrix = 0.5 * (est.matrix + est.matrix.transpose().eval());
    est.estimator = Estimator::ogk;
    Eigen::SelfAdjointEigenSolver<Matrix> es(est.matrix, Eigen::EigenvaluesOnly);
    est.min_eigenvalue = es.eigenvalues().minCoeff();
    (void)n;
    return est;
}

// ---------------------------------------------------------------------------
// Joint estimation
// ---------------------------------------------------------------------------

struct JointEstimate {
    JointCovariance blocks;
    CovarianceEstimate full;
};

/// Stacks the two data sets, dispatches to the chosen estimator (rank
/// estimators are composed with MAD scaling via corr_to_cov), optionally
/// repairs indefiniteness, and partitions into Cxx, Cyy, Cxy.
inline JointEstimate estimate_joint(const DataMatrix& data_x, const DataMatrix& data_y,
                                    Estimator estimator, bool repair_pd) {
    if (data_x.rows() != data_y.rows())
        throw std::invalid_argument("estimate_joint: x has " + std::to_string(data_x.rows()) +
                                    " rows but y has " + std::to_string(data_y.rows()));
    const Eigen::Index p = data_x.cols();
    const Eigen::Index q = data_y.cols();
    DataMatrix stacked;
    stacked.values.resize(data_x.rows(), p + q);
    stacked.values.leftCols(p) = data_x.values;
    stacked.values.rightCols(q) = data_y.values;

    CovarianceEstimate est;
    switch (estimator) {
        case Estimator::pearson:
            est = pearson_cov(stacked);
            break;
        case Estimator::ogk:
            est = ogk_cov(stacked);
            break;
        case Estimator::spearman:
        case Estimator::kendall: {
            std::vector<int> degenerate;
            Matrix R = rank_correlation(
                stacked, estimator == Estimator::spearman ? RankKind::spearman : RankKind::kendall,
                &degenerate);
            if (repair_pd) R = nearest_pd(R);  // repair the correlation, then scale
            Vector scales(p + q);
            for (Eigen::Index j = 0; j < p + q; ++j) scales(j) = mad(stacked.values.col(j));
            est.matrix = corr_to_cov(R, scales);
            est.estimator = estimator;
            est.degenerate_columns = std::move(degenerate);
            est.pd_repaired = repair_pd;
            break;
        }
    }

    if (repair_pd && (estimator == Estimator::pearson || estimator == Estimator::ogk)) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(est.matrix, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-8) {
            est.matrix = nearest_pd(est.matrix);
            est.pd_repaired = true;
        }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(est.matrix, Eigen::EigenvaluesOnly);
    est.min_eigenvalue = es.eigenvalues().minCoeff();

    JointEstimate out;
    out.blocks = JointCovariance::from_full(est.matrix, p);
    out.full = std::move(est);
    return out;
}

}  // namespace maxassoc
