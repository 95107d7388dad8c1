#pragma once

#include "dsf/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>

namespace dsf {

/// Similarity transform p -> scale * rotation * p + translation.
template <typename Scalar>
struct Similarity {
    using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

    Scalar scale = Scalar(1);
    Matrix3 rotation = Matrix3::Identity();
    Vector3 translation = Vector3::Zero();

    static Similarity identity() { return {}; }

    /// The 3x4 matrix [scale * rotation | translation].
    Eigen::Matrix<Scalar, 3, 4> matrix() const
    {
        Eigen::Matrix<Scalar, 3, 4> m;
        m.template leftCols<3>() = scale * rotation;
        m.col(3) = translation;
        return m;
    }

    template <typename Derived>
    Points3<Scalar> operator()(const Eigen::MatrixBase<Derived>& points) const
    {
        Points3<Scalar> out = (scale * rotation) * points;
        out.colwise() += translation;
        return out;
    }
};

using Pose = Similarity<double>;
using Transform = Similarity<double>;

/// Throws invalid_pose unless scale > 0 and rotation is proper orthonormal.
template <typename Scalar>
void validate(const Similarity<Scalar>& t, Scalar tolerance = Scalar(1e-9))
{
    if (!(t.scale > Scalar(0)) || !std::isfinite(static_cast<double>(t.scale)))
        throw Error(ErrorCode::invalid_pose, "scale must be positive");
    const Scalar ortho = (t.rotation.transpose() * t.rotation - Similarity<Scalar>::Matrix3::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    if (!(ortho < tolerance))
        throw Error(ErrorCode::invalid_pose, "rotation is not orthonormal");
    if (!(t.rotation.determinant() > Scalar(0)))
        throw Error(ErrorCode::invalid_pose, "rotation has non-positive determinant");
    if (!t.translation.allFinite())
        throw Error(ErrorCode::invalid_pose, "translation is not finite");
}

template <typename Scalar, typename Derived>
Points3<Scalar> apply_transform(const Similarity<Scalar>& t, const Eigen::MatrixBase<Derived>& points)
{
    return t(points);
}

template <typename Scalar>
Similarity<Scalar> invert(const Similarity<Scalar>& t)
{
    Similarity<Scalar> inv;
    inv.scale = Scalar(1) / t.scale;
    inv.rotation = t.rotation.transpose();
    inv.translation = -(inv.scale * (inv.rotation * t.translation));
    return inv;
}

/// Returns a o b, i.e. p -> a(b(p)).
template <typename Scalar>
Similarity<Scalar> compose(const Similarity<Scalar>& a, const Similarity<Scalar>& b)
{
    Similarity<Scalar> c;
    c.scale = a.scale * b.scale;
    c.rotation = a.rotation * b.rotation;
    c.translation = a.scale * (a.rotation * b.translation) + a.translation;
    return c;
}

template <typename Scalar>
struct AlignResult {
    Points3<Scalar> aligned;
    Similarity<Scalar> transform;
};

/// Ratio of the second to the first singular value of the weighted
/// cross-covariance below which a configuration is rejected.
inline constexpr double kDegenerateSingularRatio = 1e-9;

/**
 * Weighted least-squares similarity alignment (weighted Umeyama).
 *
 * Finds (f, R, t) minimising sum_i w_i |f R k_i + t - d_i|^2 and returns it
 * together with the transformed source cloud. Reductions run in index order
 * so that points carrying zero weight leave the result bit-identical.
 */
template <typename Scalar, typename DerivedK, typename DerivedD>
AlignResult<Scalar> weighted_similarity_align(const Eigen::MatrixBase<DerivedK>& source,
                                              const Eigen::MatrixBase<DerivedD>& target,
                                              std::span<const Scalar> weights)
{
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

    const Eigen::Index n = source.cols();
    if (target.cols() != n || static_cast<Eigen::Index>(weights.size()) != n)
        throw Error(ErrorCode::invalid_argument, "source, target and weights differ in length");
    if (n < 3)
        throw Error(ErrorCode::too_few_points, "alignment needs at least three points");

    Scalar total(0);
    for (Scalar w : weights) {
        if (!(w >= Scalar(0)))
            throw Error(ErrorCode::invalid_argument, "weights must be nonnegative");
        total += w;
    }
    if (!(total > Scalar(0)))
        throw Error(ErrorCode::zero_total_weight, "sum of weights is zero");

    Vector3 mean_src = Vector3::Zero();
    Vector3 mean_dst = Vector3::Zero();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar w = weights[static_cast<std::size_t>(i)];
        if (w == Scalar(0))
            continue;
        mean_src += w * source.col(i);
        mean_dst += w * target.col(i);
    }
    mean_src /= total;
    mean_dst /= total;

    Matrix3 cov = Matrix3::Zero();
    Scalar var_src(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar w = weights[static_cast<std::size_t>(i)];
        if (w == Scalar(0))
            continue;
        const Vector3 ds = source.col(i) - mean_src;
        const Vector3 dd = target.col(i) - mean_dst;
        cov.noalias() += (w * dd) * ds.transpose();
        var_src += w * ds.squaredNorm();
    }
    cov /= total;
    var_src /= total;

    Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector3 sv = svd.singularValues();
    if (!(sv(0) > Scalar(0)) || sv(1) / sv(0) < Scalar(kDegenerateSingularRatio) || !(var_src > Scalar(0)))
        throw Error(ErrorCode::degenerate_configuration, "weighted point set has rank below two");

    Vector3 signs = Vector3::Ones();
    if ((svd.matrixU().determinant() * svd.matrixV().determinant()) < Scalar(0))
        signs(2) = Scalar(-1);

    Similarity<Scalar> t;
    t.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
    t.scale = sv.dot(signs) / var_src;
    t.translation = mean_dst - t.scale * (t.rotation * mean_src);

    return {t(source), t};
}

template <typename Scalar, typename DerivedK, typename DerivedD>
AlignResult<Scalar> weighted_similarity_align(const Eigen::MatrixBase<DerivedK>& source,
                                              const Eigen::MatrixBase<DerivedD>& target,
                                              const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights)
{
    return weighted_similarity_align<Scalar>(
        source, target, std::span<const Scalar>(weights.data(), static_cast<std::size_t>(weights.size())));
}

/// Weighted sum of squared residuals of a transform over matched points.
template <typename Scalar, typename DerivedK, typename DerivedD>
Scalar alignment_cost(const Similarity<Scalar>& t, const Eigen::MatrixBase<DerivedK>& source,
                      const Eigen::MatrixBase<DerivedD>& target, std::span<const Scalar> weights)
{
    const Points3<Scalar> moved = t(source);
    Scalar cost(0);
    for (Eigen::Index i = 0; i < source.cols(); ++i)
        cost += weights[static_cast<std::size_t>(i)] * (moved.col(i) - target.col(i)).squaredNorm();
    return cost;
}

} // namespace dsf
