#pragma once

#include "dsf/model.hpp"

#include <random>

namespace fixture {

/// The 2048-vertex, 20 + 8 dimensional model used across the suites.
inline const dsf::MorphableModel& face()
{
    static const dsf::MorphableModel model = dsf::synthesize_model(7, 2048, 20, 8);
    return model;
}

/// A coarse model for tests that only need the algebra.
inline const dsf::MorphableModel& small_face()
{
    static const dsf::MorphableModel model = dsf::synthesize_model(3, 256, 6, 3);
    return model;
}

inline dsf::Coefficients random_coeffs(const dsf::MorphableModel& model, std::mt19937_64& rng, double spread = 1.0)
{
    std::normal_distribution<double> n(0.0, spread);
    Eigen::VectorXd a(model.d_total());
    for (Eigen::Index k = 0; k < a.size(); ++k)
        a(k) = model.sigma(k) * n(rng);
    return dsf::Coefficients::from_stacked(a, model.d_id());
}

/// Camera at the image centre with the face filling about 60% of the frame.
inline dsf::Pose centred_pose(int size, const Eigen::Matrix3d& rotation = Eigen::Matrix3d::Identity())
{
    dsf::Pose p;
    p.scale = 0.28 * size;
    p.rotation = rotation;
    p.translation = Eigen::Vector3d(0.5 * size, 0.5 * size, 0.0);
    return p;
}

} // namespace fixture
