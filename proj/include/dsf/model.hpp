#pragma once

#include "dsf/align.hpp"
#include "dsf/common.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace dsf {

using Triangle = std::array<std::uint32_t, 3>;

/**
 * Linear PCA face prior S = mean + basis_id * alpha_id + basis_exp * alpha_exp.
 *
 * Shapes are stored interleaved (x0, y0, z0, x1, ...). The canonical frame has
 * x to the right, y down the face and z toward the viewer, so an identity
 * rotation renders an upright, front-facing head.
 */
struct MorphableModel {
    VectorXd mean;        // 3n
    MatrixXd basis_id;    // 3n x d_id
    MatrixXd basis_exp;   // 3n x d_exp
    VectorXd sigma;       // d_id + d_exp, identity first
    std::vector<Triangle> triangles;
    std::uint32_t nose_tip = 0;
    std::uint32_t eye_outer_left = 0;
    std::uint32_t eye_outer_right = 0;
    Eigen::Matrix2Xd uv;  // per-vertex texture coordinates in [-1, 1]^2

    Eigen::Index n_vertices() const { return mean.size() / 3; }
    Eigen::Index d_id() const { return basis_id.cols(); }
    Eigen::Index d_exp() const { return basis_exp.cols(); }
    Eigen::Index d_total() const { return d_id() + d_exp(); }

    Mesh mean_mesh() const { return Eigen::Map<const Matrix3Xd>(mean.data(), 3, n_vertices()); }

    /// [basis_id basis_exp] as a single 3n x (d_id + d_exp) matrix.
    MatrixXd stacked_basis() const;
};

/// Throws invalid_argument describing the first violated model invariant.
void validate(const MorphableModel& model);

/// Deterministic toy model: deformed ellipsoidal face patch with a nose bump,
/// smooth polynomial deformation bases orthonormalised by Gram-Schmidt and a
/// cylindrical UV unwrap.
MorphableModel synthesize_model(std::uint64_t seed, int n_vertices, int d_id, int d_exp);

Mesh shape_from_coeffs(const MorphableModel& model, const Coefficients& coeffs);

/// Orthographic projection G = f R S + t; z is retained as depth.
Mesh project(const Mesh& mesh, const Pose& pose);

/// Image-view mesh with z measured from the nose tip, the frame of the depth map
/// and of meshes recovered from it.
Mesh project_relative(const MorphableModel& model, const Coefficients& coeffs, const Pose& pose);

/// Row-major [fR | t] as twelve values.
Eigen::Matrix<double, 12, 1> pose_to_vec(const Pose& pose);
Pose pose_from_vec(const Eigen::Matrix<double, 12, 1>& v);

/// Yaw, pitch and roll in degrees.
struct EulerAngles {
    double yaw = 0;
    double pitch = 0;
    double roll = 0;
};

/// Decomposes R = Rz(roll) * Rx(pitch) * Ry(yaw). At gimbal lock roll is 0.
EulerAngles euler_from_rotation(const Matrix3d& rotation);
Matrix3d rotation_from_euler(const EulerAngles& angles);

} // namespace dsf
