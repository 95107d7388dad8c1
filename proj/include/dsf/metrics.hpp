#pragma once

#include "dsf/model.hpp"

#include <span>

namespace dsf {

/// Mean vertex distance over sqrt(h * w) of the ground truth's 2D bounding box, in percent.
double nme_dense(const Mesh& pred, const Mesh& gt);

/// Mean vertex distance after similarity-aligning pred onto gt, over the
/// outer interocular distance of gt, in percent.
double nme_reconstruction(const Mesh& pred, const Mesh& gt, const MorphableModel& model);

/// Shortest signed arc a - b in degrees, in [-180, 180).
double angle_difference(double a, double b);

struct PoseMae {
    double yaw = 0;
    double pitch = 0;
    double roll = 0;
    double mean = 0;
};

PoseMae pose_mae(std::span<const Pose> pred, std::span<const Pose> gt);

/// Root-mean-square vertex distance.
double vertex_rmse(const Mesh& a, const Mesh& b);

} // namespace dsf
