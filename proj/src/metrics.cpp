#include "dsf/metrics.hpp"

#include <cmath>

namespace dsf {

namespace {

void require_same_size(const Mesh& a, const Mesh& b)
{
    if (a.cols() != b.cols() || a.cols() == 0)
        throw Error(ErrorCode::invalid_argument, "meshes differ in vertex count or are empty");
}

double mean_distance(const Mesh& a, const Mesh& b) { return (a - b).colwise().norm().mean(); }

} // namespace

double nme_dense(const Mesh& pred, const Mesh& gt)
{
    require_same_size(pred, gt);
    const double w = gt.row(0).maxCoeff() - gt.row(0).minCoeff();
    const double h = gt.row(1).maxCoeff() - gt.row(1).minCoeff();
    if (!(w * h > 0.0))
        throw Error(ErrorCode::degenerate_configuration, "ground-truth bounding box has zero area");
    return 100.0 * mean_distance(pred, gt) / std::sqrt(w * h);
}

double nme_reconstruction(const Mesh& pred, const Mesh& gt, const MorphableModel& model)
{
    require_same_size(pred, gt);
    if (model.eye_outer_left >= gt.cols() || model.eye_outer_right >= gt.cols())
        throw Error(ErrorCode::invalid_argument, "eye landmarks outside the mesh");
    const double interocular = (gt.col(model.eye_outer_left) - gt.col(model.eye_outer_right)).norm();
    if (!(interocular > 0.0))
        throw Error(ErrorCode::degenerate_configuration, "zero interocular distance");
    const VectorXd weights = VectorXd::Ones(pred.cols());
    const Mesh aligned = weighted_similarity_align<double>(pred, gt, weights).aligned;
    return 100.0 * mean_distance(aligned, gt) / interocular;
}

double angle_difference(double a, double b)
{
    double d = std::fmod(a - b + 180.0, 360.0);
    if (d < 0.0)
        d += 360.0;
    return d - 180.0;
}

PoseMae pose_mae(std::span<const Pose> pred, std::span<const Pose> gt)
{
    if (pred.size() != gt.size())
        throw Error(ErrorCode::invalid_argument, "pose lists differ in length");
    if (pred.empty())
        throw Error(ErrorCode::invalid_argument, "pose lists are empty");
    PoseMae mae;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const EulerAngles p = euler_from_rotation(pred[i].rotation);
        const EulerAngles g = euler_from_rotation(gt[i].rotation);
        mae.yaw += std::abs(angle_difference(p.yaw, g.yaw));
        mae.pitch += std::abs(angle_difference(p.pitch, g.pitch));
        mae.roll += std::abs(angle_difference(p.roll, g.roll));
    }
    const auto n = static_cast<double>(pred.size());
    mae.yaw /= n;
    mae.pitch /= n;
    mae.roll /= n;
    mae.mean = (mae.yaw + mae.pitch + mae.roll) / 3.0;
    return mae;
}

double vertex_rmse(const Mesh& a, const Mesh& b)
{
    require_same_size(a, b);
    return std::sqrt((a - b).colwise().squaredNorm().mean());
}

} // namespace dsf
