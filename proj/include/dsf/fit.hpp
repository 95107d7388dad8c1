#pragma once

#include "dsf/align.hpp"
#include "dsf/model.hpp"
#include "dsf/nn.hpp"
#include "dsf/raster.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace dsf {

struct SamplerConfig {
    int m = 1024;
    double theta = kDefaultTheta;
    std::uint64_t seed = 0;
};

/// A point on the model surface: a triangle's vertices and barycentric weights.
struct SurfacePoint {
    std::array<std::uint32_t, 3> vertices{};
    Vector3d weights = Vector3d(1.0, 0.0, 0.0);
};

/// Visible pixels lifted to 3D. Columns of the matrices are points.
struct PointCloudSample {
    std::vector<Eigen::Vector2i> pixels;
    Matrix3Xd points_image;   // (x, y, dep) with x, y at pixel centres
    Eigen::Matrix2Xd uv;      // correspondence values
    VectorXd cf;              // confidence weights
    Matrix3Xd canonical_ref;  // mean-face point at the pixel's UV location
    std::vector<std::uint32_t> matched_vertex;  // vertex with the nearest UV
    std::vector<SurfacePoint> surface;          // exact UV location on the mesh

    Eigen::Index size() const { return points_image.cols(); }
};

/**
 * Grid-bucketed lookups into a model's UV atlas. Immutable after
 * construction and safe to share between threads.
 */
class UvIndex {
public:
    explicit UvIndex(const MorphableModel& model);

    /// Exact nearest vertex in UV distance; ties go to the lowest index.
    std::uint32_t nearest_vertex(const Vector2d& uv) const;

    /// Triangle containing uv with its barycentric weights. Queries outside
    /// the atlas fall back to the nearest vertex.
    SurfacePoint locate(const Vector2d& uv) const;

private:
    int cell_of(double coord) const;

    Eigen::Matrix2Xd uv_;
    std::vector<Triangle> triangles_;
    int grid_ = 1;
    double cell_size_ = 2.0;
    std::vector<std::vector<std::uint32_t>> vertex_cells_;
    std::vector<std::vector<std::uint32_t>> triangle_cells_;
};

/// Uniform sampling without replacement over seg > theta; takes every visible
/// pixel when fewer than m exist.
PointCloudSample sample_point_cloud(const ImageSpaceRepr& repr, const SamplerConfig& cfg);

PointCloudSample attach_canonical_refs(PointCloudSample sample, const MorphableModel& model);
PointCloudSample attach_canonical_refs(PointCloudSample sample, const MorphableModel& model, const UvIndex& index);

/// Aligns the image-view points onto their canonical references weighted by cf.
AlignResult<double> align_to_canonical(const PointCloudSample& sample);

/// Model rows at the sampled surface points: point i is
/// mean_points.segment<3>(3i) + basis_rows.middleRows<3>(3i) * alpha.
struct LinearizedSample {
    MatrixXd basis_rows;
    VectorXd mean_points;
};

LinearizedSample linearize(const PointCloudSample& sample, const MorphableModel& model);

/// argmin sum_i w_i |target_i - model_i(alpha)|^2 + lambda sum_k (alpha_k / sigma_k)^2.
Coefficients fit_coeffs_least_squares(const Matrix3Xd& target, const LinearizedSample& lin, const VectorXd& weights,
                                      const MorphableModel& model, double lambda);
/// Same with the sample's cf as weights.
Coefficients fit_coeffs_least_squares(const Matrix3Xd& canonical_points, const PointCloudSample& sample,
                                      const MorphableModel& model, double lambda);

enum class SolverKind { least_squares, pointnet };

struct SolverConfig {
    SolverKind kind = SolverKind::least_squares;
    double lambda = 1e-4;
    bool use_xyz = true;
    bool use_cor = true;
    bool use_cf = true;
    bool use_align = true;
    bool use_cons_loss = false;
    /// Gauss-Newton rounds of the least-squares solver that refine the
    /// canonical alignment and the coefficients jointly. 0 is a single pass.
    int refine_iterations = 10;

    int feature_width() const { return (use_xyz ? 3 : 0) + (use_cor ? 2 : 0) + (use_cf ? 1 : 0); }
};

/// Per-point network input, one column per point: [xyz | cor | cf] subset.
MatrixXd pointnet_features(const Matrix3Xd& points, const PointCloudSample& sample, const SolverConfig& solver);

Coefficients fit_coeffs_pointnet(const nn::PointNetLite& net, const MatrixXd& features, Eigen::Index d_id);

struct PostProcessResult {
    Coefficients coeffs;
    Pose pose;            // canonical view to image view
    Mesh mesh;            // full mesh in image view
    PointCloudSample sample;
    Matrix3Xd canonical_points;  // sampled points moved to the canonical view
    Transform to_canonical;
};

/// Sample, align to canonical view, solve coefficients, align back.
PostProcessResult post_process(const ImageSpaceRepr& repr, const MorphableModel& model, const SamplerConfig& cfg,
                               const SolverConfig& solver, const nn::PointNetLite* net = nullptr,
                               const UvIndex* index = nullptr);

struct PostProcessLoss {
    double post = 0;
    double cons = 0;
};

/// L_cons is the mean squared distance between the canonical sample points and
/// the fitted model's points at the same surface locations.
PostProcessLoss post_process_loss(const Coefficients& alpha, const Coefficients& alpha_gt,
                                  const Matrix3Xd& canonical_points, const Matrix3Xd& fitted_points,
                                  const LossWeights& w);

/// Network training example built from a representation and its ground truth.
nn::TrainSample make_train_sample(const ImageSpaceRepr& repr, const MorphableModel& model,
                                  const Coefficients& gt, const SamplerConfig& cfg, const SolverConfig& solver,
                                  const UvIndex& index, const std::shared_ptr<const MatrixXd>& stacked_basis);

} // namespace dsf
