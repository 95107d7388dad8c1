#pragma once

#include "dsf/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dsf {

/// Visibility threshold on the segmentation map.
inline constexpr double kDefaultTheta = 0.5;

/// Correspondence value written outside the visible region.
inline constexpr double kCorSentinel = -2.0;

/**
 * Per-pixel image-space representation of facial geometry. All maps are
 * H x W with row index y and column index x; pixel (x, y) has its centre at
 * image coordinates (x + 0.5, y + 0.5).
 */
struct ImageSpaceRepr {
    MatrixXd cor_u;
    MatrixXd cor_v;
    MatrixXd dep;
    MatrixXd seg;
    MatrixXd cf;

    static ImageSpaceRepr empty(int height, int width);

    int height() const { return static_cast<int>(seg.rows()); }
    int width() const { return static_cast<int>(seg.cols()); }
};

/// Pixels with seg > theta.
Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> visible_mask(const ImageSpaceRepr& repr,
                                                                double theta = kDefaultTheta);
Eigen::Index visible_count(const ImageSpaceRepr& repr, double theta = kDefaultTheta);

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Occluder {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    Occluder clamped(int height, int width) const;
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

enum class CorNorm { l1, l2 };

struct ConfidenceParams {
    double a = 0.05;  // UV units
    double b = 0.05;  // image-view depth units
    CorNorm cor_norm = CorNorm::l1;
};

/// a = 0.05, b = 0.05 times the depth range of the visible region of gt.
ConfidenceParams default_confidence_params(const ImageSpaceRepr& gt, double theta = kDefaultTheta);

struct LossWeights {
    double w1 = 1.0;  // correspondence
    double w2 = 1.0;  // depth
    double w3 = 1.0;  // segmentation
    double w4 = 1.0;  // confidence
    double w5 = 1.0;  // geometric consistency
    double w6 = 1.0;  // offset map
    double w7 = 1.0;  // position map
    double w_alpha = 1.0;
    double w_T = 1.0;
};

/// Per-pixel result of rasterising a triangle list at pixel centres.
struct FragmentBuffer {
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> triangle;  // -1 where uncovered
    MatrixXd depth;
    std::vector<Vector3d> bary;  // row-major pixel order, weights of the triangle's vertices

    int height() const { return static_cast<int>(triangle.rows()); }
    int width() const { return static_cast<int>(triangle.cols()); }
    const Vector3d& barycentric(int x, int y) const { return bary[static_cast<std::size_t>(y) * width() + x]; }
};

/**
 * Z-buffered rasterisation of triangles given by 2D positions (image
 * coordinates) and per-vertex depth. A pixel is covered when its centre lies
 * inside a triangle; centres on an edge follow the top-left rule. Larger depth
 * is nearer and wins.
 */
FragmentBuffer rasterize(const Eigen::Matrix2Xd& positions, const VectorXd& depth,
                         std::span<const Triangle> triangles, int height, int width);

/// Ground-truth four-map render of a posed model instance.
ImageSpaceRepr render_representation(const MorphableModel& model, const Coefficients& coeffs, const Pose& pose,
                                     std::span<const Occluder> occluders, int height, int width);

/// Cf* = sqrt(exp(-|cor err| / a) * exp(-|dep err| / b)) on gt's visible region, 0 elsewhere.
MatrixXd confidence_ground_truth(const ImageSpaceRepr& pred, const ImageSpaceRepr& gt, const ConfidenceParams& params,
                                 double theta = kDefaultTheta);

struct RepresentationLoss {
    double cor = 0;
    double dep = 0;
    double seg = 0;
    double cf = 0;
    double total = 0;
};

/// Mean absolute segmentation error over the whole image.
double segmentation_loss(const ImageSpaceRepr& pred, const ImageSpaceRepr& gt);

/// Throws empty_visible_region when gt has no visible pixel.
RepresentationLoss representation_loss(const ImageSpaceRepr& pred, const ImageSpaceRepr& gt, const LossWeights& w,
                                       const ConfidenceParams& params, double theta = kDefaultTheta);

struct PerturbNoise {
    double cor_sigma = 0.0;
    double dep_sigma = 0.0;
    std::optional<Occluder> region;  // whole image when empty
};

/// Gaussian noise on cor/dep inside the region's visible pixels; cf is
/// recomputed against gt. Correspondences are clamped to [-1, 1].
ImageSpaceRepr perturb_representation(const ImageSpaceRepr& gt, const PerturbNoise& noise, std::uint64_t seed,
                                      const ConfidenceParams& params, double theta = kDefaultTheta);

} // namespace dsf
