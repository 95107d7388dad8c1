#pragma once

#include "dsf/model.hpp"
#include "dsf/raster.hpp"

#include <optional>

namespace dsf {

/**
 * UV-space geometry: per-texel offset from the mean shape (canonical units)
 * and image-view position. Texel (col j, row i) has its centre at
 * uv = (-1 + (j + 0.5) * 2 / w, -1 + (i + 0.5) * 2 / h).
 */
struct UvMaps {
    std::array<MatrixXd, 3> off;
    std::array<MatrixXd, 3> pos;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> valid;

    int height() const { return static_cast<int>(valid.rows()); }
    int width() const { return static_cast<int>(valid.cols()); }
};

/// Rasterises the UV-space triangles. Texels whose centre is inside a
/// triangle get interpolated values; texels within one texel of the atlas
/// border are filled by linear extension of the nearest triangle so that
/// bilinear lookups at border vertices stay exact for linear fields.
UvMaps to_uv_maps(const MorphableModel& model, const Coefficients& coeffs, const Pose& pose, int height, int width);

/// (1 - beta) * ms + beta * is on the intersection of the valid masks.
UvMaps fuse_blend(const UvMaps& ms, const UvMaps& is, double beta);

/// Blend weight for fuse_blend from the mean predicted confidence over V.
double blend_weight_from_confidence(const ImageSpaceRepr& repr, double theta = kDefaultTheta);

/// Bilinear lookup of a 3-channel map at a UV location over valid texels,
/// falling back to the nearest valid texel where a neighbour is missing.
Vector3d sample_uv_map(const std::array<MatrixXd, 3>& channels,
                       const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& valid, const Vector2d& uv);

/// S = mean + Off sampled at vertex UVs, then similarity-aligned onto Pos.
Mesh geometry_from_maps(const UvMaps& maps, const MorphableModel& model,
                        const std::optional<MatrixXd>& cf_weights = std::nullopt);

/// w6 * |Off - Off*|_2 + w7 * |Pos - Pos*|_2 over the valid intersection,
/// each norm divided by sqrt(valid texel count), i.e. a per-texel RMS.
double fusion_loss(const UvMaps& pred, const UvMaps& gt, const LossWeights& w);

} // namespace dsf
