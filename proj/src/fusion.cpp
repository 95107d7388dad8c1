#include "dsf/fusion.hpp"

#include "dsf/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsf {

namespace {

void require_same_shape(const UvMaps& a, const UvMaps& b)
{
    if (a.height() != b.height() || a.width() != b.width())
        throw Error(ErrorCode::invalid_argument, "uv map shapes differ");
}

UvMaps allocate(int height, int width)
{
    UvMaps m;
    for (int c = 0; c < 3; ++c) {
        m.off[static_cast<std::size_t>(c)] = MatrixXd::Zero(height, width);
        m.pos[static_cast<std::size_t>(c)] = MatrixXd::Zero(height, width);
    }
    m.valid.setConstant(height, width, false);
    return m;
}

// UV coordinate -> continuous texel coordinate where texel centres are integers.
double to_texel(double coord, int size) { return (coord + 1.0) * 0.5 * size - 0.5; }

} // namespace

UvMaps to_uv_maps(const MorphableModel& model, const Coefficients& coeffs, const Pose& pose, int height, int width)
{
    if (height < 8 || width < 8)
        throw Error(ErrorCode::invalid_argument, "uv maps need at least 8 x 8 texels");

    const Mesh shape = shape_from_coeffs(model, coeffs);
    const Mesh offset = shape - model.mean_mesh();
    const Mesh image = project(shape, pose);

    // Texel centres sit at half-integer raster coordinates.
    Eigen::Matrix2Xd raster(2, model.n_vertices());
    raster.row(0) = (model.uv.row(0).array() + 1.0) * 0.5 * width;
    raster.row(1) = (model.uv.row(1).array() + 1.0) * 0.5 * height;
    const FragmentBuffer frags = rasterize(raster, VectorXd::Zero(model.n_vertices()), model.triangles, height, width);

    UvMaps maps = allocate(height, width);
    auto write = [&](int x, int y, const Triangle& tri, const Vector3d& l) {
        for (std::size_t c = 0; c < 3; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            maps.off[c](y, x) = l(0) * offset(ci, tri[0]) + l(1) * offset(ci, tri[1]) + l(2) * offset(ci, tri[2]);
            maps.pos[c](y, x) = l(0) * image(ci, tri[0]) + l(1) * image(ci, tri[1]) + l(2) * image(ci, tri[2]);
        }
        maps.valid(y, x) = true;
    };

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (frags.triangle(y, x) >= 0)
                write(x, y, model.triangles[static_cast<std::size_t>(frags.triangle(y, x))], frags.barycentric(x, y));

    // Border ring: extend the closest triangle's affine attributes.
    MatrixXd best = MatrixXd::Constant(height, width, std::numeric_limits<double>::infinity());
    std::vector<std::pair<std::size_t, Vector3d>> border(static_cast<std::size_t>(height) * width,
                                                         {std::numeric_limits<std::size_t>::max(), Vector3d::Zero()});
    const double reach = 1.5;  // texels
    for (std::size_t t = 0; t < model.triangles.size(); ++t) {
        const Triangle& tri = model.triangles[t];
        const Vector2d a = raster.col(tri[0]), b = raster.col(tri[1]), c = raster.col(tri[2]);
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (area == 0.0)
            continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - reach)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - reach)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) + reach)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (maps.valid(y, x))
                    continue;
                const Vector2d p(x + 0.5, y + 0.5);
                // Distance from the texel centre to the triangle.
                double dist = std::numeric_limits<double>::infinity();
                const std::array<std::pair<Vector2d, Vector2d>, 3> edges = {{{a, b}, {b, c}, {c, a}}};
                for (const auto& [e0, e1] : edges) {
                    const Vector2d d = e1 - e0;
                    const double s = std::clamp((p - e0).dot(d) / d.squaredNorm(), 0.0, 1.0);
                    dist = std::min(dist, (e0 + s * d - p).norm());
                }
                if (dist > reach || dist >= best(y, x))
                    continue;
                best(y, x) = dist;
                const double wb = ((p.x() - a.x()) * (c.y() - a.y()) - (p.y() - a.y()) * (c.x() - a.x())) / area;
                const double wc = ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x())) / area;
                border[static_cast<std::size_t>(y) * width + x] = {t, Vector3d(1.0 - wb - wc, wb, wc)};
            }
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto& [t, l] = border[static_cast<std::size_t>(y) * width + x];
            if (t != std::numeric_limits<std::size_t>::max())
                write(x, y, model.triangles[t], l);
        }
    }
    return maps;
}

UvMaps fuse_blend(const UvMaps& ms, const UvMaps& is, double beta)
{
    require_same_shape(ms, is);
    if (!(beta >= 0.0 && beta <= 1.0))
        throw Error(ErrorCode::invalid_argument, "blend weight must lie in [0, 1]");
    UvMaps out = allocate(ms.height(), ms.width());
    out.valid = ms.valid && is.valid;
    for (std::size_t c = 0; c < 3; ++c) {
        for (int y = 0; y < out.height(); ++y) {
            for (int x = 0; x < out.width(); ++x) {
                if (!out.valid(y, x))
                    continue;
                if (beta == 0.0) {
                    out.off[c](y, x) = ms.off[c](y, x);
                    out.pos[c](y, x) = ms.pos[c](y, x);
                } else if (beta == 1.0) {
                    out.off[c](y, x) = is.off[c](y, x);
                    out.pos[c](y, x) = is.pos[c](y, x);
                } else {
                    out.off[c](y, x) = (1.0 - beta) * ms.off[c](y, x) + beta * is.off[c](y, x);
                    out.pos[c](y, x) = (1.0 - beta) * ms.pos[c](y, x) + beta * is.pos[c](y, x);
                }
            }
        }
    }
    return out;
}

double blend_weight_from_confidence(const ImageSpaceRepr& repr, double theta)
{
    const auto mask = visible_mask(repr, theta);
    const Eigen::Index n = mask.count();
    if (n == 0)
        return 0.0;
    return std::clamp(mask.select(repr.cf.array(), 0.0).sum() / static_cast<double>(n), 0.0, 1.0);
}

Vector3d sample_uv_map(const std::array<MatrixXd, 3>& channels,
                       const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& valid, const Vector2d& uv)
{
    const auto h = static_cast<int>(valid.rows());
    const auto w = static_cast<int>(valid.cols());
    const double tx = to_texel(uv.x(), w);
    const double ty = to_texel(uv.y(), h);
    const int x0 = static_cast<int>(std::floor(tx));
    const int y0 = static_cast<int>(std::floor(ty));
    const double fx = tx - x0;
    const double fy = ty - y0;

    auto ok = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && valid(y, x); };
    auto at = [&](int x, int y) {
        return Vector3d(channels[0](y, x), channels[1](y, x), channels[2](y, x));
    };
    if (ok(x0, y0) && ok(x0 + 1, y0) && ok(x0, y0 + 1) && ok(x0 + 1, y0 + 1)) {
        return (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) + (1 - fx) * fy * at(x0, y0 + 1) +
               fx * fy * at(x0 + 1, y0 + 1);
    }

    // Nearest valid texel, scanning outward ring by ring.
    const int cx = std::clamp(static_cast<int>(std::lround(tx)), 0, w - 1);
    const int cy = std::clamp(static_cast<int>(std::lround(ty)), 0, h - 1);
    for (int r = 0; r < std::max(w, h); ++r) {
        double best = std::numeric_limits<double>::infinity();
        int bx = -1, by = -1;
        for (int y = cy - r; y <= cy + r; ++y) {
            for (int x = cx - r; x <= cx + r; ++x) {
                if (std::max(std::abs(x - cx), std::abs(y - cy)) != r || !ok(x, y))
                    continue;
                const double d = (x - tx) * (x - tx) + (y - ty) * (y - ty);
                if (d < best) {
                    best = d;
                    bx = x;
                    by = y;
                }
            }
        }
        if (bx >= 0)
            return at(bx, by);
    }
    throw Error(ErrorCode::insufficient_valid_texels, "uv map has no valid texel");
}

Mesh geometry_from_maps(const UvMaps& maps, const MorphableModel& model, const std::optional<MatrixXd>& cf_weights)
{
    if (maps.valid.count() < 3)
        throw Error(ErrorCode::insufficient_valid_texels, "fewer than three valid texels");
    if (cf_weights && (cf_weights->rows() != maps.height() || cf_weights->cols() != maps.width()))
        throw Error(ErrorCode::invalid_argument, "confidence weights must match the uv map size");

    const Eigen::Index n = model.n_vertices();
    Mesh shape = model.mean_mesh();
    Matrix3Xd targets(3, n);
    VectorXd weights = VectorXd::Ones(n);
    std::array<MatrixXd, 3> cf;
    if (cf_weights)
        cf = {*cf_weights, *cf_weights, *cf_weights};
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector2d uv = model.uv.col(i);
        shape.col(i) += sample_uv_map(maps.off, maps.valid, uv);
        targets.col(i) = sample_uv_map(maps.pos, maps.valid, uv);
        if (cf_weights)
            weights(i) = std::max(0.0, sample_uv_map(cf, maps.valid, uv)(0));
    }
    try {
        return weighted_similarity_align<double>(shape, targets, weights).aligned;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::degenerate_configuration || e.code() == ErrorCode::too_few_points)
            throw Error(ErrorCode::insufficient_valid_texels, e.what());
        throw;
    }
}

double fusion_loss(const UvMaps& pred, const UvMaps& gt, const LossWeights& w)
{
    require_same_shape(pred, gt);
    const auto mask = pred.valid && gt.valid;
    const Eigen::Index n = mask.count();
    if (n == 0)
        return 0.0;
    double off = 0.0, pos = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        off += mask.select((pred.off[c] - gt.off[c]).array().square(), 0.0).sum();
        pos += mask.select((pred.pos[c] - gt.pos[c]).array().square(), 0.0).sum();
    }
    const double norm = std::sqrt(static_cast<double>(n));
    return w.w6 * std::sqrt(off) / norm + w.w7 * std::sqrt(pos) / norm;
}

} // namespace dsf
