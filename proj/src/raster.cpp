#include "dsf/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dsf {

namespace {

void require_same_shape(const ImageSpaceRepr& a, const ImageSpaceRepr& b)
{
    if (a.height() != b.height() || a.width() != b.width())
        throw Error(ErrorCode::invalid_argument, "representation shapes differ");
}

double edge(const Vector2d& a, const Vector2d& b, const Vector2d& p)
{
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// With y pointing down and the interior on the positive side, top edges run
// horizontally to the right and left edges run upward.
bool is_top_left(const Vector2d& a, const Vector2d& b)
{
    const Vector2d d = b - a;
    return (d.y() == 0.0 && d.x() > 0.0) || d.y() < 0.0;
}

bool inside(double e, bool top_left) { return e > 0.0 || (e == 0.0 && top_left); }

} // namespace

ImageSpaceRepr ImageSpaceRepr::empty(int height, int width)
{
    ImageSpaceRepr r;
    r.cor_u = MatrixXd::Constant(height, width, kCorSentinel);
    r.cor_v = MatrixXd::Constant(height, width, kCorSentinel);
    r.dep = MatrixXd::Zero(height, width);
    r.seg = MatrixXd::Zero(height, width);
    r.cf = MatrixXd::Zero(height, width);
    return r;
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> visible_mask(const ImageSpaceRepr& repr, double theta)
{
    return repr.seg.array() > theta;
}

Eigen::Index visible_count(const ImageSpaceRepr& repr, double theta)
{
    return visible_mask(repr, theta).count();
}

Occluder Occluder::clamped(int height, int width) const
{
    Occluder o;
    o.x0 = std::clamp(x0, 0, width);
    o.x1 = std::clamp(x1, 0, width);
    o.y0 = std::clamp(y0, 0, height);
    o.y1 = std::clamp(y1, 0, height);
    return o;
}

ConfidenceParams default_confidence_params(const ImageSpaceRepr& gt, double theta)
{
    const auto mask = visible_mask(gt, theta);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index y = 0; y < gt.dep.rows(); ++y)
        for (Eigen::Index x = 0; x < gt.dep.cols(); ++x)
            if (mask(y, x)) {
                lo = std::min(lo, gt.dep(y, x));
                hi = std::max(hi, gt.dep(y, x));
            }
    ConfidenceParams p;
    if (hi > lo)
        p.b = 0.05 * (hi - lo);
    return p;
}

FragmentBuffer rasterize(const Eigen::Matrix2Xd& positions, const VectorXd& depth, std::span<const Triangle> triangles,
                         int height, int width)
{
    if (height <= 0 || width <= 0)
        throw Error(ErrorCode::invalid_argument, "raster size must be positive");
    if (depth.size() != positions.cols())
        throw Error(ErrorCode::invalid_argument, "depth and position counts differ");

    FragmentBuffer buf;
    buf.triangle.setConstant(height, width, -1);
    buf.depth.setConstant(height, width, -std::numeric_limits<double>::infinity());
    buf.bary.assign(static_cast<std::size_t>(height) * width, Vector3d::Zero());

    const auto n = static_cast<std::uint32_t>(positions.cols());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        std::array<std::uint32_t, 3> v = triangles[t];
        if (v[0] >= n || v[1] >= n || v[2] >= n)
            throw Error(ErrorCode::invalid_argument, "triangle index out of range");
        std::array<int, 3> slot = {0, 1, 2};
        Vector2d p0 = positions.col(v[0]), p1 = positions.col(v[1]), p2 = positions.col(v[2]);
        double area = edge(p0, p1, p2);
        if (area == 0.0 || !std::isfinite(area))
            continue;
        if (area < 0.0) {
            std::swap(p1, p2);
            std::swap(slot[1], slot[2]);
            area = -area;
        }
        const bool tl12 = is_top_left(p1, p2);
        const bool tl20 = is_top_left(p2, p0);
        const bool tl01 = is_top_left(p0, p1);

        const double min_x = std::min({p0.x(), p1.x(), p2.x()});
        const double max_x = std::max({p0.x(), p1.x(), p2.x()});
        const double min_y = std::min({p0.y(), p1.y(), p2.y()});
        const double max_y = std::max({p0.y(), p1.y(), p2.y()});
        const int x_begin = std::max(0, static_cast<int>(std::ceil(min_x - 0.5)));
        const int x_end = std::min(width - 1, static_cast<int>(std::floor(max_x - 0.5)));
        const int y_begin = std::max(0, static_cast<int>(std::ceil(min_y - 0.5)));
        const int y_end = std::min(height - 1, static_cast<int>(std::floor(max_y - 0.5)));

        const Vector3d z(depth(v[0]), depth(v[slot[1]]), depth(v[slot[2]]));
        for (int y = y_begin; y <= y_end; ++y) {
            for (int x = x_begin; x <= x_end; ++x) {
                const Vector2d p(x + 0.5, y + 0.5);
                const double e0 = edge(p1, p2, p);
                const double e1 = edge(p2, p0, p);
                const double e2 = edge(p0, p1, p);
                if (!inside(e0, tl12) || !inside(e1, tl20) || !inside(e2, tl01))
                    continue;
                const Vector3d lambda = Vector3d(e0, e1, e2) / area;
                const double zp = lambda.dot(z);
                if (!(zp > buf.depth(y, x)))
                    continue;
                buf.depth(y, x) = zp;
                buf.triangle(y, x) = static_cast<std::int32_t>(t);
                Vector3d& out = buf.bary[static_cast<std::size_t>(y) * width + x];
                out(0) = lambda(0);
                out(slot[1]) = lambda(1);
                out(slot[2]) = lambda(2);
            }
        }
    }
    return buf;
}

ImageSpaceRepr render_representation(const MorphableModel& model, const Coefficients& coeffs, const Pose& pose,
                                     std::span<const Occluder> occluders, int height, int width)
{
    if (height < 16 || width < 16)
        throw Error(ErrorCode::invalid_argument, "render size must be at least 16 x 16");

    const Mesh image = project(shape_from_coeffs(model, coeffs), pose);
    const FragmentBuffer frags = rasterize(image.topRows<2>(), image.row(2).transpose(), model.triangles, height, width);
    if ((frags.triangle.array() >= 0).count() == 0)
        throw Error(ErrorCode::empty_render, "face projects outside the image");

    std::vector<Occluder> clipped;
    for (const Occluder& o : occluders)
        clipped.push_back(o.clamped(height, width));

    const double nose_depth = image(2, model.nose_tip);
    ImageSpaceRepr r = ImageSpaceRepr::empty(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::int32_t t = frags.triangle(y, x);
            if (t < 0)
                continue;
            if (std::any_of(clipped.begin(), clipped.end(), [&](const Occluder& o) { return o.contains(x, y); }))
                continue;
            const Triangle& tri = model.triangles[static_cast<std::size_t>(t)];
            const Vector3d& l = frags.barycentric(x, y);
            const Vector2d uv = l(0) * model.uv.col(tri[0]) + l(1) * model.uv.col(tri[1]) + l(2) * model.uv.col(tri[2]);
            r.cor_u(y, x) = uv.x();
            r.cor_v(y, x) = uv.y();
            r.dep(y, x) = frags.depth(y, x) - nose_depth;
            r.seg(y, x) = 1.0;
            r.cf(y, x) = 1.0;
        }
    }
    return r;
}

MatrixXd confidence_ground_truth(const ImageSpaceRepr& pred, const ImageSpaceRepr& gt, const ConfidenceParams& params,
                                 double theta)
{
    require_same_shape(pred, gt);
    if (!(params.a > 0.0) || !(params.b > 0.0))
        throw Error(ErrorCode::invalid_argument, "confidence tolerances must be positive");
    MatrixXd cf = MatrixXd::Zero(gt.height(), gt.width());
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            if (!(gt.seg(y, x) > theta))
                continue;
            const double du = pred.cor_u(y, x) - gt.cor_u(y, x);
            const double dv = pred.cor_v(y, x) - gt.cor_v(y, x);
            const double cor_err = params.cor_norm == CorNorm::l1 ? std::abs(du) + std::abs(dv) : std::hypot(du, dv);
            const double dep_err = std::abs(pred.dep(y, x) - gt.dep(y, x));
            cf(y, x) = std::sqrt(std::exp(-cor_err / params.a) * std::exp(-dep_err / params.b));
        }
    }
    return cf;
}

double segmentation_loss(const ImageSpaceRepr& pred, const ImageSpaceRepr& gt)
{
    require_same_shape(pred, gt);
    return (pred.seg - gt.seg).cwiseAbs().sum() / static_cast<double>(gt.seg.size());
}

RepresentationLoss representation_loss(const ImageSpaceRepr& pred, const ImageSpaceRepr& gt, const LossWeights& w,
                                       const ConfidenceParams& params, double theta)
{
    require_same_shape(pred, gt);
    const auto mask = visible_mask(gt, theta);
    const Eigen::Index area = mask.count();
    if (area == 0)
        throw Error(ErrorCode::empty_visible_region, "ground truth has no visible pixel");

    const MatrixXd cf_target = confidence_ground_truth(pred, gt, params, theta);
    RepresentationLoss loss;
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            if (!mask(y, x))
                continue;
            loss.cor += std::hypot(pred.cor_u(y, x) - gt.cor_u(y, x), pred.cor_v(y, x) - gt.cor_v(y, x));
            loss.dep += std::abs(pred.dep(y, x) - gt.dep(y, x));
            loss.cf += std::abs(pred.cf(y, x) - cf_target(y, x));
        }
    }
    const auto s = static_cast<double>(area);
    loss.cor /= s;
    loss.dep /= s;
    loss.cf /= s;
    loss.seg = segmentation_loss(pred, gt);
    loss.total = w.w1 * loss.cor + w.w2 * loss.dep + w.w3 * loss.seg + w.w4 * loss.cf;
    return loss;
}

ImageSpaceRepr perturb_representation(const ImageSpaceRepr& gt, const PerturbNoise& noise, std::uint64_t seed,
                                      const ConfidenceParams& params, double theta)
{
    if (noise.cor_sigma < 0.0 || noise.dep_sigma < 0.0)
        throw Error(ErrorCode::invalid_argument, "noise sigmas must be nonnegative");
    const Occluder region =
        noise.region.value_or(Occluder{0, 0, gt.width(), gt.height()}).clamped(gt.height(), gt.width());

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ImageSpaceRepr out = gt;
    for (int y = region.y0; y < region.y1; ++y) {
        for (int x = region.x0; x < region.x1; ++x) {
            if (!(gt.seg(y, x) > theta))
                continue;
            // Draw all three so the stream does not depend on which sigmas are zero.
            const double nu = normal(rng), nv = normal(rng), nd = normal(rng);
            out.cor_u(y, x) = std::clamp(gt.cor_u(y, x) + noise.cor_sigma * nu, -1.0, 1.0);
            out.cor_v(y, x) = std::clamp(gt.cor_v(y, x) + noise.cor_sigma * nv, -1.0, 1.0);
            out.dep(y, x) = gt.dep(y, x) + noise.dep_sigma * nd;
        }
    }
    out.cf = confidence_ground_truth(out, gt, params, theta);
    return out;
}

} // namespace dsf
