#include "dsf/fit.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dsf {

// ---------------------------------------------------------------- UvIndex

UvIndex::UvIndex(const MorphableModel& model) : uv_(model.uv), triangles_(model.triangles)
{
    const auto n = static_cast<double>(uv_.cols());
    grid_ = std::max(1, static_cast<int>(std::sqrt(n / 2.0)));
    cell_size_ = 2.0 / grid_;
    vertex_cells_.resize(static_cast<std::size_t>(grid_) * grid_);
    triangle_cells_.resize(static_cast<std::size_t>(grid_) * grid_);

    for (Eigen::Index i = 0; i < uv_.cols(); ++i) {
        const int cx = cell_of(uv_(0, i));
        const int cy = cell_of(uv_(1, i));
        vertex_cells_[static_cast<std::size_t>(cy) * grid_ + cx].push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        const Triangle& tri = triangles_[t];
        double lo_u = 2, hi_u = -2, lo_v = 2, hi_v = -2;
        for (std::uint32_t v : tri) {
            lo_u = std::min(lo_u, uv_(0, v));
            hi_u = std::max(hi_u, uv_(0, v));
            lo_v = std::min(lo_v, uv_(1, v));
            hi_v = std::max(hi_v, uv_(1, v));
        }
        for (int cy = cell_of(lo_v); cy <= cell_of(hi_v); ++cy)
            for (int cx = cell_of(lo_u); cx <= cell_of(hi_u); ++cx)
                triangle_cells_[static_cast<std::size_t>(cy) * grid_ + cx].push_back(static_cast<std::uint32_t>(t));
    }
}

int UvIndex::cell_of(double coord) const
{
    return std::clamp(static_cast<int>(std::floor((coord + 1.0) / cell_size_)), 0, grid_ - 1);
}

std::uint32_t UvIndex::nearest_vertex(const Vector2d& q) const
{
    const int cx = cell_of(q.x());
    const int cy = cell_of(q.y());
    double best_d = std::numeric_limits<double>::infinity();
    std::uint32_t best = std::numeric_limits<std::uint32_t>::max();

    for (int r = 0;; ++r) {
        const int x_lo = cx - r, x_hi = cx + r, y_lo = cy - r, y_hi = cy + r;
        for (int y = std::max(0, y_lo); y <= std::min(grid_ - 1, y_hi); ++y) {
            for (int x = std::max(0, x_lo); x <= std::min(grid_ - 1, x_hi); ++x) {
                if (std::max(std::abs(x - cx), std::abs(y - cy)) != r)
                    continue;
                for (std::uint32_t v : vertex_cells_[static_cast<std::size_t>(y) * grid_ + x]) {
                    const double d = (uv_.col(v) - q).squaredNorm();
                    if (d < best_d || (d == best_d && v < best)) {
                        best_d = d;
                        best = v;
                    }
                }
            }
        }
        // Anything not yet scanned lies beyond one of the box sides that is
        // still inside the grid.
        double bound = std::numeric_limits<double>::infinity();
        if (x_lo > 0)
            bound = std::min(bound, q.x() - (-1.0 + x_lo * cell_size_));
        if (x_hi < grid_ - 1)
            bound = std::min(bound, (-1.0 + (x_hi + 1) * cell_size_) - q.x());
        if (y_lo > 0)
            bound = std::min(bound, q.y() - (-1.0 + y_lo * cell_size_));
        if (y_hi < grid_ - 1)
            bound = std::min(bound, (-1.0 + (y_hi + 1) * cell_size_) - q.y());
        if (bound == std::numeric_limits<double>::infinity())
            break;
        bound = std::max(bound, 0.0);
        if (best_d < bound * bound)
            break;
    }
    return best;
}

SurfacePoint UvIndex::locate(const Vector2d& q) const
{
    constexpr double tolerance = 1e-6;
    const auto& cell = triangle_cells_[static_cast<std::size_t>(cell_of(q.y())) * grid_ + cell_of(q.x())];
    double best_min = -tolerance;
    SurfacePoint best;
    bool found = false;
    for (std::uint32_t t : cell) {
        const Triangle& tri = triangles_[t];
        const Vector2d a = uv_.col(tri[0]), b = uv_.col(tri[1]), c = uv_.col(tri[2]);
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (area == 0.0)
            continue;
        const double wb = ((q.x() - a.x()) * (c.y() - a.y()) - (q.y() - a.y()) * (c.x() - a.x())) / area;
        const double wc = ((b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x())) / area;
        const Vector3d w(1.0 - wb - wc, wb, wc);
        const double m = w.minCoeff();
        if (m > best_min || (!found && m >= best_min)) {
            best_min = m;
            best.vertices = tri;
            best.weights = w;
            found = true;
        }
    }
    if (!found) {
        const std::uint32_t v = nearest_vertex(q);
        return {{v, v, v}, Vector3d(1.0, 0.0, 0.0)};
    }
    if (best_min < 0.0) {
        best.weights = best.weights.cwiseMax(0.0);
        best.weights /= best.weights.sum();
    }
    return best;
}

// ---------------------------------------------------------------- sampling

PointCloudSample sample_point_cloud(const ImageSpaceRepr& repr, const SamplerConfig& cfg)
{
    if (cfg.m < 3 || !(cfg.theta > 0.0 && cfg.theta < 1.0))
        throw Error(ErrorCode::invalid_argument, "sampler needs m >= 3 and 0 < theta < 1");

    std::vector<Eigen::Vector2i> visible;
    for (int y = 0; y < repr.height(); ++y)
        for (int x = 0; x < repr.width(); ++x)
            if (repr.seg(y, x) > cfg.theta)
                visible.emplace_back(x, y);
    if (visible.empty())
        throw Error(ErrorCode::empty_visible_region, "no pixel above the visibility threshold");

    const std::size_t take = std::min(visible.size(), static_cast<std::size_t>(cfg.m));
    if (take < visible.size()) {
        std::mt19937_64 rng(cfg.seed);
        for (std::size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, visible.size() - 1);
            std::swap(visible[i], visible[pick(rng)]);
        }
        visible.resize(take);
    }

    PointCloudSample s;
    s.pixels = std::move(visible);
    const auto n = static_cast<Eigen::Index>(s.pixels.size());
    s.points_image.resize(3, n);
    s.uv.resize(2, n);
    s.cf.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2i& p = s.pixels[static_cast<std::size_t>(i)];
        s.points_image.col(i) = Vector3d(p.x() + 0.5, p.y() + 0.5, repr.dep(p.y(), p.x()));
        s.uv.col(i) = Vector2d(repr.cor_u(p.y(), p.x()), repr.cor_v(p.y(), p.x()));
        s.cf(i) = std::clamp(repr.cf(p.y(), p.x()), 0.0, 1.0);
    }
    return s;
}

PointCloudSample attach_canonical_refs(PointCloudSample sample, const MorphableModel& model)
{
    return attach_canonical_refs(std::move(sample), model, UvIndex(model));
}

PointCloudSample attach_canonical_refs(PointCloudSample sample, const MorphableModel& model, const UvIndex& index)
{
    const Mesh mean = model.mean_mesh();
    const Eigen::Index n = sample.size();
    sample.canonical_ref.resize(3, n);
    sample.matched_vertex.resize(static_cast<std::size_t>(n));
    sample.surface.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Vector2d q = sample.uv.col(i);
        sample.matched_vertex[k] = index.nearest_vertex(q);
        const SurfacePoint sp = index.locate(q);
        sample.surface[k] = sp;
        sample.canonical_ref.col(i) = sp.weights(0) * mean.col(sp.vertices[0]) +
                                      sp.weights(1) * mean.col(sp.vertices[1]) +
                                      sp.weights(2) * mean.col(sp.vertices[2]);
    }
    return sample;
}

AlignResult<double> align_to_canonical(const PointCloudSample& sample)
{
    if (sample.canonical_ref.cols() != sample.size())
        throw Error(ErrorCode::invalid_argument, "canonical references are not attached");
    return weighted_similarity_align<double>(sample.points_image, sample.canonical_ref, sample.cf);
}

// ---------------------------------------------------------------- solvers

LinearizedSample linearize(const PointCloudSample& sample, const MorphableModel& model)
{
    const Eigen::Index n = sample.size();
    const Eigen::Index d = model.d_total();
    LinearizedSample lin;
    lin.basis_rows = MatrixXd::Zero(3 * n, d);
    lin.mean_points.resize(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const SurfacePoint& sp = sample.surface[static_cast<std::size_t>(i)];
        Vector3d m = Vector3d::Zero();
        for (int j = 0; j < 3; ++j) {
            const Eigen::Index v = sp.vertices[static_cast<std::size_t>(j)];
            const double w = sp.weights(j);
            if (w == 0.0)
                continue;
            lin.basis_rows.block(3 * i, 0, 3, model.d_id()) += w * model.basis_id.middleRows<3>(3 * v);
            lin.basis_rows.block(3 * i, model.d_id(), 3, model.d_exp()) += w * model.basis_exp.middleRows<3>(3 * v);
            m += w * model.mean.segment<3>(3 * v);
        }
        lin.mean_points.segment<3>(3 * i) = m;
    }
    return lin;
}

Coefficients fit_coeffs_least_squares(const Matrix3Xd& target, const LinearizedSample& lin, const VectorXd& weights,
                                      const MorphableModel& model, double lambda)
{
    const Eigen::Index n = target.cols();
    if (lin.basis_rows.rows() != 3 * n || weights.size() != n)
        throw Error(ErrorCode::invalid_argument, "target, model rows and weights differ in length");
    if (!(lambda >= 0.0))
        throw Error(ErrorCode::invalid_argument, "lambda must be nonnegative");

    VectorXd row_weight(3 * n);
    for (Eigen::Index i = 0; i < n; ++i)
        row_weight.segment<3>(3 * i).setConstant(weights(i));
    const VectorXd residual = Eigen::Map<const VectorXd>(target.data(), 3 * n) - lin.mean_points;

    const MatrixXd weighted = row_weight.asDiagonal() * lin.basis_rows;
    MatrixXd normal = lin.basis_rows.transpose() * weighted;
    normal.diagonal() += lambda * model.sigma.cwiseAbs2().cwiseInverse();
    const VectorXd rhs = weighted.transpose() * residual;

    const Eigen::LDLT<MatrixXd> ldlt(normal);
    const VectorXd pivots = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-12 * pivots.cwiseAbs().maxCoeff()))
        throw Error(ErrorCode::singular_system, "normal matrix is singular; use lambda > 0 or more points");
    return Coefficients::from_stacked(ldlt.solve(rhs), model.d_id());
}

Coefficients fit_coeffs_least_squares(const Matrix3Xd& canonical_points, const PointCloudSample& sample,
                                      const MorphableModel& model, double lambda)
{
    return fit_coeffs_least_squares(canonical_points, linearize(sample, model), sample.cf, model, lambda);
}

MatrixXd pointnet_features(const Matrix3Xd& points, const PointCloudSample& sample, const SolverConfig& solver)
{
    const int width = solver.feature_width();
    if (width == 0)
        throw Error(ErrorCode::invalid_argument, "at least one network input feature must be enabled");
    MatrixXd f(width, points.cols());
    Eigen::Index row = 0;
    if (solver.use_xyz) {
        f.middleRows<3>(row) = points;
        row += 3;
    }
    if (solver.use_cor) {
        f.middleRows<2>(row) = sample.uv;
        row += 2;
    }
    if (solver.use_cf)
        f.row(row) = sample.cf.transpose();
    return f;
}

Coefficients fit_coeffs_pointnet(const nn::PointNetLite& net, const MatrixXd& features, Eigen::Index d_id)
{
    return Coefficients::from_stacked(nn::forward(net, features), d_id);
}

// ---------------------------------------------------------------- pipeline

namespace {

Matrix3Xd model_points(const LinearizedSample& lin, const VectorXd& alpha)
{
    const VectorXd p = lin.mean_points + lin.basis_rows * alpha;
    return Eigen::Map<const Matrix3Xd>(p.data(), 3, p.size() / 3);
}

} // namespace

namespace {

struct JointStep {
    VectorXd alpha;
    Transform update;
    double size = 0;
};

// One Gauss-Newton step of min over alpha and a similarity D of
// sum_i w_i |D(y_i) - model_i(alpha)|^2 + lambda |alpha / sigma|^2, with D
// linearised at the identity as y + t + omega x y + s y.
JointStep joint_step(const Matrix3Xd& y, const LinearizedSample& lin, const VectorXd& weights,
                     const MorphableModel& model, double lambda)
{
    const Eigen::Index n = y.cols();
    const Eigen::Index d = lin.basis_rows.cols();
    MatrixXd a(3 * n, d + 7);
    a.leftCols(d) = lin.basis_rows;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector3d p = y.col(i);
        auto block = a.block(3 * i, d, 3, 7);
        block.leftCols<3>() = -Matrix3d::Identity();
        block.middleCols<3>(3) << 0.0, -p.z(), p.y(), p.z(), 0.0, -p.x(), -p.y(), p.x(), 0.0;
        block.col(6) = -p;
    }
    VectorXd row_weight(3 * n);
    for (Eigen::Index i = 0; i < n; ++i)
        row_weight.segment<3>(3 * i).setConstant(weights(i));
    const VectorXd residual = Eigen::Map<const VectorXd>(y.data(), 3 * n) - lin.mean_points;

    const MatrixXd weighted = row_weight.asDiagonal() * a;
    MatrixXd normal = a.transpose() * weighted;
    normal.diagonal().head(d) += lambda * model.sigma.cwiseAbs2().cwiseInverse();
    const Eigen::LDLT<MatrixXd> ldlt(normal);
    const VectorXd pivots = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-12 * pivots.cwiseAbs().maxCoeff()))
        throw Error(ErrorCode::singular_system, "joint pose and shape system is singular");
    const VectorXd x = ldlt.solve(weighted.transpose() * residual);

    JointStep step;
    step.alpha = x.head(d);
    const Vector3d omega = x.segment<3>(d + 3);
    step.update.scale = std::exp(x(d + 6));
    step.update.rotation = omega.norm() > 0.0 ? Matrix3d(Eigen::AngleAxisd(omega.norm(), omega.normalized()))
                                              : Matrix3d::Identity();
    step.update.translation = x.segment<3>(d);
    step.size = x.tail<7>().norm();
    return step;
}

} // namespace

PostProcessResult post_process(const ImageSpaceRepr& repr, const MorphableModel& model, const SamplerConfig& cfg,
                               const SolverConfig& solver, const nn::PointNetLite* net, const UvIndex* index)
{
    if (solver.kind == SolverKind::pointnet && net == nullptr)
        throw Error(ErrorCode::invalid_argument, "pointnet solver needs a network");
    if (visible_count(repr, cfg.theta) < 3)
        throw Error(ErrorCode::too_few_points, "fewer than three visible pixels");

    PostProcessResult out;
    std::unique_ptr<UvIndex> owned;
    if (index == nullptr) {
        owned = std::make_unique<UvIndex>(model);
        index = owned.get();
    }

    // Step 1: visible pixels to a point cloud with surface correspondences.
    out.sample = attach_canonical_refs(sample_point_cloud(repr, cfg), model, *index);
    const PointCloudSample& s = out.sample;
    const VectorXd weights = solver.use_cf ? s.cf : VectorXd::Ones(s.size());
    const LinearizedSample lin = linearize(s, model);

    // Step 2: image view to canonical view against the mean face.
    if (solver.use_align) {
        const auto aligned = weighted_similarity_align<double>(s.points_image, s.canonical_ref, weights);
        out.canonical_points = aligned.aligned;
        out.to_canonical = aligned.transform;
    } else {
        out.canonical_points = s.points_image;
        out.to_canonical = Transform::identity();
    }

    // Step 3: coefficients from the canonical point cloud.
    VectorXd alpha;
    if (solver.kind == SolverKind::least_squares) {
        alpha = fit_coeffs_least_squares(out.canonical_points, lin, weights, model, solver.lambda).stacked();
        for (int it = 0; solver.use_align && it < solver.refine_iterations; ++it) {
            JointStep step;
            try {
                step = joint_step(out.canonical_points, lin, weights, model, solver.lambda);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::singular_system)
                    throw;
                break;  // pose and shape not separable from this view; keep the mean-face alignment
            }
            out.to_canonical = compose(step.update, out.to_canonical);
            out.canonical_points = out.to_canonical(s.points_image);
            alpha = step.alpha;
            if (step.size <= 1e-13)
                break;
        }
        if (solver.use_align && solver.refine_iterations > 0)
            alpha = fit_coeffs_least_squares(out.canonical_points, lin, weights, model, solver.lambda).stacked();
    } else {
        alpha = nn::forward(*net, pointnet_features(out.canonical_points, s, solver));
    }
    out.coeffs = Coefficients::from_stacked(alpha, model.d_id());

    // Step 4: fitted canonical geometry back to the image view.
    const auto back = weighted_similarity_align<double>(model_points(lin, alpha), s.points_image, weights);
    out.pose = back.transform;
    out.mesh = out.pose(shape_from_coeffs(model, out.coeffs));
    return out;
}

PostProcessLoss post_process_loss(const Coefficients& alpha, const Coefficients& alpha_gt,
                                  const Matrix3Xd& canonical_points, const Matrix3Xd& fitted_points,
                                  const LossWeights& w)
{
    if (alpha.id.size() != alpha_gt.id.size() || alpha.exp.size() != alpha_gt.exp.size() ||
        canonical_points.cols() != fitted_points.cols())
        throw Error(ErrorCode::invalid_argument, "post-process loss inputs differ in length");
    PostProcessLoss loss;
    if (canonical_points.cols() > 0)
        loss.cons = (canonical_points - fitted_points).colwise().squaredNorm().sum() /
                    static_cast<double>(canonical_points.cols());
    loss.post = w.w_alpha * (alpha.stacked() - alpha_gt.stacked()).squaredNorm() + w.w5 * loss.cons;
    return loss;
}

nn::TrainSample make_train_sample(const ImageSpaceRepr& repr, const MorphableModel& model, const Coefficients& gt,
                                  const SamplerConfig& cfg, const SolverConfig& solver, const UvIndex& index,
                                  const std::shared_ptr<const MatrixXd>& stacked_basis)
{
    const PointCloudSample s = attach_canonical_refs(sample_point_cloud(repr, cfg), model, index);
    const VectorXd weights = solver.use_cf ? s.cf : VectorXd::Ones(s.size());
    Matrix3Xd points = s.points_image;
    if (solver.use_align)
        points = weighted_similarity_align<double>(s.points_image, s.canonical_ref, weights).aligned;

    nn::TrainSample out;
    out.features = pointnet_features(points, s, solver);
    out.target = gt.stacked();
    if (solver.use_cons_loss) {
        if (!stacked_basis)
            throw Error(ErrorCode::invalid_argument, "consistency loss needs the stacked basis");
        out.penalty = [basis = stacked_basis, surface = s.surface, refs = s.canonical_ref,
                       target = points](const VectorXd& alpha, VectorXd& grad) {
            const auto n = static_cast<double>(target.cols());
            double value = 0.0;
            grad.setZero(alpha.size());
            for (Eigen::Index i = 0; i < target.cols(); ++i) {
                const SurfacePoint& sp = surface[static_cast<std::size_t>(i)];
                Eigen::Matrix<double, 3, Eigen::Dynamic> rows = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, alpha.size());
                for (int j = 0; j < 3; ++j)
                    if (sp.weights(j) != 0.0)
                        rows += sp.weights(j) * basis->middleRows<3>(3 * static_cast<Eigen::Index>(sp.vertices[static_cast<std::size_t>(j)]));
                const Vector3d r = refs.col(i) + rows * alpha - target.col(i);
                value += r.squaredNorm();
                grad.noalias() += (2.0 / n) * (rows.transpose() * r);
            }
            return value / n;
        };
    }
    return out;
}

} // namespace dsf
