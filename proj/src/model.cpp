#include "dsf/model.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dsf {

namespace {

constexpr double kRadiusX = 1.0;
constexpr double kRadiusY = 1.25;
constexpr double kRadiusZ = 0.9;
constexpr double kMaxAzimuth = 80.0 * std::numbers::pi / 180.0;
constexpr double kMaxElevation = 60.0 * std::numbers::pi / 180.0;
constexpr double kUvExtent = 0.95;

constexpr double kNoseHeight = 0.05;
constexpr double kNoseAmplitude = 0.3;
constexpr double kNoseWidthAzimuth = 0.22;
constexpr double kNoseWidthHeight = 0.15;

constexpr double kEyeAzimuth = 0.8;
constexpr double kEyeHeight = -0.18;

// Surface parameters: azimuth and normalised cylinder height in [-1, 1].
struct SurfaceParam {
    double azimuth;
    double height;
};

Vector3d ellipsoid_point(const SurfaceParam& p)
{
    const double elevation = std::asin(p.height * std::sin(kMaxElevation));
    return {kRadiusX * std::sin(p.azimuth) * std::cos(elevation), kRadiusY * std::sin(elevation),
            kRadiusZ * std::cos(p.azimuth) * std::cos(elevation)};
}

double nose_bump(const SurfaceParam& p, const SurfaceParam& centre)
{
    const double da = (p.azimuth - centre.azimuth) / kNoseWidthAzimuth;
    const double dh = (p.height - centre.height) / kNoseWidthHeight;
    return kNoseAmplitude * std::exp(-(da * da + dh * dh));
}

struct Topology {
    std::vector<SurfaceParam> params;
    std::vector<Triangle> triangles;
    int rows = 0;
    int cols = 0;
};

// Regular grid over the patch; vertices left over after the largest grid that
// fits are placed at cell centres and those cells are fanned into four.
Topology build_topology(int n_vertices)
{
    const double length_azimuth = kRadiusX * 2.0 * kMaxAzimuth;
    const double length_height = kRadiusY * 2.0 * kMaxElevation;

    Topology topo;
    topo.cols = std::max(3, static_cast<int>(std::lround(std::sqrt(n_vertices * length_azimuth / length_height))));
    topo.rows = n_vertices / topo.cols;
    const int extra = n_vertices - topo.rows * topo.cols;
    const int cells = (topo.rows - 1) * (topo.cols - 1);

    auto grid_param = [&](int r, int c) {
        return SurfaceParam{-kMaxAzimuth + 2.0 * kMaxAzimuth * c / (topo.cols - 1),
                            -1.0 + 2.0 * r / (topo.rows - 1)};
    };
    for (int r = 0; r < topo.rows; ++r)
        for (int c = 0; c < topo.cols; ++c)
            topo.params.push_back(grid_param(r, c));

    std::vector<int> centre_of_cell(static_cast<std::size_t>(cells), -1);
    for (int i = 0; i < extra; ++i) {
        const int cell = static_cast<int>((i + 0.5) * cells / extra);
        centre_of_cell[static_cast<std::size_t>(cell)] = topo.rows * topo.cols + i;
        const int r = cell / (topo.cols - 1);
        const int c = cell % (topo.cols - 1);
        const SurfaceParam a = grid_param(r, c);
        const SurfaceParam b = grid_param(r + 1, c + 1);
        topo.params.push_back({0.5 * (a.azimuth + b.azimuth), 0.5 * (a.height + b.height)});
    }

    auto idx = [&](int r, int c) { return static_cast<std::uint32_t>(r * topo.cols + c); };
    for (int r = 0; r + 1 < topo.rows; ++r) {
        for (int c = 0; c + 1 < topo.cols; ++c) {
            const std::uint32_t v00 = idx(r, c), v01 = idx(r, c + 1), v10 = idx(r + 1, c), v11 = idx(r + 1, c + 1);
            const int centre = centre_of_cell[static_cast<std::size_t>(r * (topo.cols - 1) + c)];
            if (centre < 0) {
                topo.triangles.push_back({v00, v01, v11});
                topo.triangles.push_back({v00, v11, v10});
            } else {
                const auto m = static_cast<std::uint32_t>(centre);
                topo.triangles.push_back({v00, v01, m});
                topo.triangles.push_back({v01, v11, m});
                topo.triangles.push_back({v11, v10, m});
                topo.triangles.push_back({v10, v00, m});
            }
        }
    }
    return topo;
}

std::uint32_t nearest_param(const std::vector<SurfaceParam>& params, const SurfaceParam& q)
{
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double d = std::pow(params[i].azimuth - q.azimuth, 2) + std::pow(params[i].height - q.height, 2);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(i);
        }
    }
    return best;
}

// Two-pass modified Gram-Schmidt against the columns of q; returns the residual.
VectorXd orthogonalize(const MatrixXd& q, Eigen::Index used, VectorXd v)
{
    for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index j = 0; j < used; ++j)
            v -= q.col(j).dot(v) * q.col(j);
    return v;
}

class FieldSampler {
public:
    FieldSampler(const Mesh& mean, std::mt19937_64& rng) : mean_(mean), rng_(rng) {}

    // Random polynomial displacement field of total degree <= degree, in
    // coordinates normalised by the ellipsoid radii.
    VectorXd polynomial(int degree, bool localized)
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        const Eigen::Index n = mean_.cols();
        VectorXd field = VectorXd::Zero(3 * n);
        for (int a = 0; a <= degree; ++a) {
            for (int b = 0; a + b <= degree; ++b) {
                for (int c = 0; a + b + c <= degree; ++c) {
                    const double falloff = 1.0 / (1.0 + a + b + c);
                    const Vector3d amp(normal(rng_) * falloff, normal(rng_) * falloff, normal(rng_) * falloff);
                    for (Eigen::Index i = 0; i < n; ++i) {
                        const double x = mean_(0, i) / kRadiusX;
                        const double y = mean_(1, i) / kRadiusY;
                        const double z = mean_(2, i) / kRadiusZ;
                        const double m = std::pow(x, a) * std::pow(y, b) * std::pow(z, c);
                        field.segment<3>(3 * i) += m * amp;
                    }
                }
            }
        }
        if (localized) {
            // Lower face window: expressions mostly move the mouth and cheeks.
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dy = mean_(1, i) / kRadiusY - 0.45;
                const double dx = mean_(0, i) / kRadiusX;
                field.segment<3>(3 * i) *= std::exp(-(dx * dx + dy * dy) / 0.35);
            }
        }
        return field;
    }

    VectorXd noise()
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        VectorXd field(3 * mean_.cols());
        for (Eigen::Index i = 0; i < field.size(); ++i)
            field(i) = normal(rng_);
        return field;
    }

private:
    const Mesh& mean_;
    std::mt19937_64& rng_;
};

} // namespace

MatrixXd MorphableModel::stacked_basis() const
{
    MatrixXd b(mean.size(), d_total());
    b << basis_id, basis_exp;
    return b;
}

void validate(const MorphableModel& model)
{
    const Eigen::Index n = model.n_vertices();
    if (n < 3 || model.mean.size() != 3 * n)
        throw Error(ErrorCode::invalid_argument, "mean shape length is not 3n");
    if (model.basis_id.rows() != 3 * n || model.basis_exp.rows() != 3 * n)
        throw Error(ErrorCode::invalid_argument, "basis row count is not 3n");
    if (model.sigma.size() != model.d_total() || !(model.sigma.array() > 0.0).all())
        throw Error(ErrorCode::invalid_argument, "sigma must be positive with one entry per basis");
    if (model.uv.cols() != n || (model.uv.array().abs() > 1.0).any())
        throw Error(ErrorCode::invalid_argument, "uv must hold one coordinate in [-1,1]^2 per vertex");
    if (!model.mean.allFinite() || !model.basis_id.allFinite() || !model.basis_exp.allFinite())
        throw Error(ErrorCode::invalid_argument, "model contains non-finite values");
    const auto un = static_cast<std::uint32_t>(n);
    if (model.nose_tip >= un || model.eye_outer_left >= un || model.eye_outer_right >= un)
        throw Error(ErrorCode::invalid_argument, "landmark vertex index out of range");
    const Mesh mean = model.mean_mesh();
    for (const Triangle& t : model.triangles) {
        if (t[0] >= un || t[1] >= un || t[2] >= un)
            throw Error(ErrorCode::invalid_argument, "triangle index out of range");
        const Vector3d e1 = mean.col(t[1]) - mean.col(t[0]);
        const Vector3d e2 = mean.col(t[2]) - mean.col(t[0]);
        if (!(e1.cross(e2).norm() > 0.0))
            throw Error(ErrorCode::invalid_argument, "degenerate triangle on the mean shape");
    }
}

MorphableModel synthesize_model(std::uint64_t seed, int n_vertices, int d_id, int d_exp)
{
    if (n_vertices < 64 || d_id < 1 || d_exp < 1 || 3LL * n_vertices <= static_cast<long long>(d_id) + d_exp + 7)
        throw Error(ErrorCode::invalid_argument, "synthesize_model: need n >= 64, d_id >= 1, d_exp >= 1, "
                                                 "3n > d_id + d_exp + 7");

    std::mt19937_64 rng(seed);
    const Topology topo = build_topology(n_vertices);
    const auto n = static_cast<Eigen::Index>(topo.params.size());

    MorphableModel model;
    model.triangles = topo.triangles;

    const SurfaceParam nose_query{0.0, kNoseHeight};
    model.nose_tip = nearest_param(topo.params, nose_query);
    const SurfaceParam nose_centre = topo.params[model.nose_tip];
    model.eye_outer_left = nearest_param(topo.params, {-kEyeAzimuth, kEyeHeight});
    model.eye_outer_right = nearest_param(topo.params, {kEyeAzimuth, kEyeHeight});

    Mesh mean(3, n);
    model.uv.resize(2, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const SurfaceParam& p = topo.params[static_cast<std::size_t>(i)];
        mean.col(i) = ellipsoid_point(p);
        mean(2, i) += nose_bump(p, nose_centre);
        model.uv(0, i) = kUvExtent * p.azimuth / kMaxAzimuth;
        model.uv(1, i) = kUvExtent * p.height;
    }
    model.mean = Eigen::Map<const VectorXd>(mean.data(), 3 * n);

    // Similarity generators of the mean shape are projected out of every
    // basis so that shape and pose stay identifiable.
    const Vector3d centroid = mean.rowwise().mean();
    const int total = d_id + d_exp;
    MatrixXd q(3 * n, 7 + total);
    Eigen::Index used = 0;
    auto push = [&](const VectorXd& v) {
        const VectorXd r = orthogonalize(q, used, v);
        q.col(used++) = r / r.norm();
    };
    for (int axis = 0; axis < 3; ++axis) {
        VectorXd v = VectorXd::Zero(3 * n);
        for (Eigen::Index i = 0; i < n; ++i)
            v(3 * i + axis) = 1.0;
        push(v);
    }
    for (int axis = 0; axis < 3; ++axis) {
        VectorXd v(3 * n);
        for (Eigen::Index i = 0; i < n; ++i)
            v.segment<3>(3 * i) = Vector3d::Unit(axis).cross(mean.col(i) - centroid);
        push(v);
    }
    {
        VectorXd v(3 * n);
        for (Eigen::Index i = 0; i < n; ++i)
            v.segment<3>(3 * i) = mean.col(i) - centroid;
        push(v);
    }
    const Eigen::Index reserved = used;

    FieldSampler sampler(mean, rng);
    for (int k = 0; k < total; ++k) {
        const bool expression = k >= d_id;
        int degree = 3;
        int attempts = 0;
        for (;;) {
            const VectorXd candidate = degree <= 6 ? sampler.polynomial(degree, expression) : sampler.noise();
            const VectorXd r = orthogonalize(q, used, candidate);
            if (r.norm() > 1e-3 * candidate.norm()) {
                q.col(used++) = r / r.norm();
                break;
            }
            if (++attempts % 4 == 0)
                ++degree;
        }
    }

    model.basis_id = q.middleCols(reserved, d_id);
    model.basis_exp = q.middleCols(reserved + d_id, d_exp);

    model.sigma.resize(total);
    const double root_n = std::sqrt(static_cast<double>(n));
    for (int k = 0; k < d_id; ++k)
        model.sigma(k) = 0.04 * root_n * std::pow(0.85, k);
    for (int k = 0; k < d_exp; ++k)
        model.sigma(d_id + k) = 0.03 * root_n * std::pow(0.85, k);

    validate(model);
    return model;
}

Mesh shape_from_coeffs(const MorphableModel& model, const Coefficients& coeffs)
{
    if (coeffs.id.size() != model.d_id() || coeffs.exp.size() != model.d_exp())
        throw Error(ErrorCode::invalid_argument, "coefficient lengths do not match the model");
    VectorXd s = model.mean;
    s.noalias() += model.basis_id * coeffs.id;
    s.noalias() += model.basis_exp * coeffs.exp;
    return Eigen::Map<const Matrix3Xd>(s.data(), 3, model.n_vertices());
}

Mesh project(const Mesh& mesh, const Pose& pose)
{
    validate(pose);
    return pose(mesh);
}

Mesh project_relative(const MorphableModel& model, const Coefficients& coeffs, const Pose& pose)
{
    Mesh image = project(shape_from_coeffs(model, coeffs), pose);
    image.row(2).array() -= image(2, model.nose_tip);
    return image;
}

Eigen::Matrix<double, 12, 1> pose_to_vec(const Pose& pose)
{
    const Eigen::Matrix<double, 3, 4, Eigen::RowMajor> m = pose.matrix();
    return Eigen::Map<const Eigen::Matrix<double, 12, 1>>(m.data());
}

Pose pose_from_vec(const Eigen::Matrix<double, 12, 1>& v)
{
    if (!v.allFinite())
        throw Error(ErrorCode::invalid_pose, "pose vector is not finite");
    const Eigen::Matrix<double, 3, 4, Eigen::RowMajor> m = Eigen::Map<const Eigen::Matrix<double, 3, 4, Eigen::RowMajor>>(v.data());
    const Matrix3d block = m.leftCols<3>();
    const double det = block.determinant();
    if (!(det > 0.0))
        throw Error(ErrorCode::invalid_pose, "upper 3x3 block has non-positive determinant");
    Pose pose;
    pose.scale = std::cbrt(det);
    pose.rotation = block / pose.scale;
    const double ortho = (pose.rotation.transpose() * pose.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-6))
        throw Error(ErrorCode::invalid_pose, "upper 3x3 block is not a scaled rotation");
    if (ortho > 1e-12) {
        Eigen::JacobiSVD<Matrix3d> svd(pose.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
        pose.rotation = svd.matrixU() * svd.matrixV().transpose();
    }
    pose.translation = m.col(3);
    return pose;
}

EulerAngles euler_from_rotation(const Matrix3d& r)
{
    constexpr double deg = 180.0 / std::numbers::pi;
    const double sp = std::clamp(r(2, 1), -1.0, 1.0);
    EulerAngles out;
    out.pitch = std::asin(sp) * deg;
    const double cp = std::sqrt(r(2, 0) * r(2, 0) + r(2, 2) * r(2, 2));
    if (cp > 1e-12) {
        out.yaw = std::atan2(-r(2, 0), r(2, 2)) * deg;
        out.roll = std::atan2(-r(0, 1), r(1, 1)) * deg;
    } else {
        out.yaw = std::atan2(r(0, 2), r(0, 0)) * deg;
        out.roll = 0.0;
    }
    if (out.yaw <= -180.0)
        out.yaw += 360.0;
    if (out.roll <= -180.0)
        out.roll += 360.0;
    return out;
}

Matrix3d rotation_from_euler(const EulerAngles& a)
{
    constexpr double rad = std::numbers::pi / 180.0;
    const Eigen::AngleAxisd yaw(a.yaw * rad, Vector3d::UnitY());
    const Eigen::AngleAxisd pitch(a.pitch * rad, Vector3d::UnitX());
    const Eigen::AngleAxisd roll(a.roll * rad, Vector3d::UnitZ());
    return (roll * pitch * yaw).toRotationMatrix();
}

} // namespace dsf
