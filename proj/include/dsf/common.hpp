#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace dsf {

enum class ErrorCode {
    invalid_argument,
    invalid_pose,
    empty_render,
    empty_visible_region,
    too_few_points,
    zero_total_weight,
    degenerate_configuration,
    singular_system,
    insufficient_valid_texels,
    io_error,
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-checkable error category.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

using Eigen::Matrix3d;
using Eigen::Matrix3Xd;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// Vertex positions stored column-per-vertex; the column-major storage is the
/// interleaved length-3n layout (x0, y0, z0, x1, ...).
using Mesh = Eigen::Matrix3Xd;

/// Identity and expression coefficients. The stacked order is identity first.
struct Coefficients {
    VectorXd id;
    VectorXd exp;

    Eigen::Index size() const { return id.size() + exp.size(); }

    VectorXd stacked() const
    {
        VectorXd out(size());
        out << id, exp;
        return out;
    }

    static Coefficients from_stacked(const VectorXd& v, Eigen::Index d_id)
    {
        if (d_id < 0 || d_id > v.size())
            throw Error(ErrorCode::invalid_argument, "identity dimension exceeds vector length");
        return {v.head(d_id), v.tail(v.size() - d_id)};
    }

    static Coefficients zero(Eigen::Index d_id, Eigen::Index d_exp)
    {
        return {VectorXd::Zero(d_id), VectorXd::Zero(d_exp)};
    }
};

} // namespace dsf
