#include "oracles.hpp"

#include "dsf/align.hpp"

#include "doctest.h"

#include <random>

using namespace dsf;

namespace {

Matrix3Xd random_cloud(std::mt19937_64& rng, Eigen::Index n)
{
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix3Xd p(3, n);
    for (Eigen::Index i = 0; i < p.size(); ++i)
        p.data()[i] = g(rng);
    return p;
}

Transform random_similarity(std::mt19937_64& rng)
{
    Transform t;
    t.scale = std::exp(std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
    t.rotation = oracle::random_rotation(rng);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    t.translation = Vector3d(u(rng), u(rng), u(rng));
    return t;
}

VectorXd random_weights(std::mt19937_64& rng, Eigen::Index n)
{
    std::uniform_real_distribution<double> u(0.1, 2.0);
    VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i)
        w(i) = u(rng);
    return w;
}

ErrorCode code_of(const Matrix3Xd& k, const Matrix3Xd& d, const VectorXd& w)
{
    try {
        weighted_similarity_align<double>(k, d, w);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::io_error;
}

} // namespace

TEST_CASE("aligning a cloud to itself gives the identity")
{
    std::mt19937_64 rng(1);
    const Matrix3Xd k = random_cloud(rng, 40);
    const auto r = weighted_similarity_align<double>(k, k, VectorXd::Ones(40));
    CHECK(std::abs(r.transform.scale - 1.0) < 1e-12);
    CHECK((r.transform.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.transform.translation.norm() < 1e-12);
    CHECK((r.aligned - k).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random similarities are recovered exactly")
{
    std::mt19937_64 rng(2);
    double worst_angle = 0, worst_log_scale = 0, worst_translation = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const Transform t0 = random_similarity(rng);
        const Matrix3Xd d = random_cloud(rng, 30);
        const Matrix3Xd k = invert(t0)(d);
        const auto r = weighted_similarity_align<double>(k, d, random_weights(rng, 30));
        worst_angle = std::max(worst_angle, oracle::rotation_angle(r.transform.rotation, t0.rotation));
        worst_log_scale = std::max(worst_log_scale, std::abs(std::log(r.transform.scale / t0.scale)));
        worst_translation = std::max(worst_translation, (r.transform.translation - t0.translation).norm());
    }
    CHECK(worst_angle < 1e-9);
    CHECK(worst_log_scale < 1e-9);
    CHECK(worst_translation < 1e-9);
}

TEST_CASE("agrees with a quaternion-based fit on noisy clouds")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.2);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix3Xd k = random_cloud(rng, 25);
        Matrix3Xd d = random_similarity(rng)(k);
        for (Eigen::Index i = 0; i < d.size(); ++i)
            d.data()[i] += noise(rng);
        const VectorXd w = random_weights(rng, 25);
        const auto r = weighted_similarity_align<double>(k, d, w);
        const auto h = oracle::horn_similarity(k, d, std::vector<double>(w.data(), w.data() + w.size()));
        REQUIRE(oracle::rotation_angle(r.transform.rotation, h.rotation) < 1e-9);
        REQUIRE(std::abs(r.transform.scale - h.scale) < 1e-9 * h.scale);
        REQUIRE((r.transform.translation - h.translation).norm() < 1e-7 * (1.0 + h.translation.norm()));
    }
}

TEST_CASE("zero-weight points never affect the result")
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix3Xd k = random_cloud(rng, 20);
        const Matrix3Xd d = random_similarity(rng)(k) + 0.05 * random_cloud(rng, 20);
        const VectorXd w = random_weights(rng, 20);

        Matrix3Xd k2(3, 21), d2(3, 21);
        VectorXd w2(21);
        const auto at = static_cast<Eigen::Index>(rng() % 21);
        for (Eigen::Index i = 0, j = 0; i < 21; ++i) {
            if (i == at) {
                k2.col(i) = Vector3d::Random() * 1e3;
                d2.col(i) = Vector3d::Random() * 1e3;
                w2(i) = 0.0;
            } else {
                k2.col(i) = k.col(j);
                d2.col(i) = d.col(j);
                w2(i) = w(j);
                ++j;
            }
        }
        const Transform a = weighted_similarity_align<double>(k, d, w).transform;
        const Transform b = weighted_similarity_align<double>(k2, d2, w2).transform;
        REQUIRE(a.scale == b.scale);
        REQUIRE(a.rotation == b.rotation);
        REQUIRE(a.translation == b.translation);
    }
}

TEST_CASE("scaling every weight leaves the transform unchanged")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix3Xd k = random_cloud(rng, 15);
        const Matrix3Xd d = random_similarity(rng)(k) + 0.1 * random_cloud(rng, 15);
        const VectorXd w = random_weights(rng, 15);
        const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
        const Transform a = weighted_similarity_align<double>(k, d, w).transform;
        const Transform b = weighted_similarity_align<double>(k, d, VectorXd(c * w)).transform;
        REQUIRE(std::abs(a.scale - b.scale) < 1e-12 * a.scale);
        REQUIRE((a.rotation - b.rotation).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((a.translation - b.translation).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + a.translation.norm()));
    }
}

TEST_CASE("closed form beats perturbed transforms")
{
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix3Xd k = random_cloud(rng, 50);
        const Matrix3Xd d = random_similarity(rng)(k) + 0.3 * random_cloud(rng, 50);
        const VectorXd w = random_weights(rng, 50);
        const Transform best = weighted_similarity_align<double>(k, d, w).transform;
        const double base = alignment_cost(best, k, d, std::span<const double>(w.data(), 50));
        for (int p = 0; p < 1000; ++p) {
            Transform t = best;
            const double step = 1e-3 * std::pow(10.0, static_cast<double>(p % 4));
            t.scale *= std::exp(step * g(rng));
            const Vector3d axis(g(rng), g(rng), g(rng));
            t.rotation = Eigen::AngleAxisd(step * axis.norm(), axis.normalized()).toRotationMatrix() * t.rotation;
            t.translation += step * Vector3d(g(rng), g(rng), g(rng));
            REQUIRE(alignment_cost(t, k, d, std::span<const double>(w.data(), 50)) >= base);
        }
    }
}

TEST_CASE("mirrored targets still give a proper rotation")
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix3Xd k = random_cloud(rng, 30);
        Matrix3Xd d = k;
        d.row(0) *= -1.0;
        const auto r = weighted_similarity_align<double>(k, d, random_weights(rng, 30));
        REQUIRE(r.transform.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
        REQUIRE(r.transform.scale > 0.0);
    }
}

TEST_CASE("alignment errors")
{
    std::mt19937_64 rng(8);
    const Matrix3Xd k = random_cloud(rng, 10);
    CHECK(code_of(k.leftCols(2), k.leftCols(2), VectorXd::Ones(2)) == ErrorCode::too_few_points);
    CHECK(code_of(k, k, VectorXd::Zero(10)) == ErrorCode::zero_total_weight);
    Matrix3Xd line(3, 10);
    for (Eigen::Index i = 0; i < 10; ++i)
        line.col(i) = Vector3d(1, 2, 3) * static_cast<double>(i);
    CHECK(code_of(line, line, VectorXd::Ones(10)) == ErrorCode::degenerate_configuration);
    VectorXd negative = VectorXd::Ones(10);
    negative(3) = -1.0;
    CHECK(code_of(k, k, negative) == ErrorCode::invalid_argument);
    CHECK(code_of(k, k, VectorXd::Ones(9)) == ErrorCode::invalid_argument);
    CHECK(code_of(k, k.leftCols(9), VectorXd::Ones(10)) == ErrorCode::invalid_argument);
}

TEST_CASE("apply, invert and compose")
{
    std::mt19937_64 rng(9);
    const Matrix3Xd p = random_cloud(rng, 12);
    CHECK(apply_transform(Transform::identity(), p) == p);
    const Transform inv_id = invert(Transform::identity());
    CHECK(inv_id.scale == 1.0);
    CHECK(inv_id.rotation == Matrix3d::Identity());
    CHECK(inv_id.translation == Vector3d::Zero());

    for (int trial = 0; trial < 100; ++trial) {
        const Transform t = random_similarity(rng);
        const Transform inv = invert(t);
        REQUIRE((apply_transform(t, apply_transform(inv, p)) - p).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + t.translation.norm()));
        REQUIRE(std::abs(t.scale * inv.scale - 1.0) < 1e-12);
        const Transform twice = invert(inv);
        REQUIRE(std::abs(twice.scale - t.scale) < 1e-10 * t.scale);
        REQUIRE((twice.rotation - t.rotation).cwiseAbs().maxCoeff() < 1e-10);
        REQUIRE((twice.translation - t.translation).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + t.translation.norm()));
        const Transform id = compose(t, inv);
        REQUIRE(std::abs(id.scale - 1.0) < 1e-10);
        REQUIRE((id.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
        REQUIRE(id.translation.norm() < 1e-10 * (1.0 + t.translation.norm()));
        const Transform u = random_similarity(rng);
        REQUIRE((compose(t, u)(p) - t(u(p))).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + t(u(p)).cwiseAbs().maxCoeff()));
        const Vector3d c = p.rowwise().mean();
        REQUIRE((t(p).rowwise().mean() - t(c)).norm() < 1e-10 * (1.0 + t(c).norm()));
    }
}

TEST_CASE("pose validation")
{
    Transform t;
    CHECK_NOTHROW(validate(t));
    t.scale = 0.0;
    CHECK_THROWS_AS(validate(t), Error);
    t.scale = 1.0;
    t.rotation(0, 0) = -1.0;
    CHECK_THROWS_AS(validate(t), Error);
    t.rotation = Matrix3d::Identity() * 1.01;
    CHECK_THROWS_AS(validate(t), Error);
}
