#include "dsf/nn.hpp"

#include "doctest.h"

#include <numeric>
#include <random>

using namespace dsf;
using namespace dsf::nn;

namespace {

ErrorCode code_of(auto&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::io_error;
}

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    return MatrixXd::NullaryExpr(rows, cols, [&] { return n(rng); });
}

/// Straight-line evaluation of the regressor with plain Eigen expressions.
VectorXd reference_forward(const PointNetLite& net, const MatrixXd& x)
{
    const auto& p = net.parameters();
    MatrixXd h = x;
    for (std::size_t l = 0; l < 3; ++l)
        h = ((p[2 * l].value * h).colwise() + p[2 * l + 1].value.col(0)).cwiseMax(0.0);
    VectorXd g = h.rowwise().maxCoeff();
    g = (p[6].value * g + p[7].value.col(0)).cwiseMax(0.0);
    g = p[8].value * g + p[9].value.col(0);
    return g.cwiseProduct(net.output_scale());
}

std::vector<TrainSample> random_batch(int count, int points, int in, int out, std::mt19937_64& rng)
{
    std::vector<TrainSample> batch;
    for (int i = 0; i < count; ++i)
        batch.push_back({random_matrix(in, points, rng), random_matrix(out, 1, rng).col(0), {}});
    return batch;
}

double batch_loss(const PointNetLite& net, const std::vector<TrainSample>& batch, const LossWeights& w)
{
    return loss_and_grad(net, batch, w).loss;
}

} // namespace

TEST_CASE("network layout")
{
    const PointNetLite net(6, 28, 1);
    const auto& p = net.parameters();
    REQUIRE(p.size() == 10);
    const std::vector<std::pair<std::string, std::pair<int, int>>> expected{
        {"trunk0.weight", {64, 6}},  {"trunk0.bias", {64, 1}},  {"trunk1.weight", {64, 64}},
        {"trunk1.bias", {64, 1}},    {"trunk2.weight", {128, 64}}, {"trunk2.bias", {128, 1}},
        {"head0.weight", {64, 128}}, {"head0.bias", {64, 1}},   {"head1.weight", {28, 64}},
        {"head1.bias", {28, 1}}};
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i].name == expected[i].first);
        CHECK(p[i].value.rows() == expected[i].second.first);
        CHECK(p[i].value.cols() == expected[i].second.second);
        count += static_cast<std::size_t>(p[i].value.size());
    }
    CHECK(net.parameter_count() == count);
    CHECK(net.input_width() == 6);
    CHECK(net.output_width() == 28);
    CHECK(code_of([] { PointNetLite(0, 3, 0); }) == ErrorCode::invalid_argument);
}

TEST_CASE("forward agrees with a direct evaluation")
{
    std::mt19937_64 rng(1);
    PointNetLite net(5, 9, 2);
    for (auto& t : net.parameters())
        if (t.value.cols() == 1)
            t.value = 0.1 * random_matrix(t.value.rows(), 1, rng);
    net.output_scale() = random_matrix(9, 1, rng).col(0);
    for (int points : {1, 7, 300}) {
        const MatrixXd x = random_matrix(5, points, rng);
        const VectorXd y = forward(net, x);
        REQUIRE(y.size() == 9);
        CHECK((y - reference_forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("forward symmetries")
{
    std::mt19937_64 rng(2);
    const PointNetLite net(6, 12, 3);
    const MatrixXd x = random_matrix(6, 50, rng);
    const VectorXd y = forward(net, x);

    MatrixXd doubled(6, 100);
    doubled << x, x;
    CHECK(forward(net, doubled) == y);

    std::vector<Eigen::Index> order(50);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    MatrixXd permuted(6, 50);
    for (Eigen::Index i = 0; i < 50; ++i)
        permuted.col(i) = x.col(order[static_cast<std::size_t>(i)]);
    CHECK(forward(net, permuted) == y);

    PointNetLite zero = net;
    zero.set_zero();
    CHECK(forward(zero, x) == VectorXd::Zero(12));

    CHECK(code_of([&] { forward(net, x.topRows(5)); }) == ErrorCode::invalid_argument);
    CHECK(code_of([&] { forward(net, MatrixXd(6, 0)); }) == ErrorCode::invalid_argument);
    CHECK(code_of([&] { forward(PointNetLite{}, x); }) == ErrorCode::invalid_argument);
}

TEST_CASE("rebuilding from parameters")
{
    const PointNetLite net(4, 7, 5);
    const PointNetLite copy = PointNetLite::from_parameters(net.parameters(), net.output_scale());
    CHECK(copy.input_width() == 4);
    CHECK(copy.output_width() == 7);
    const MatrixXd x = MatrixXd::Random(4, 10);
    CHECK(forward(copy, x) == forward(net, x));

    auto params = net.parameters();
    CHECK(code_of([&] { PointNetLite::from_parameters({params.begin(), params.end() - 1}, net.output_scale()); }) ==
          ErrorCode::invalid_argument);
    auto renamed = params;
    renamed[3].name = "trunk1.offset";
    CHECK(code_of([&] { PointNetLite::from_parameters(renamed, net.output_scale()); }) == ErrorCode::invalid_argument);
    auto reshaped = params;
    reshaped[2].value = MatrixXd::Zero(63, 64);
    CHECK(code_of([&] { PointNetLite::from_parameters(reshaped, net.output_scale()); }) == ErrorCode::invalid_argument);
    CHECK(code_of([&] { PointNetLite::from_parameters(params, VectorXd::Ones(6)); }) == ErrorCode::invalid_argument);
}

TEST_CASE("loss is zero at the target with zero output-bias gradient")
{
    std::mt19937_64 rng(6);
    const PointNetLite net(6, 10, 7);
    std::vector<TrainSample> batch = random_batch(3, 20, 6, 10, rng);
    for (TrainSample& s : batch)
        s.target = forward(net, s.features);
    const LossAndGrad lg = loss_and_grad(net, batch, {});
    CHECK(lg.loss == 0.0);
    CHECK(lg.grads.back().cwiseAbs().maxCoeff() == 0.0);
    CHECK(code_of([&] { loss_and_grad(net, std::span<const TrainSample>{}, {}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("gradients match central differences on a small batch")
{
    std::mt19937_64 rng(8);
    PointNetLite net(6, 5, 9);
    for (auto& t : net.parameters())
        if (t.value.cols() == 1)
            t.value = 0.1 * random_matrix(t.value.rows(), 1, rng);
    const std::vector<TrainSample> batch = random_batch(3, 10, 6, 5, rng);
    LossWeights w;
    w.w_alpha = 0.7;
    const LossAndGrad lg = loss_and_grad(net, batch, w);

    const double eps = 1e-5;
    double worst = 0.0;
    PointNetLite probe = net;
    for (std::size_t p = 0; p < net.parameters().size(); ++p) {
        for (Eigen::Index i = 0; i < net.parameters()[p].value.size(); ++i) {
            double& theta = probe.parameters()[p].value.data()[i];
            const double saved = theta;
            theta = saved + eps;
            const double plus = batch_loss(probe, batch, w);
            theta = saved - eps;
            const double minus = batch_loss(probe, batch, w);
            theta = saved;
            const double numeric = (plus - minus) / (2 * eps);
            const double exact = lg.grads[p].data()[i];
            worst = std::max(worst, std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), 1e-6}));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("an output penalty contributes its gradient")
{
    std::mt19937_64 rng(10);
    const PointNetLite net(3, 4, 11);
    std::vector<TrainSample> batch = random_batch(2, 8, 3, 4, rng);
    const VectorXd c = random_matrix(4, 1, rng).col(0);
    for (TrainSample& s : batch) {
        s.penalty = [c](const VectorXd& out, VectorXd& grad) {
            grad = 3.0 * (out - c);
            return 1.5 * (out - c).squaredNorm();
        };
    }
    LossWeights w;
    w.w5 = 0.4;
    const LossAndGrad lg = loss_and_grad(net, batch, w);
    double expected = 0.0;
    for (const TrainSample& s : batch) {
        const VectorXd y = forward(net, s.features);
        expected += 0.5 * ((y - s.target).squaredNorm() + 0.4 * 1.5 * (y - c).squaredNorm());
    }
    CHECK(lg.loss == doctest::Approx(expected).epsilon(1e-12));

    const double eps = 1e-6;
    PointNetLite probe = net;
    double& theta = probe.parameters()[9].value(2, 0);
    theta += eps;
    const double plus = batch_loss(probe, batch, w);
    theta -= 2 * eps;
    const double minus = batch_loss(probe, batch, w);
    CHECK(lg.grads[9](2, 0) == doctest::Approx((plus - minus) / (2 * eps)).epsilon(1e-6));

    w.w5 = 0.0;
    const double unpenalised = loss_and_grad(net, batch, w).loss;
    double plain = 0.0;
    for (const TrainSample& s : batch)
        plain += 0.5 * (forward(net, s.features) - s.target).squaredNorm();
    CHECK(unpenalised == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("loss and gradient are linear in the coefficient weight")
{
    std::mt19937_64 rng(12);
    const PointNetLite net(6, 8, 13);
    const std::vector<TrainSample> batch = random_batch(4, 16, 6, 8, rng);
    LossWeights w;
    const LossAndGrad one = loss_and_grad(net, batch, w);
    w.w_alpha = 2.0;
    const LossAndGrad two = loss_and_grad(net, batch, w);
    CHECK(std::abs(two.loss - 2.0 * one.loss) <= 1e-12 * std::abs(one.loss));
    for (std::size_t i = 0; i < one.grads.size(); ++i)
        CHECK((two.grads[i] - 2.0 * one.grads[i]).cwiseAbs().maxCoeff() <=
              1e-12 * std::max(1.0, one.grads[i].cwiseAbs().maxCoeff()));
}

TEST_CASE("training")
{
    std::mt19937_64 rng(14);
    const std::vector<TrainSample> single = random_batch(1, 12, 6, 5, rng);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 1;
    PointNetLite net(6, 5, 15);
    const std::vector<double> history = train(net, single, cfg);
    REQUIRE(history.size() == 2);
    CHECK(history[1] < history[0]);

    const std::vector<TrainSample> data = random_batch(20, 12, 6, 5, rng);
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.seed = 4;
    PointNetLite a(6, 5, 16), b(6, 5, 16);
    int calls = 0;
    const auto ha = train(a, data, cfg, [&](int epoch, double loss) {
        CHECK(epoch == calls++);
        CHECK(std::isfinite(loss));
    });
    const auto hb = train(b, data, cfg);
    CHECK(calls == 3);
    CHECK(ha == hb);
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i].value == b.parameters()[i].value);

    cfg.learning_rate = 0.0;
    PointNetLite frozen(6, 5, 17);
    const PointNetLite before = frozen;
    const auto flat = train(frozen, data, cfg);
    for (std::size_t i = 0; i < before.parameters().size(); ++i)
        CHECK(frozen.parameters()[i].value == before.parameters()[i].value);
    CHECK(flat[0] == flat[1]);
    CHECK(flat[1] == flat[2]);

    CHECK(code_of([&] { train(frozen, std::span<const TrainSample>{}, cfg); }) == ErrorCode::invalid_argument);
    cfg.batch_size = 0;
    CHECK(code_of([&] { train(frozen, data, cfg); }) == ErrorCode::invalid_argument);
}

TEST_CASE("a single sample is fitted to a small fraction of its initial loss")
{
    std::mt19937_64 rng(18);
    const std::vector<TrainSample> single = random_batch(1, 32, 6, 10, rng);
    PointNetLite net(6, 10, 19);
    const double initial = loss_and_grad(net, single, {}).loss;
    TrainConfig cfg;
    cfg.epochs = 500;
    cfg.batch_size = 1;
    train(net, single, cfg);
    CHECK(loss_and_grad(net, single, {}).loss < 1e-3 * initial);
}

TEST_CASE("gradient check harness")
{
    std::mt19937_64 rng(20);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const PointNetLite net(6, 28, seed);
        const TrainSample s = random_batch(1, 64, 6, 28, rng).front();
        const GradCheckResult r = grad_check(net, s, {}, seed);
        CHECK(r.max_relative_error < 1e-4);
        CHECK(r.checked + r.skipped == 200);
        CHECK(r.checked > 150);
        const GradCheckResult again = grad_check(net, s, {}, seed);
        CHECK(again.max_relative_error == r.max_relative_error);
        CHECK(again.checked == r.checked);
    }

    PointNetLite zero(6, 28, 0);
    zero.set_zero();
    for (auto& t : zero.parameters())
        if (t.value.cols() == 1)
            t.value.setConstant(0.1);
    const TrainSample s = random_batch(1, 64, 6, 28, rng).front();
    const GradCheckResult r = grad_check(zero, s, {}, 1, 0);
    CHECK(r.max_relative_error < 1e-6);
    CHECK(r.checked > 0);
}
