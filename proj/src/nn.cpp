#include "dsf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dsf::nn {

Var Tape::push(MatrixXd value, std::function<void(std::vector<Node>&, int)> back)
{
    nodes_.push_back({std::move(value), MatrixXd(), std::move(back)});
    return {static_cast<int>(nodes_.size()) - 1};
}

MatrixXd& Tape::grad_of(std::vector<Node>& nodes, int id)
{
    Node& n = nodes[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0)
        n.grad = MatrixXd::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Tape::leaf(MatrixXd value) { return push(std::move(value), {}); }

Var Tape::matmul(Var a, Var b)
{
    MatrixXd out = value(a) * value(b);
    return push(std::move(out), [a, b](std::vector<Node>& nodes, int self) {
        const MatrixXd& g = nodes[static_cast<std::size_t>(self)].grad;
        const MatrixXd& av = nodes[static_cast<std::size_t>(a.id)].value;
        const MatrixXd& bv = nodes[static_cast<std::size_t>(b.id)].value;
        grad_of(nodes, a.id).noalias() += g * bv.transpose();
        grad_of(nodes, b.id).noalias() += av.transpose() * g;
    });
}

Var Tape::add_bias(Var x, Var b)
{
    if (value(b).cols() != 1 || value(b).rows() != value(x).rows())
        throw Error(ErrorCode::invalid_argument, "bias must be a column matching the rows of x");
    MatrixXd out = value(x);
    out.colwise() += value(b).col(0);
    return push(std::move(out), [x, b](std::vector<Node>& nodes, int self) {
        const MatrixXd& g = nodes[static_cast<std::size_t>(self)].grad;
        grad_of(nodes, x.id) += g;
        grad_of(nodes, b.id) += g.rowwise().sum();
    });
}

Var Tape::relu(Var x)
{
    const MatrixXd& in = value(x);
    MatrixXd out = in.cwiseMax(0.0);
    std::uint64_t word = 0;
    int bit = 0;
    for (Eigen::Index i = 0; i < in.size(); ++i) {
        word |= static_cast<std::uint64_t>(in.data()[i] > 0.0) << bit;
        if (++bit == 64) {
            pattern_.push_back(word);
            word = 0;
            bit = 0;
        }
    }
    if (bit)
        pattern_.push_back(word);
    return push(std::move(out), [x](std::vector<Node>& nodes, int self) {
        const MatrixXd& g = nodes[static_cast<std::size_t>(self)].grad;
        const MatrixXd& in = nodes[static_cast<std::size_t>(x.id)].value;
        grad_of(nodes, x.id) += (in.array() > 0.0).select(g, 0.0);
    });
}

Var Tape::max_pool(Var x)
{
    const MatrixXd& in = value(x);
    if (in.cols() < 1)
        throw Error(ErrorCode::invalid_argument, "max_pool needs at least one column");
    MatrixXd out(in.rows(), 1);
    std::vector<Eigen::Index> winner(static_cast<std::size_t>(in.rows()), 0);
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        double best = in(r, 0);
        Eigen::Index arg = 0;
        for (Eigen::Index c = 1; c < in.cols(); ++c) {
            if (in(r, c) > best) {
                best = in(r, c);
                arg = c;
            }
        }
        out(r, 0) = best;
        winner[static_cast<std::size_t>(r)] = arg;
        pattern_.push_back(static_cast<std::uint64_t>(arg));
    }
    return push(std::move(out), [x, winner = std::move(winner)](std::vector<Node>& nodes, int self) {
        const MatrixXd& g = nodes[static_cast<std::size_t>(self)].grad;
        MatrixXd& gx = grad_of(nodes, x.id);
        for (std::size_t r = 0; r < winner.size(); ++r)
            gx(static_cast<Eigen::Index>(r), winner[r]) += g(static_cast<Eigen::Index>(r), 0);
    });
}

Var Tape::mul_const(Var x, const MatrixXd& c)
{
    MatrixXd out = value(x).cwiseProduct(c);
    return push(std::move(out), [x, c](std::vector<Node>& nodes, int self) {
        grad_of(nodes, x.id) += nodes[static_cast<std::size_t>(self)].grad.cwiseProduct(c);
    });
}

Var Tape::sub_const(Var x, const MatrixXd& c)
{
    MatrixXd out = value(x) - c;
    return push(std::move(out), [x](std::vector<Node>& nodes, int self) {
        grad_of(nodes, x.id) += nodes[static_cast<std::size_t>(self)].grad;
    });
}

Var Tape::add(Var a, Var b)
{
    MatrixXd out = value(a) + value(b);
    return push(std::move(out), [a, b](std::vector<Node>& nodes, int self) {
        const MatrixXd g = nodes[static_cast<std::size_t>(self)].grad;
        grad_of(nodes, a.id) += g;
        grad_of(nodes, b.id) += g;
    });
}

Var Tape::scale(Var x, double s)
{
    MatrixXd out = s * value(x);
    return push(std::move(out), [x, s](std::vector<Node>& nodes, int self) {
        grad_of(nodes, x.id) += s * nodes[static_cast<std::size_t>(self)].grad;
    });
}

Var Tape::sum_squares(Var x)
{
    MatrixXd out(1, 1);
    out(0, 0) = value(x).squaredNorm();
    return push(std::move(out), [x](std::vector<Node>& nodes, int self) {
        const double g = nodes[static_cast<std::size_t>(self)].grad(0, 0);
        const MatrixXd& in = nodes[static_cast<std::size_t>(x.id)].value;
        grad_of(nodes, x.id) += (2.0 * g) * in;
    });
}

Var Tape::scalar_fn(Var x, const std::function<double(const MatrixXd&, MatrixXd&)>& f)
{
    MatrixXd local_grad = MatrixXd::Zero(value(x).rows(), value(x).cols());
    MatrixXd out(1, 1);
    out(0, 0) = f(value(x), local_grad);
    return push(std::move(out), [x, local_grad = std::move(local_grad)](std::vector<Node>& nodes, int self) {
        grad_of(nodes, x.id) += nodes[static_cast<std::size_t>(self)].grad(0, 0) * local_grad;
    });
}

void Tape::backward(Var scalar)
{
    if (value(scalar).size() != 1)
        throw Error(ErrorCode::invalid_argument, "backward starts from a scalar node");
    for (Node& n : nodes_)
        n.grad.resize(0, 0);
    grad_of(nodes_, scalar.id).setOnes();
    for (int i = scalar.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back && n.grad.size() != 0)
            n.back(nodes_, i);
    }
}

PointNetLite::PointNetLite(int input_width, int output_width, std::uint64_t seed)
    : input_width_(input_width), output_width_(output_width)
{
    if (input_width < 1 || output_width < 1)
        throw Error(ErrorCode::invalid_argument, "network widths must be positive");
    std::mt19937_64 rng(seed);
    auto add_layer = [&](const std::string& name, int in, int out, bool rectified) {
        const double bound = rectified ? std::sqrt(6.0 / in) : std::sqrt(1.0 / in);
        std::uniform_real_distribution<double> uniform(-bound, bound);
        MatrixXd w(out, in);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = uniform(rng);
        params_.push_back({name + ".weight", std::move(w)});
        params_.push_back({name + ".bias", MatrixXd::Zero(out, 1)});
    };
    int width = input_width;
    for (std::size_t i = 0; i < kTrunkWidths.size(); ++i) {
        add_layer("trunk" + std::to_string(i), width, kTrunkWidths[i], true);
        width = kTrunkWidths[i];
    }
    add_layer("head0", width, kHeadWidth, true);
    add_layer("head1", kHeadWidth, output_width, false);
    output_scale_ = VectorXd::Ones(output_width);
}

PointNetLite PointNetLite::from_parameters(std::vector<NamedTensor> params, VectorXd output_scale)
{
    if (params.size() != 2 * (kTrunkWidths.size() + 2))
        throw Error(ErrorCode::invalid_argument, "unexpected number of network tensors");
    PointNetLite net(static_cast<int>(params.front().value.cols()), static_cast<int>(params.back().value.rows()), 0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedTensor& want = net.params_[i];
        const NamedTensor& got = params[i];
        if (got.name != want.name || got.value.rows() != want.value.rows() || got.value.cols() != want.value.cols())
            throw Error(ErrorCode::invalid_argument, "tensor " + got.name + " does not match expected " + want.name);
    }
    if (output_scale.size() != net.output_width_)
        throw Error(ErrorCode::invalid_argument, "output scale length does not match the head");
    net.params_ = std::move(params);
    net.output_scale_ = std::move(output_scale);
    return net;
}

std::size_t PointNetLite::parameter_count() const
{
    std::size_t count = 0;
    for (const NamedTensor& p : params_)
        count += static_cast<std::size_t>(p.value.size());
    return count;
}

void PointNetLite::set_zero()
{
    for (NamedTensor& p : params_)
        p.value.setZero();
}

Var PointNetLite::build(Tape& tape, const MatrixXd& features, std::vector<Var>& param_vars) const
{
    if (features.rows() != input_width_)
        throw Error(ErrorCode::invalid_argument, "feature width " + std::to_string(features.rows()) +
                                                     " does not match network input " + std::to_string(input_width_));
    if (features.cols() < 1)
        throw Error(ErrorCode::invalid_argument, "network needs at least one point");
    if (params_.size() != 2 * (kTrunkWidths.size() + 2))
        throw Error(ErrorCode::invalid_argument, "network is not initialised");

    param_vars.clear();
    for (const NamedTensor& p : params_)
        param_vars.push_back(tape.leaf(p.value));

    auto dense = [&](Var x, std::size_t layer) {
        return tape.add_bias(tape.matmul(param_vars[2 * layer], x), param_vars[2 * layer + 1]);
    };
    Var h = tape.leaf(features);
    std::size_t layer = 0;
    for (; layer < kTrunkWidths.size(); ++layer)
        h = tape.relu(dense(h, layer));
    h = tape.max_pool(h);
    h = tape.relu(dense(h, layer++));
    h = dense(h, layer);
    return tape.mul_const(h, output_scale_);
}

VectorXd forward(const PointNetLite& net, const MatrixXd& features)
{
    Tape tape;
    std::vector<Var> params;
    const Var out = net.build(tape, features, params);
    return tape.value(out).col(0);
}

namespace {

double sample_loss(Tape& tape, const PointNetLite& net, const TrainSample& s, const LossWeights& w,
                   std::vector<Var>& params, Var& loss)
{
    const Var out = net.build(tape, s.features, params);
    if (s.target.size() != net.output_width())
        throw Error(ErrorCode::invalid_argument, "target length does not match network output");
    loss = tape.scale(tape.sum_squares(tape.sub_const(out, s.target)), w.w_alpha);
    if (s.penalty && w.w5 != 0.0) {
        const Var pen = tape.scalar_fn(out, [&](const MatrixXd& o, MatrixXd& g) {
            VectorXd grad = VectorXd::Zero(o.rows());
            const double v = s.penalty(o.col(0), grad);
            g.col(0) = grad;
            return v;
        });
        loss = tape.add(loss, tape.scale(pen, w.w5));
    }
    return tape.value(loss)(0, 0);
}

} // namespace

LossAndGrad loss_and_grad(const PointNetLite& net, std::span<const TrainSample> batch, const LossWeights& w)
{
    if (batch.empty())
        throw Error(ErrorCode::invalid_argument, "batch is empty");
    LossAndGrad out;
    for (const NamedTensor& p : net.parameters())
        out.grads.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));

    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const TrainSample& s : batch) {
        Tape tape;
        std::vector<Var> params;
        Var loss;
        out.loss += inv * sample_loss(tape, net, s, w, params, loss);
        tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const MatrixXd& g = tape.grad(params[i]);
            if (g.size() != 0)
                out.grads[i] += inv * g;
        }
    }
    return out;
}

std::vector<double> train(PointNetLite& net, std::span<const TrainSample> dataset, const TrainConfig& cfg,
                          const std::function<void(int, double)>& on_epoch)
{
    if (dataset.empty())
        throw Error(ErrorCode::invalid_argument, "training set is empty");
    if (!(cfg.learning_rate >= 0.0) || cfg.batch_size < 1)
        throw Error(ErrorCode::invalid_argument, "invalid training configuration");

    std::vector<MatrixXd> m1, m2;
    for (const NamedTensor& p : net.parameters()) {
        m1.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
        m2.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;
    long step = 0;
    std::vector<TrainSample> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = begin; i < end; ++i)
                batch.push_back(dataset[order[i]]);
            const LossAndGrad lg = loss_and_grad(net, batch, cfg.weights);
            epoch_loss += lg.loss * static_cast<double>(end - begin);

            ++step;
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            auto& params = net.parameters();
            for (std::size_t i = 0; i < params.size(); ++i) {
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * lg.grads[i];
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * lg.grads[i].cwiseAbs2();
                params[i].value.array() -= cfg.learning_rate * (m1[i].array() / c1) /
                                           ((m2[i].array() / c2).sqrt() + cfg.epsilon);
            }
        }
        history.push_back(epoch_loss / static_cast<double>(dataset.size()));
        if (on_epoch)
            on_epoch(epoch, history.back());
    }
    return history;
}

GradCheckResult grad_check(const PointNetLite& net, const TrainSample& sample, const LossWeights& w,
                           std::uint64_t seed, std::size_t max_params, double epsilon)
{
    const std::array<TrainSample, 1> batch = {sample};
    const LossAndGrad analytic = loss_and_grad(net, batch, w);

    std::vector<std::pair<std::size_t, Eigen::Index>> coords;
    for (std::size_t p = 0; p < net.parameters().size(); ++p)
        for (Eigen::Index i = 0; i < net.parameters()[p].value.size(); ++i)
            coords.emplace_back(p, i);
    if (max_params > 0 && coords.size() > max_params) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_params);
    }

    auto evaluate = [&](const PointNetLite& n, std::vector<std::uint64_t>& pattern) {
        Tape tape;
        std::vector<Var> params;
        Var loss;
        const double v = sample_loss(tape, n, sample, w, params, loss);
        pattern = tape.activation_pattern();
        return v;
    };

    std::vector<std::uint64_t> base_pattern, plus_pattern, minus_pattern;
    const double base = evaluate(net, base_pattern);
    const double floor = 1e-6 * std::max(1.0, std::abs(base));

    GradCheckResult result;
    PointNetLite probe = net;
    for (const auto& [p, i] : coords) {
        double& theta = probe.parameters()[p].value.data()[i];
        const double saved = theta;
        theta = saved + epsilon;
        const double plus = evaluate(probe, plus_pattern);
        theta = saved - epsilon;
        const double minus = evaluate(probe, minus_pattern);
        theta = saved;
        if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
            ++result.skipped;
            continue;
        }
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double exact = analytic.grads[p].data()[i];
        const double denom = std::max({std::abs(numeric), std::abs(exact), floor});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(numeric - exact) / denom);
        ++result.checked;
    }
    return result;
}

} // namespace dsf::nn
