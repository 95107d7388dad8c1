#pragma once

#include "dsf/common.hpp"
#include "dsf/raster.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dsf::nn {

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
};

/**
 * Reverse-mode autodiff over dense matrices. Nodes are appended in evaluation
 * order, so a single reverse sweep propagates gradients. Only the operations
 * the point-cloud regressor needs are provided.
 */
class Tape {
public:
    Var leaf(MatrixXd value);

    Var matmul(Var a, Var b);
    /// x + b * 1^T for a column vector b.
    Var add_bias(Var x, Var b);
    Var relu(Var x);
    /// Row-wise maximum over columns; ties go to the lowest column.
    Var max_pool(Var x);
    Var mul_const(Var x, const MatrixXd& c);
    Var sub_const(Var x, const MatrixXd& c);
    Var add(Var a, Var b);
    Var scale(Var x, double s);
    /// Scalar sum of squared entries.
    Var sum_squares(Var x);
    /// Scalar user function of x with its gradient: f(value, grad_out) -> value.
    Var scalar_fn(Var x, const std::function<double(const MatrixXd&, MatrixXd&)>& f);

    void backward(Var scalar);

    const MatrixXd& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    const MatrixXd& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

    /// Rectifier masks and pooling winners seen so far, for kink detection.
    const std::vector<std::uint64_t>& activation_pattern() const { return pattern_; }

private:
    struct Node {
        MatrixXd value;
        MatrixXd grad;
        std::function<void(std::vector<Node>&, int)> back;
    };

    Var push(MatrixXd value, std::function<void(std::vector<Node>&, int)> back);
    static MatrixXd& grad_of(std::vector<Node>& nodes, int id);

    std::vector<Node> nodes_;
    std::vector<std::uint64_t> pattern_;
};

struct NamedTensor {
    std::string name;
    MatrixXd value;  // vectors are stored as a single column
};

/**
 * PointNet-style regressor without input or feature transforms: shared
 * per-point layers in -> 64 -> 64 -> 128 with ReLU, max-pool over points,
 * head 128 -> 64 (ReLU) -> d. The head output is multiplied by a fixed
 * per-coefficient scale so that the network works in standardised units.
 */
class PointNetLite {
public:
    PointNetLite() = default;
    PointNetLite(int input_width, int output_width, std::uint64_t seed);

    /// Rebuilds a network from named tensors, e.g. a loaded checkpoint.
    static PointNetLite from_parameters(std::vector<NamedTensor> params, VectorXd output_scale);

    int input_width() const { return input_width_; }
    int output_width() const { return output_width_; }

    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    std::size_t parameter_count() const;

    VectorXd& output_scale() { return output_scale_; }
    const VectorXd& output_scale() const { return output_scale_; }

    /// Builds the forward graph of features (input_width x m) on tape; returns
    /// the output node and fills param_vars with one leaf per parameter.
    Var build(Tape& tape, const MatrixXd& features, std::vector<Var>& param_vars) const;

    void set_zero();

    static inline const std::vector<int> kTrunkWidths = {64, 64, 128};
    static constexpr int kHeadWidth = 64;

private:
    int input_width_ = 0;
    int output_width_ = 0;
    std::vector<NamedTensor> params_;
    VectorXd output_scale_;
};

/// Output for points stored as columns of features. Invariant to column order.
VectorXd forward(const PointNetLite& net, const MatrixXd& features);

/// Optional extra penalty on the network output: returns its value and writes
/// the gradient with respect to the output.
using OutputPenalty = std::function<double(const VectorXd& output, VectorXd& grad)>;

struct TrainSample {
    MatrixXd features;
    VectorXd target;
    OutputPenalty penalty;  // weighted by w5 when set
};

struct LossAndGrad {
    double loss = 0;
    std::vector<MatrixXd> grads;  // parallel to net.parameters()
};

/// Batch mean of w_alpha * |out - target|^2 + w5 * penalty(out).
LossAndGrad loss_and_grad(const PointNetLite& net, std::span<const TrainSample> batch, const LossWeights& w);

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 16;
    int epochs = 10;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossWeights weights;
};

/// Adam with seeded shuffling; returns the mean loss of each epoch.
std::vector<double> train(PointNetLite& net, std::span<const TrainSample> dataset, const TrainConfig& cfg,
                          const std::function<void(int, double)>& on_epoch = {});

struct GradCheckResult {
    double max_relative_error = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation crossed a rectifier or pooling switch
};

/// Central differences against loss_and_grad on a single sample, over all
/// parameters when max_params is 0 or a seeded subset otherwise.
GradCheckResult grad_check(const PointNetLite& net, const TrainSample& sample, const LossWeights& w,
                           std::uint64_t seed, std::size_t max_params = 200, double epsilon = 1e-5);

} // namespace dsf::nn
