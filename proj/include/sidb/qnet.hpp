#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sidb/tensor.hpp"

namespace sidb {

// Aligned so that every Eigen map over the parameters takes the same vectorization path from run to run.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct NetShape {
    int in_channels = 3;
    int height = 0;  // canvas lines; the input tensor is (in_channels, height + 2, width + 2)
    int width = 0;   // canvas columns
    int conv1 = 32;
    int conv2 = 64;
    int conv3 = 64;
    int fc1 = 256;
    int fc2 = 128;

    [[nodiscard]] int outputs() const { return height * width; }
    [[nodiscard]] int input_size() const { return in_channels * (height + 2) * (width + 2); }
    void validate() const;

    friend bool operator==(const NetShape&, const NetShape&) = default;
};

// One named parameter tensor inside the flat parameter vector.
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

// Q-network: padded 3x3 conv, two unpadded 3x3 convs, three dense layers, ReLU after all but
// the last. Parameters live in one flat vector; conv weights are laid out (out, ky, kx, in).
class QNetwork {
  public:
    QNetwork() = default;
    // Zero-initialized.
    explicit QNetwork(NetShape shape);
    // Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for weights and biases.
    QNetwork(NetShape shape, std::uint64_t seed);

    [[nodiscard]] const NetShape& shape() const { return shape_; }
    [[nodiscard]] const std::vector<ParamTensor>& tensors() const { return tensors_; }
    [[nodiscard]] const ParamTensor& tensor(const std::string& name) const;
    [[nodiscard]] ParamVector& params() { return params_; }
    [[nodiscard]] const ParamVector& params() const { return params_; }

    [[nodiscard]] std::vector<double> forward(const StateTensor& x) const;
    // Columns are samples; returns outputs x batch.
    [[nodiscard]] Eigen::MatrixXd forward_batch(const std::vector<const StateTensor*>& xs) const;

    // Mean Huber loss between q[action] and target over the batch, and its gradient with respect
    // to every parameter (written to grad, resized to params().size()).
    double loss_and_gradient(const std::vector<const StateTensor*>& xs, std::span<const std::size_t> actions,
                             std::span<const double> targets, ParamVector& grad,
                             double huber_delta = 1.0) const;

    // Same shape and bitwise-equal parameters.
    friend bool operator==(const QNetwork& a, const QNetwork& b) { return a.shape_ == b.shape_ && a.params_ == b.params_; }

  private:
    struct ConvGeom {
        int in_c, in_h, in_w, out_c, out_h, out_w, pad;
        std::vector<int> taps;  // per (output position, kernel tap): input position or -1
    };
    struct Cache;

    void build();
    void run_forward(const std::vector<const StateTensor*>& xs, Cache& cache) const;

    NetShape shape_;
    std::vector<ParamTensor> tensors_;
    ParamVector params_;
    std::vector<ConvGeom> convs_;
};

// Index of the largest q among mask-true entries, lowest index on ties.
// Throws std::logic_error when no entry is allowed.
[[nodiscard]] std::size_t masked_argmax(std::span<const double> q, std::span<const std::uint8_t> mask);

struct Transition {
    StateTensor state;
    std::size_t action = 0;
    double reward = 0.0;
    StateTensor next_state;
    bool terminal = false;
    std::vector<std::uint8_t> next_mask;
};

// y = r for terminal transitions, otherwise r + gamma * Q_target(s')[argmax over the mask of Q_online(s')].
[[nodiscard]] std::vector<double> ddqn_targets(const std::vector<const Transition*>& batch, const QNetwork& online,
                                               const QNetwork& target, double gamma);

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    void validate() const;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

void adam_update(ParamVector& params, const ParamVector& grad, AdamState& opt);

class NonFiniteError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// One double-DQN gradient step on online; target is only read. Returns the batch loss.
// Throws NonFiniteError, leaving online and opt untouched, when the loss or a gradient is not finite.
double train_batch(QNetwork& online, const QNetwork& target, AdamState& opt,
                   const std::vector<const Transition*>& batch, double gamma, double huber_delta = 1.0);

inline void sync_target(const QNetwork& online, QNetwork& target) { target = online; }

}  // namespace sidb
