#include "sidb/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sidb/random.hpp"

namespace sidb {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;

void relu_inplace(Eigen::MatrixXd& m) { m = m.cwiseMax(0.0); }

// Zeroes gradient entries where the forward activation was clipped.
void relu_backward(Eigen::MatrixXd& grad, const Eigen::MatrixXd& activation) {
    grad = (activation.array() > 0.0).select(grad, 0.0);
}

}  // namespace

void NetShape::validate() const {
    if (in_channels < 1) throw std::invalid_argument("network needs at least one input channel");
    if (height < 3 || width < 3) {
        throw std::invalid_argument("canvas of " + std::to_string(height) + "x" + std::to_string(width) +
                                    " is too small for two unpadded 3x3 convolutions");
    }
    for (int n : {conv1, conv2, conv3, fc1, fc2}) {
        if (n < 1) throw std::invalid_argument("layer widths must be positive");
    }
}

struct QNetwork::Cache {
    int batch = 0;
    Eigen::MatrixXd input;                 // channels x (batch * positions)
    std::vector<Eigen::MatrixXd> cols;     // per conv layer
    std::vector<Eigen::MatrixXd> conv_out; // per conv layer, after ReLU
    Eigen::MatrixXd h1, h2, q;
};

QNetwork::QNetwork(NetShape shape) : shape_(shape) {
    shape_.validate();
    build();
}

QNetwork::QNetwork(NetShape shape, std::uint64_t seed) : QNetwork(shape) {
    Rng rng(seed);
    for (std::size_t t = 0; t < tensors_.size(); t += 2) {
        const auto& w = tensors_[t];
        const auto& b = tensors_[t + 1];
        const double fan_in = static_cast<double>(w.size / static_cast<std::size_t>(w.shape.front()));
        const double bound = 1.0 / std::sqrt(fan_in);
        for (std::size_t i = 0; i < w.size; ++i) params_[w.offset + i] = rng.uniform(-bound, bound);
        for (std::size_t i = 0; i < b.size; ++i) params_[b.offset + i] = rng.uniform(-bound, bound);
    }
}

void QNetwork::build() {
    const int hf = shape_.height + 2;
    const int wf = shape_.width + 2;
    auto make_conv = [](int in_c, int in_h, int in_w, int out_c, int pad) {
        ConvGeom g{in_c, in_h, in_w, out_c, in_h + 2 * pad - 2, in_w + 2 * pad - 2, pad, {}};
        g.taps.resize(static_cast<std::size_t>(g.out_h * g.out_w * kTaps));
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                for (int ky = 0; ky < kKernel; ++ky) {
                    for (int kx = 0; kx < kKernel; ++kx) {
                        const int iy = oy + ky - pad;
                        const int ix = ox + kx - pad;
                        const bool inside = iy >= 0 && iy < in_h && ix >= 0 && ix < in_w;
                        g.taps[static_cast<std::size_t>((oy * g.out_w + ox) * kTaps + ky * kKernel + kx)] =
                            inside ? iy * in_w + ix : -1;
                    }
                }
            }
        }
        return g;
    };
    convs_.clear();
    convs_.push_back(make_conv(shape_.in_channels, hf, wf, shape_.conv1, 1));
    convs_.push_back(make_conv(shape_.conv1, hf, wf, shape_.conv2, 0));
    convs_.push_back(make_conv(shape_.conv2, shape_.height, shape_.width, shape_.conv3, 0));

    tensors_.clear();
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> dims) {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        tensors_.push_back({std::move(name), std::move(dims), offset, n});
        offset += n;
    };
    const char* conv_names[] = {"conv1", "conv2", "conv3"};
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        const auto& g = convs_[l];
        add(std::string(conv_names[l]) + ".weight", {g.out_c, kKernel, kKernel, g.in_c});
        add(std::string(conv_names[l]) + ".bias", {g.out_c});
    }
    const auto& last = convs_.back();
    const int flat = last.out_c * last.out_h * last.out_w;
    add("fc1.weight", {shape_.fc1, flat});
    add("fc1.bias", {shape_.fc1});
    add("fc2.weight", {shape_.fc2, shape_.fc1});
    add("fc2.bias", {shape_.fc2});
    add("fc3.weight", {shape_.outputs(), shape_.fc2});
    add("fc3.bias", {shape_.outputs()});
    params_.assign(offset, 0.0);
}

const ParamTensor& QNetwork::tensor(const std::string& name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return t;
    }
    throw std::out_of_range("no parameter tensor named '" + name + "'");
}

void QNetwork::run_forward(const std::vector<const StateTensor*>& xs, Cache& c) const {
    const int batch = static_cast<int>(xs.size());
    if (batch == 0) throw std::invalid_argument("forward needs at least one input");
    const int hf = shape_.height + 2;
    const int wf = shape_.width + 2;
    const int p0 = hf * wf;
    c.batch = batch;
    c.input.resize(shape_.in_channels, static_cast<Eigen::Index>(batch) * p0);
    for (int b = 0; b < batch; ++b) {
        const auto& x = *xs[static_cast<std::size_t>(b)];
        if (x.channels != shape_.in_channels || x.height != hf || x.width != wf) {
            throw std::invalid_argument("input tensor shape (" + std::to_string(x.channels) + "," + std::to_string(x.height) +
                                        "," + std::to_string(x.width) + ") does not match the network's (" +
                                        std::to_string(shape_.in_channels) + "," + std::to_string(hf) + "," +
                                        std::to_string(wf) + ")");
        }
        for (int ch = 0; ch < x.channels; ++ch) {
            for (int p = 0; p < p0; ++p) c.input(ch, b * p0 + p) = x.data[static_cast<std::size_t>(ch * p0 + p)];
        }
    }

    c.cols.resize(convs_.size());
    c.conv_out.resize(convs_.size());
    const Eigen::MatrixXd* in = &c.input;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        const auto& g = convs_[l];
        const int p_in = g.in_h * g.in_w;
        const int p_out = g.out_h * g.out_w;
        const int k = kTaps * g.in_c;
        auto& cols = c.cols[l];
        cols.resize(k, static_cast<Eigen::Index>(batch) * p_out);
        const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(g.in_c);
        for (int b = 0; b < batch; ++b) {
            for (int p = 0; p < p_out; ++p) {
                double* dst = cols.col(b * p_out + p).data();
                const int* taps = &g.taps[static_cast<std::size_t>(p * kTaps)];
                for (int t = 0; t < kTaps; ++t) {
                    if (taps[t] < 0) {
                        std::memset(dst + t * g.in_c, 0, bytes);
                    } else {
                        std::memcpy(dst + t * g.in_c, in->col(b * p_in + taps[t]).data(), bytes);
                    }
                }
            }
        }
        const auto& wt = tensors_[2 * l];
        const auto& bt = tensors_[2 * l + 1];
        const ConstRowMap w(params_.data() + wt.offset, g.out_c, k);
        const ConstVecMap bias(params_.data() + bt.offset, g.out_c);
        auto& out = c.conv_out[l];
        out.noalias() = w * cols;
        out.colwise() += bias;
        relu_inplace(out);
        in = &out;
    }

    const auto& last = convs_.back();
    const int flat = last.out_c * last.out_h * last.out_w;
    const Eigen::Map<const Eigen::MatrixXd> features(c.conv_out.back().data(), flat, batch);
    auto dense = [&](std::size_t t, const auto& x, Eigen::MatrixXd& y, bool relu) {
        const auto& wt = tensors_[t];
        const ConstRowMap w(params_.data() + wt.offset, wt.shape[0], wt.shape[1]);
        const ConstVecMap bias(params_.data() + tensors_[t + 1].offset, wt.shape[0]);
        y.noalias() = w * x;
        y.colwise() += bias;
        if (relu) relu_inplace(y);
    };
    dense(6, features, c.h1, true);
    dense(8, c.h1, c.h2, true);
    dense(10, c.h2, c.q, false);
}

Eigen::MatrixXd QNetwork::forward_batch(const std::vector<const StateTensor*>& xs) const {
    Cache c;
    run_forward(xs, c);
    return std::move(c.q);
}

std::vector<double> QNetwork::forward(const StateTensor& x) const {
    const Eigen::MatrixXd q = forward_batch({&x});
    return {q.data(), q.data() + q.size()};
}

double QNetwork::loss_and_gradient(const std::vector<const StateTensor*>& xs, std::span<const std::size_t> actions,
                                   std::span<const double> targets, ParamVector& grad,
                                   double huber_delta) const {
    if (xs.size() != actions.size() || xs.size() != targets.size()) {
        throw std::invalid_argument("batch inputs, actions and targets differ in length");
    }
    Cache c;
    run_forward(xs, c);
    const int batch = c.batch;
    const double inv_b = 1.0 / batch;

    double loss = 0.0;
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(c.q.rows(), batch);
    for (int b = 0; b < batch; ++b) {
        const auto a = static_cast<Eigen::Index>(actions[static_cast<std::size_t>(b)]);
        if (a >= c.q.rows()) throw std::out_of_range("action index outside the network output");
        const double e = c.q(a, b) - targets[static_cast<std::size_t>(b)];
        const double ae = std::abs(e);
        loss += ae <= huber_delta ? 0.5 * e * e : huber_delta * (ae - 0.5 * huber_delta);
        dq(a, b) = std::clamp(e, -huber_delta, huber_delta) * inv_b;
    }
    loss *= inv_b;

    grad.assign(params_.size(), 0.0);
    auto dense_back = [&](std::size_t t, const auto& x, const Eigen::MatrixXd& dy) -> Eigen::MatrixXd {
        const auto& wt = tensors_[t];
        RowMap gw(grad.data() + wt.offset, wt.shape[0], wt.shape[1]);
        VecMap gb(grad.data() + tensors_[t + 1].offset, wt.shape[0]);
        gw.noalias() = dy * x.transpose();
        gb = dy.rowwise().sum();
        const ConstRowMap w(params_.data() + wt.offset, wt.shape[0], wt.shape[1]);
        return w.transpose() * dy;
    };

    const auto& last = convs_.back();
    const int flat = last.out_c * last.out_h * last.out_w;
    const Eigen::Map<const Eigen::MatrixXd> features(c.conv_out.back().data(), flat, batch);

    Eigen::MatrixXd d = dense_back(10, c.h2, dq);
    relu_backward(d, c.h2);
    d = dense_back(8, c.h1, d);
    relu_backward(d, c.h1);
    Eigen::MatrixXd dfeat = dense_back(6, features, d);

    Eigen::MatrixXd dout = Eigen::Map<Eigen::MatrixXd>(dfeat.data(), last.out_c, static_cast<Eigen::Index>(batch) * last.out_h * last.out_w);
    for (std::size_t l = convs_.size(); l-- > 0;) {
        const auto& g = convs_[l];
        relu_backward(dout, c.conv_out[l]);
        const int k = kTaps * g.in_c;
        const auto& wt = tensors_[2 * l];
        RowMap gw(grad.data() + wt.offset, g.out_c, k);
        VecMap gb(grad.data() + tensors_[2 * l + 1].offset, g.out_c);
        gw.noalias() = dout * c.cols[l].transpose();
        gb = dout.rowwise().sum();
        if (l == 0) break;
        const ConstRowMap w(params_.data() + wt.offset, g.out_c, k);
        const Eigen::MatrixXd dcols = w.transpose() * dout;
        const int p_in = g.in_h * g.in_w;
        const int p_out = g.out_h * g.out_w;
        Eigen::MatrixXd din = Eigen::MatrixXd::Zero(g.in_c, static_cast<Eigen::Index>(batch) * p_in);
        for (int b = 0; b < batch; ++b) {
            for (int p = 0; p < p_out; ++p) {
                const double* src = dcols.col(b * p_out + p).data();
                const int* taps = &g.taps[static_cast<std::size_t>(p * kTaps)];
                for (int t = 0; t < kTaps; ++t) {
                    if (taps[t] < 0) continue;
                    double* dst = din.col(b * p_in + taps[t]).data();
                    for (int ch = 0; ch < g.in_c; ++ch) dst[ch] += src[t * g.in_c + ch];
                }
            }
        }
        dout = std::move(din);
    }
    return loss;
}

std::size_t masked_argmax(std::span<const double> q, std::span<const std::uint8_t> mask) {
    if (q.size() != mask.size()) throw std::invalid_argument("q and mask differ in length");
    std::size_t best = q.size();
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (mask[i] && (best == q.size() || q[i] > q[best])) best = i;
    }
    if (best == q.size()) throw std::logic_error("masked_argmax called with an all-false mask");
    return best;
}

std::vector<double> ddqn_targets(const std::vector<const Transition*>& batch, const QNetwork& online,
                                 const QNetwork& target, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
    std::vector<double> y(batch.size());
    std::vector<const StateTensor*> next;
    std::vector<std::size_t> which;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i]->reward;
        if (!batch[i]->terminal && gamma > 0.0) {
            next.push_back(&batch[i]->next_state);
            which.push_back(i);
        }
    }
    if (next.empty()) return y;
    const Eigen::MatrixXd q_online = online.forward_batch(next);
    const Eigen::MatrixXd q_target = target.forward_batch(next);
    for (std::size_t k = 0; k < which.size(); ++k) {
        const auto& t = *batch[which[k]];
        const auto col = static_cast<Eigen::Index>(k);
        const std::size_t a = masked_argmax({q_online.col(col).data(), static_cast<std::size_t>(q_online.rows())}, t.next_mask);
        y[which[k]] += gamma * q_target(static_cast<Eigen::Index>(a), col);
    }
    return y;
}

void AdamState::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("moment decay rates must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer epsilon must be positive");
    if (m.size() != v.size()) throw std::invalid_argument("optimizer moment tensors differ in size");
}

void adam_update(ParamVector& params, const ParamVector& grad, AdamState& opt) {
    if (grad.size() != params.size()) throw std::invalid_argument("gradient does not match the parameters");
    if (opt.m.empty()) {
        opt.m.assign(params.size(), 0.0);
        opt.v.assign(params.size(), 0.0);
    }
    if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw std::invalid_argument("optimizer state does not match the parameters");
    }
    ++opt.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    const double step = opt.learning_rate / c1;
    const double root_c2 = std::sqrt(c2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grad[i];
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
        params[i] -= step * opt.m[i] / (std::sqrt(opt.v[i]) / root_c2 + opt.epsilon);
    }
}

double train_batch(QNetwork& online, const QNetwork& target, AdamState& opt,
                   const std::vector<const Transition*>& batch, double gamma, double huber_delta) {
    if (batch.empty()) throw std::invalid_argument("train_batch needs a nonempty batch");
    opt.validate();
    const auto y = ddqn_targets(batch, online, target, gamma);
    std::vector<const StateTensor*> xs;
    std::vector<std::size_t> actions;
    xs.reserve(batch.size());
    for (const auto* t : batch) {
        xs.push_back(&t->state);
        actions.push_back(t->action);
    }
    ParamVector grad;
    const double loss = online.loss_and_gradient(xs, actions, y, grad, huber_delta);
    if (!std::isfinite(loss)) throw NonFiniteError("training loss is not finite");
    for (double g : grad) {
        if (!std::isfinite(g)) throw NonFiniteError("training gradient is not finite");
    }
    adam_update(online.params(), grad, opt);
    return loss;
}

}  // namespace sidb
