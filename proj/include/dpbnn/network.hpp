#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpbnn/matrix.hpp"
#include "dpbnn/rng.hpp"

namespace dpbnn {

enum class Head {
    Classification,            // softmax over K logits
    HeteroscedasticRegression  // two outputs: (y_hat, log sigma_hat^2)
};

enum class LossKind { CrossEntropy, HeteroNll };

struct Batch {
    Matrix inputs;                  // |B| x Q
    std::vector<int> class_targets; // classification
    Vector real_targets;            // regression
    std::vector<int> indices;       // dataset positions sampled

    std::size_t size() const { return inputs.rows(); }
};

struct PerSampleGradients {
    std::vector<Vector> grads;  // |B| flat vectors of length d
    Vector per_sample_losses;   // |B|
};

// Binary keep-indicators for the hidden layers, one vector per hidden layer.
using HiddenMasks = std::vector<std::vector<std::uint8_t>>;

inline void softmax_inplace(Vector& z) {
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

// Fixed-architecture MLP: dense layers, ReLU between hidden layers, one of
// two heads. Parameters live in a flat vector with layer-major layout,
// weights before bias, row-major weight matrices.
class Network {
public:
    // layer_sizes includes input and output widths, e.g. {784, 1200, 1200, 10}.
    Network(std::vector<std::size_t> layer_sizes, Head head)
        : sizes_(std::move(layer_sizes)), head_(head) {
        if (sizes_.size() < 2) throw std::invalid_argument("network needs at least input and output layers");
        if (head_ == Head::HeteroscedasticRegression && sizes_.back() != 2)
            throw std::invalid_argument("heteroscedastic head requires exactly 2 output units");
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            weights_.emplace_back(sizes_[l + 1], sizes_[l]);
            biases_.emplace_back(sizes_[l + 1], 0.0);
        }
    }

    static Network random_init(std::vector<std::size_t> layer_sizes, Head head, Rng& rng) {
        Network net(std::move(layer_sizes), head);
        // Fan-in scaled uniform, range +-sqrt(6/in); biases stay zero. The
        // output layer starts at zero so the initial prediction is neutral
        // (uniform class probabilities, unit predictive variance); a random
        // head can otherwise emit extreme log-variances that blow up the
        // first unclipped heteroscedastic step.
        for (std::size_t l = 0; l + 1 < net.weights_.size(); ++l) {
            Matrix& w = net.weights_[l];
            double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
            for (double& v : w.data()) v = rng.uniform(-bound, bound);
        }
        return net;
    }

    const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
    Head head() const { return head_; }
    std::size_t num_layers() const { return weights_.size(); }
    std::size_t input_dim() const { return sizes_.front(); }
    std::size_t output_dim() const { return sizes_.back(); }
    std::size_t num_classes() const { return sizes_.back(); }

    Matrix& weight(std::size_t l) { return weights_[l]; }
    const Matrix& weight(std::size_t l) const { return weights_[l]; }
    Vector& bias(std::size_t l) { return biases_[l]; }
    const Vector& bias(std::size_t l) const { return biases_[l]; }

    std::size_t param_count() const {
        std::size_t d = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
            d += weights_[l].rows() * weights_[l].cols() + biases_[l].size();
        return d;
    }

    Vector flat_params() const {
        Vector out;
        out.reserve(param_count());
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.insert(out.end(), weights_[l].data().begin(), weights_[l].data().end());
            out.insert(out.end(), biases_[l].begin(), biases_[l].end());
        }
        return out;
    }

    void set_flat_params(const Vector& p) {
        if (p.size() != param_count()) throw std::invalid_argument("parameter vector length mismatch");
        std::size_t k = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            std::copy(p.begin() + k, p.begin() + k + weights_[l].data().size(), weights_[l].data().begin());
            k += weights_[l].data().size();
            std::copy(p.begin() + k, p.begin() + k + biases_[l].size(), biases_[l].begin());
            k += biases_[l].size();
        }
    }

    void add_to_params(const Vector& delta, double scale) {
        std::size_t k = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            for (double& v : weights_[l].data()) v += scale * delta[k++];
            for (double& v : biases_[l]) v += scale * delta[k++];
        }
    }

    // Forward pass for one sample; returns the raw output (logits, or the
    // (y_hat, log sigma^2) pair). Optional dropout masks on hidden units.
    Vector forward_one(const double* x, const HiddenMasks* masks = nullptr) const {
        Vector a(x, x + sizes_[0]);
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Vector z = affine(l, a);
            if (l + 1 < weights_.size()) {
                for (double& v : z) v = std::max(0.0, v);
                if (masks) {
                    const auto& m = (*masks)[l];
                    for (std::size_t j = 0; j < z.size(); ++j)
                        if (!m[j]) z[j] = 0.0;
                }
            }
            a = std::move(z);
        }
        return a;
    }

    // Batched forward: one output row per input row.
    Matrix forward(const Matrix& inputs, const HiddenMasks* masks = nullptr) const {
        if (inputs.cols() != sizes_.front())
            throw std::invalid_argument("input width " + std::to_string(inputs.cols()) +
                                        " does not match first-layer in-dimension " +
                                        std::to_string(sizes_.front()));
        Matrix out(inputs.rows(), sizes_.back());
        for (std::size_t i = 0; i < inputs.rows(); ++i) {
            Vector o = forward_one(inputs.row_ptr(i), masks);
            std::copy(o.begin(), o.end(), out.row_ptr(i));
        }
        return out;
    }

    // Class probabilities for one input (classification head).
    Vector predict_proba_one(const double* x, const HiddenMasks* masks = nullptr) const {
        Vector z = forward_one(x, masks);
        softmax_inplace(z);
        return z;
    }

    // Loss and flat gradient for one sample.
    double backward_one(const double* x, int class_target, double real_target,
                        LossKind loss, Vector& grad_out, const HiddenMasks* masks = nullptr) const {
        // Forward, caching post-activation values per layer.
        std::vector<Vector> acts;  // acts[0] = input, acts[l+1] = activation after layer l
        acts.emplace_back(x, x + sizes_[0]);
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Vector z = affine(l, acts.back());
            if (l + 1 < weights_.size()) {
                for (double& v : z) v = std::max(0.0, v);
                if (masks) {
                    const auto& m = (*masks)[l];
                    for (std::size_t j = 0; j < z.size(); ++j)
                        if (!m[j]) z[j] = 0.0;
                }
            }
            acts.push_back(std::move(z));
        }

        // Loss and output-layer delta.
        const Vector& out = acts.back();
        Vector delta(out.size());
        double loss_value = 0.0;
        if (loss == LossKind::CrossEntropy) {
            Vector p = out;
            softmax_inplace(p);
            loss_value = -std::log(std::max(p[class_target], 1e-300));
            for (std::size_t k = 0; k < p.size(); ++k)
                delta[k] = p[k] - (static_cast<int>(k) == class_target ? 1.0 : 0.0);
        } else {
            double y_hat = out[0];
            double log_var = out[1];
            double inv_var = std::exp(-log_var);
            double resid = y_hat - real_target;
            loss_value = 0.5 * (log_var + resid * resid * inv_var);
            delta[0] = resid * inv_var;
            delta[1] = 0.5 * (1.0 - resid * resid * inv_var);
        }

        // Backward through the layers into the flat gradient.
        grad_out.assign(param_count(), 0.0);
        std::size_t offset = param_count();
        for (std::size_t l = weights_.size(); l-- > 0;) {
            const Matrix& W = weights_[l];
            const Vector& a_in = acts[l];
            offset -= W.rows() * W.cols() + biases_[l].size();
            double* gw = grad_out.data() + offset;
            double* gb = gw + W.rows() * W.cols();
            for (std::size_t o = 0; o < W.rows(); ++o) {
                double d = delta[o];
                gb[o] = d;
                double* gw_row = gw + o * W.cols();
                for (std::size_t i = 0; i < W.cols(); ++i) gw_row[i] = d * a_in[i];
            }
            if (l > 0) {
                Vector prev(W.cols(), 0.0);
                for (std::size_t o = 0; o < W.rows(); ++o) {
                    double d = delta[o];
                    const double* w_row = W.row_ptr(o);
                    for (std::size_t i = 0; i < W.cols(); ++i) prev[i] += d * w_row[i];
                }
                // ReLU (and dropout) gate: the cached activation is zero
                // exactly where the unit was inactive or dropped.
                for (std::size_t i = 0; i < prev.size(); ++i)
                    if (acts[l][i] <= 0.0) prev[i] = 0.0;
                delta = std::move(prev);
            }
        }
        return loss_value;
    }

private:
    Vector affine(std::size_t l, const Vector& a) const {
        const Matrix& W = weights_[l];
        Vector z(biases_[l]);
        for (std::size_t o = 0; o < W.rows(); ++o) {
            const double* w_row = W.row_ptr(o);
            double s = 0.0;
            for (std::size_t i = 0; i < W.cols(); ++i) s += w_row[i] * a[i];
            z[o] += s;
        }
        return z;
    }

    std::vector<std::size_t> sizes_;
    Head head_;
    std::vector<Matrix> weights_;
    std::vector<Vector> biases_;
};

// Per-sample gradients of the data loss, emitted in batch index order.
inline PerSampleGradients per_sample_backward(const Network& net, const Batch& batch,
                                              LossKind loss, const HiddenMasks* masks = nullptr) {
    PerSampleGradients out;
    out.grads.resize(batch.size());
    out.per_sample_losses.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        int ct = batch.class_targets.empty() ? 0 : batch.class_targets[i];
        double rt = batch.real_targets.empty() ? 0.0 : batch.real_targets[i];
        double li = net.backward_one(batch.inputs.row_ptr(i), ct, rt, loss, out.grads[i], masks);
        if (!std::isfinite(li) || !all_finite(out.grads[i]))
            throw std::runtime_error("non-finite loss or gradient at batch sample " + std::to_string(i));
        out.per_sample_losses[i] = li;
    }
    return out;
}

// Mean loss over a batch (no gradients).
inline double mean_loss(const Network& net, const Batch& batch, LossKind loss,
                        const HiddenMasks* masks = nullptr) {
    double total = 0.0;
    Vector scratch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        int ct = batch.class_targets.empty() ? 0 : batch.class_targets[i];
        double rt = batch.real_targets.empty() ? 0.0 : batch.real_targets[i];
        Vector out = net.forward_one(batch.inputs.row_ptr(i), masks);
        if (loss == LossKind::CrossEntropy) {
            softmax_inplace(out);
            total += -std::log(std::max(out[ct], 1e-300));
        } else {
            double inv_var = std::exp(-out[1]);
            double resid = out[0] - rt;
            total += 0.5 * (out[1] + resid * resid * inv_var);
        }
    }
    return total / static_cast<double>(batch.size());
}

}  // namespace dpbnn
