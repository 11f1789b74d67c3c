#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dpbnn/network.hpp"

namespace dpbnn {

enum class ClipMode { Standard, Stabilized };
enum class PriorKind { NonInformative, Gaussian, Laplace };

struct Prior {
    PriorKind kind = PriorKind::NonInformative;
    double scale = 1.0;
};

// Stability constant of the always-clipped (stabilized) mode.
inline constexpr double kClipStabilizer = 1e-6;

struct DPConfig {
    double eta = 0.1;                                   // learning rate
    double C = std::numeric_limits<double>::infinity(); // clipping norm
    double sigma = 0.0;                                 // noise multiplier
    int batch_size = 1;
    int n = 1;       // dataset size
    int T = 0;       // iteration count
    Prior prior;
    ClipMode clip_mode = ClipMode::Standard;

    void validate() const {
        if (!(eta > 0)) throw std::invalid_argument("eta must be positive");
        if (!(C > 0)) throw std::invalid_argument("clipping norm must be positive");
        if (sigma < 0) throw std::invalid_argument("noise multiplier must be nonnegative");
        if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
        if (n < batch_size) throw std::invalid_argument("dataset size must be >= batch size");
        if (T < 0) throw std::invalid_argument("iteration count must be >= 0");
    }
};

struct VariationalParams {
    Vector mu;
    Vector rho;  // sigma = softplus(rho) elementwise
};

inline double softplus(double rho) {
    return rho > 30.0 ? rho : std::log1p(std::exp(rho));
}

inline double sigmoid(double rho) {
    return rho >= 0.0 ? 1.0 / (1.0 + std::exp(-rho)) : std::exp(rho) / (1.0 + std::exp(rho));
}

inline Vector clip(Vector g, double C, ClipMode mode) {
    if (!(C > 0)) throw std::invalid_argument("clipping norm must be positive");
    if (!all_finite(g)) throw std::runtime_error("non-finite gradient passed to clip");
    double norm = l2_norm(g);
    double factor;
    if (mode == ClipMode::Standard) {
        factor = norm > C ? C / norm : 1.0;
    } else {
        factor = C / (norm + kClipStabilizer);
    }
    for (double& v : g) v *= factor;
    return g;
}

inline Vector prior_grad(const Vector& w, const Prior& prior) {
    Vector g(w.size(), 0.0);
    switch (prior.kind) {
        case PriorKind::NonInformative:
            break;
        case PriorKind::Gaussian: {
            double inv_s2 = 1.0 / (prior.scale * prior.scale);
            for (std::size_t i = 0; i < w.size(); ++i) g[i] = w[i] * inv_s2;
            break;
        }
        case PriorKind::Laplace: {
            double inv_s = 1.0 / prior.scale;
            for (std::size_t i = 0; i < w.size(); ++i)
                g[i] = w[i] > 0 ? inv_s : (w[i] < 0 ? -inv_s : 0.0);
            break;
        }
    }
    return g;
}

namespace detail {

// Sum of clipped per-sample gradients. C = infinity leaves gradients intact.
inline Vector clipped_gradient_sum(const std::vector<Vector>& grads, double C, ClipMode mode) {
    Vector sum(grads.front().size(), 0.0);
    for (const Vector& g : grads) {
        if (std::isinf(C) && mode == ClipMode::Standard) {
            axpy(1.0, g, sum);
        } else {
            Vector gc = clip(g, C, mode);
            axpy(1.0, gc, sum);
        }
    }
    return sum;
}

}  // namespace detail

// One DP-SGD step: average clipped per-sample gradients, add sigma*C/|B|
// Gaussian noise, descend with the prior-derived regularizer.
// With sigma=0 the noise stream is untouched.
inline void step_dp_sgd(Network& net, const Batch& batch, const DPConfig& cfg,
                        LossKind loss, Rng& noise_rng) {
    cfg.validate();
    PerSampleGradients psg = per_sample_backward(net, batch, loss);
    Vector g_hat = detail::clipped_gradient_sum(psg.grads, cfg.C, cfg.clip_mode);
    double inv_b = 1.0 / static_cast<double>(batch.size());
    for (double& v : g_hat) v *= inv_b;
    if (cfg.sigma > 0) {
        double noise_scale = cfg.sigma * cfg.C * inv_b;
        for (double& v : g_hat) v += noise_scale * noise_rng.normal();
    }
    Vector reg = prior_grad(net.flat_params(), cfg.prior);
    axpy(1.0, reg, g_hat);
    net.add_to_params(g_hat, -cfg.eta);
}

// One DP-SGLD step: clip raw per-sample gradients, scale the batch sum by
// n/|B|, descend with the regularizer, then inject N(0, eta) noise. The
// noise is realized as -sqrt(eta)*z so that a run sharing its standard
// normal stream with a mapped DP-SGD run follows the identical
// trajectory.
inline void step_dp_sgld(Network& net, const Batch& batch, const DPConfig& cfg,
                         LossKind loss, Rng& noise_rng, bool langevin_noise = true) {
    cfg.validate();
    PerSampleGradients psg = per_sample_backward(net, batch, loss);
    Vector update = detail::clipped_gradient_sum(psg.grads, cfg.C, cfg.clip_mode);
    double scale = static_cast<double>(cfg.n) / static_cast<double>(batch.size());
    for (double& v : update) v *= scale;
    Vector reg = prior_grad(net.flat_params(), cfg.prior);
    axpy(1.0, reg, update);
    if (langevin_noise) {
        double sd = std::sqrt(cfg.eta);
        for (double& v : update) v += (sd / cfg.eta) * noise_rng.normal();
    }
    net.add_to_params(update, -cfg.eta);
}

// Per-sample BBP hyperparameter gradient for a frozen weight draw
// w = mu + softplus(rho) .* eps. Returns the concatenated (mu, rho) gradient
// of  L = log q(w|theta) - log p(w) + loss(x, y; w).
//
// The chain rule gives
//   dL/dmu  = dL/dw + dL/dmu|_w,     dL/drho = dL/dw .* eps .* sigmoid(rho) + dL/drho|_w
// and the log q contributions to dL/dw and dL/dmu|_w cancel exactly, so the
// mu gradient is the data-plus-prior gradient at w.
inline Vector bbp_sample_gradient(const Network& scratch_net, const VariationalParams& vp,
                                  const Vector& eps, const Batch& batch, std::size_t sample_idx,
                                  LossKind loss, const Prior& prior, Network& work) {
    std::size_t d = vp.mu.size();
    Vector w(d), sig(d);
    for (std::size_t k = 0; k < d; ++k) {
        sig[k] = softplus(vp.rho[k]);
        w[k] = vp.mu[k] + sig[k] * eps[k];
    }
    work.set_flat_params(w);
    Vector grad_w;
    int ct = batch.class_targets.empty() ? 0 : batch.class_targets[sample_idx];
    double rt = batch.real_targets.empty() ? 0.0 : batch.real_targets[sample_idx];
    work.backward_one(batch.inputs.row_ptr(sample_idx), ct, rt, loss, grad_w);
    Vector pg = prior_grad(w, prior);

    Vector out(2 * d);
    for (std::size_t k = 0; k < d; ++k) {
        double dLdw = grad_w[k] + pg[k] - eps[k] / sig[k];  // data + prior + d(log q)/dw
        double s = sigmoid(vp.rho[k]);
        out[k] = dLdw + eps[k] / sig[k];                    // log q mu-partial cancels d(log q)/dw
        out[d + k] = dLdw * eps[k] * s + (eps[k] * eps[k] - 1.0) / sig[k] * s;
    }
    (void)scratch_net;
    return out;
}

// One DP-BBP step on (mu, rho). For each sample the hyperparameter gradient
// is averaged over n_mc fresh weight draws, then clipped as one concatenated
// vector, noised, and applied.
inline void step_dp_bbp(VariationalParams& vp, Network& work, const Batch& batch,
                        const DPConfig& cfg, LossKind loss, int n_mc,
                        Rng& eps_rng, Rng& noise_rng) {
    cfg.validate();
    if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
    std::size_t d = vp.mu.size();
    std::vector<Vector> per_sample(batch.size());
    Vector eps(d);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Vector avg(2 * d, 0.0);
        for (int j = 0; j < n_mc; ++j) {
            for (double& e : eps) e = eps_rng.normal();
            Vector g = bbp_sample_gradient(work, vp, eps, batch, i, loss, cfg.prior, work);
            axpy(1.0 / n_mc, g, avg);
        }
        per_sample[i] = std::move(avg);
    }
    Vector g_hat = detail::clipped_gradient_sum(per_sample, cfg.C, cfg.clip_mode);
    double inv_b = 1.0 / static_cast<double>(batch.size());
    for (double& v : g_hat) v *= inv_b;
    if (cfg.sigma > 0) {
        double noise_scale = cfg.sigma * cfg.C * inv_b;
        for (double& v : g_hat) v += noise_scale * noise_rng.normal();
    }
    for (std::size_t k = 0; k < d; ++k) {
        vp.mu[k] -= cfg.eta * g_hat[k];
        vp.rho[k] -= cfg.eta * g_hat[d + k];
    }
}

// Keep-indicators over the flat parameter vector induced by hidden-unit
// masks: a weight survives iff both its endpoints survive, a bias iff its
// unit survives.
inline std::vector<std::uint8_t> surviving_params(const Network& net, const HiddenMasks& masks) {
    std::vector<std::uint8_t> keep(net.param_count(), 1);
    std::size_t offset = 0;
    std::size_t n_layers = net.num_layers();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const Matrix& W = net.weight(l);
        for (std::size_t o = 0; o < W.rows(); ++o) {
            bool out_alive = (l + 1 == n_layers) || masks[l][o];
            for (std::size_t i = 0; i < W.cols(); ++i) {
                bool in_alive = (l == 0) || masks[l - 1][i];
                keep[offset + o * W.cols() + i] = (out_alive && in_alive) ? 1 : 0;
            }
        }
        offset += W.rows() * W.cols();
        for (std::size_t o = 0; o < net.bias(l).size(); ++o)
            keep[offset + o] = ((l + 1 == n_layers) || masks[l][o]) ? 1 : 0;
        offset += net.bias(l).size();
    }
    return keep;
}

inline HiddenMasks sample_hidden_masks(const Network& net, double drop_rate, Rng& mask_rng) {
    HiddenMasks masks;
    const auto& sizes = net.layer_sizes();
    for (std::size_t l = 1; l + 1 < sizes.size(); ++l) {
        std::vector<std::uint8_t> m(sizes[l]);
        for (auto& v : m) v = mask_rng.bernoulli(1.0 - drop_rate) ? 1 : 0;
        masks.push_back(std::move(m));
    }
    return masks;
}

// One DP-MC Dropout step: sample a mask once, run DP-SGD on the surviving
// subnetwork (clip, noise, regularize), leaving dropped weights untouched.
// With drop_rate = 0 this is exactly step_dp_sgd.
inline void step_dp_mc_dropout(Network& net, const Batch& batch, const DPConfig& cfg,
                               LossKind loss, double drop_rate,
                               Rng& mask_rng, Rng& noise_rng) {
    cfg.validate();
    if (drop_rate < 0.0 || drop_rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
    if (drop_rate == 0.0) {
        step_dp_sgd(net, batch, cfg, loss, noise_rng);
        return;
    }
    HiddenMasks masks = sample_hidden_masks(net, drop_rate, mask_rng);
    PerSampleGradients psg = per_sample_backward(net, batch, loss, &masks);
    Vector g_hat = detail::clipped_gradient_sum(psg.grads, cfg.C, cfg.clip_mode);
    double inv_b = 1.0 / static_cast<double>(batch.size());
    for (double& v : g_hat) v *= inv_b;
    if (cfg.sigma > 0) {
        double noise_scale = cfg.sigma * cfg.C * inv_b;
        for (double& v : g_hat) v += noise_scale * noise_rng.normal();
    }
    Vector reg = prior_grad(net.flat_params(), cfg.prior);
    axpy(1.0, reg, g_hat);
    std::vector<std::uint8_t> keep = surviving_params(net, masks);
    for (std::size_t k = 0; k < g_hat.size(); ++k)
        if (!keep[k]) g_hat[k] = 0.0;
    net.add_to_params(g_hat, -cfg.eta);
}

struct SgdEquivalent {
    double eta;
    double sigma;
    double C;
};

// Hyperparameter mapping, SGLD -> SGD direction. The noise multiplier is the one
// forced by matching the update-rule coefficients:
//   eta_SGD * sigma_SGD * C / |B| = sqrt(eta_SGLD)  with  eta_SGD = n * eta_SGLD.
inline SgdEquivalent map_sgld_to_sgd(double eta_sgld, double C, int n, int batch_size) {
    if (!(eta_sgld > 0) || !(C > 0) || n <= 0 || batch_size <= 0)
        throw std::domain_error("map_sgld_to_sgd requires positive inputs");
    double eta_sgd = static_cast<double>(n) * eta_sgld;
    double sigma = static_cast<double>(batch_size) /
                   (static_cast<double>(n) * C * std::sqrt(eta_sgld));
    return {eta_sgd, sigma, C};
}

struct SgldEquivalent {
    double eta;
    double C;
    bool feasible;
    double implied_C;  // the C value a feasible triple must carry
};

// Inverse direction: only DP-SGD instances with C = |B| / (sqrt(n*eta)*sigma)
// have an SGLD counterpart.
inline SgldEquivalent map_sgd_to_sgld(double eta_sgd, double sigma_sgd, double C,
                                      int n, int batch_size) {
    if (!(eta_sgd > 0) || !(sigma_sgd > 0) || !(C > 0) || n <= 0 || batch_size <= 0)
        throw std::domain_error("map_sgd_to_sgld requires positive inputs");
    double eta_sgld = eta_sgd / static_cast<double>(n);
    double implied_C = static_cast<double>(batch_size) /
                       (std::sqrt(static_cast<double>(n) * eta_sgd) * sigma_sgd);
    bool feasible = std::abs(C - implied_C) <= 1e-9 * std::max(std::abs(C), std::abs(implied_C));
    return {eta_sgld, C, feasible, implied_C};
}

}  // namespace dpbnn
