#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <stdexcept>
#include <vector>

#include "dpbnn/dp_optim.hpp"
#include "dpbnn/network.hpp"

namespace dpbnn {

enum class EnsembleKind { SgldSnapshots, BbpVariational, McDropout };

// Ring buffer of the most recent parameter snapshots from an SGLD chain.
class SnapshotTrail {
public:
    explicit SnapshotTrail(std::size_t capacity) : capacity_(capacity) {}

    void push(const Vector& params) {
        if (buf_.size() == capacity_) buf_.pop_front();
        buf_.push_back(params);
    }

    std::size_t size() const { return buf_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Vector& at(std::size_t i) const { return buf_[i]; }

    std::vector<Vector> snapshots() const { return {buf_.begin(), buf_.end()}; }

private:
    std::size_t capacity_;
    std::deque<Vector> buf_;
};

struct PosteriorEnsemble {
    EnsembleKind kind;
    std::vector<std::size_t> layer_sizes;
    Head head;
    std::vector<Vector> snapshots;  // sgld-snapshots
    VariationalParams vp;           // bbp-variational
    Vector base_params;             // mc-dropout
    double drop_rate = 0.0;         // mc-dropout
};

struct PredictiveSample {
    Vector probs;          // classification: per-class probabilities
    double y_hat = 0.0;    // regression
    double var_hat = 0.0;  // regression, exp(log sigma^2) clamped to [1e-12, 1e12]
};

namespace detail {

inline PredictiveSample predict_with_net(const Network& net, const Vector& input,
                                         const HiddenMasks* masks = nullptr) {
    PredictiveSample s;
    Vector out = net.forward_one(input.data(), masks);
    if (net.head() == Head::Classification) {
        softmax_inplace(out);
        s.probs = std::move(out);
    } else {
        s.y_hat = out[0];
        s.var_hat = std::clamp(std::exp(out[1]), 1e-12, 1e12);
    }
    return s;
}

}  // namespace detail

// K predictive draws for one input. SGLD iterates stored snapshots in order;
// BBP resamples weights per draw; MC Dropout resamples masks per draw.
inline std::vector<PredictiveSample> sample_predictions(const PosteriorEnsemble& ens,
                                                        const Vector& input, std::size_t K,
                                                        Rng& rng) {
    if (K < 1) throw std::invalid_argument("need K >= 1 draws");
    std::vector<PredictiveSample> out;
    out.reserve(K);
    Network net(ens.layer_sizes, ens.head);
    switch (ens.kind) {
        case EnsembleKind::SgldSnapshots: {
            if (ens.snapshots.empty()) throw std::logic_error("empty snapshot ensemble");
            if (K > ens.snapshots.size())
                throw std::invalid_argument("K exceeds stored snapshot count");
            for (std::size_t k = 0; k < K; ++k) {
                net.set_flat_params(ens.snapshots[k]);
                out.push_back(detail::predict_with_net(net, input));
            }
            break;
        }
        case EnsembleKind::BbpVariational: {
            std::size_t d = ens.vp.mu.size();
            if (d == 0) throw std::logic_error("empty variational ensemble");
            Vector w(d);
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t j = 0; j < d; ++j)
                    w[j] = ens.vp.mu[j] + softplus(ens.vp.rho[j]) * rng.normal();
                net.set_flat_params(w);
                out.push_back(detail::predict_with_net(net, input));
            }
            break;
        }
        case EnsembleKind::McDropout: {
            if (ens.base_params.empty()) throw std::logic_error("empty dropout ensemble");
            net.set_flat_params(ens.base_params);
            for (std::size_t k = 0; k < K; ++k) {
                HiddenMasks masks = sample_hidden_masks(net, ens.drop_rate, rng);
                out.push_back(detail::predict_with_net(net, input, &masks));
            }
            break;
        }
    }
    return out;
}

struct UncertaintyDecomposition {
    double data_unc;       // mean predicted sigma^2 (aleatoric)
    double posterior_unc;  // unbiased variance of y_hat (epistemic)
    double mean_pred;
};

inline UncertaintyDecomposition decompose_uncertainty(const std::vector<PredictiveSample>& samples) {
    if (samples.size() < 2)
        throw std::invalid_argument("posterior uncertainty needs at least 2 samples");
    double n = static_cast<double>(samples.size());
    double mean = 0.0, data = 0.0;
    for (const auto& s : samples) {
        mean += s.y_hat;
        data += s.var_hat;
    }
    mean /= n;
    data /= n;
    double var = 0.0;
    for (const auto& s : samples) var += (s.y_hat - mean) * (s.y_hat - mean);
    var /= (n - 1.0);
    return {data, var, mean};
}

// Per-class histogram of predicted probabilities over [0,1]. Right-closed
// bins: probability exactly 1.0 lands in the top bin. Row sums equal the
// number of draws for every class.
inline std::vector<std::vector<std::size_t>> prediction_histogram(
    const std::vector<PredictiveSample>& samples, std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("need at least 2 bins");
    if (samples.empty() || samples.front().probs.empty())
        throw std::invalid_argument("classification samples required");
    std::size_t K = samples.front().probs.size();
    std::vector<std::vector<std::size_t>> hist(K, std::vector<std::size_t>(bins, 0));
    for (const auto& s : samples) {
        for (std::size_t k = 0; k < K; ++k) {
            double p = s.probs[k];
            std::size_t b = p >= 1.0 ? bins - 1
                                     : static_cast<std::size_t>(p * static_cast<double>(bins));
            if (b >= bins) b = bins - 1;
            hist[k][b] += 1;
        }
    }
    return hist;
}

}  // namespace dpbnn
