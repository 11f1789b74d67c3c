#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dpbnn/matrix.hpp"

namespace dpbnn {

struct CalibrationBin {
    double lo = 0.0, hi = 0.0;  // confidence range
    std::size_t count = 0;
    double accuracy = 0.0;
    double confidence = 0.0;
};

struct CalibrationReport {
    std::vector<CalibrationBin> bins;
    double ece = 0.0;
    double mce = 0.0;
    std::size_t n = 0;
};

struct ConfidencePrediction {
    double confidence;
    int prediction;
};

// conf = max_k pi_k, pred = argmax (ties to the lowest class index).
inline ConfidencePrediction confidence_and_prediction(const Vector& probs) {
    if (probs.empty()) throw std::invalid_argument("empty probability vector");
    double sum = 0.0;
    for (double p : probs) sum += p;
    if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("probability vector not normalized");
    double best = probs[0];
    int arg = 0;
    for (std::size_t k = 1; k < probs.size(); ++k) {
        if (probs[k] > best) {
            best = probs[k];
            arg = static_cast<int>(k);
        }
    }
    return {best, arg};
}

// Bin index over M equally spaced bins on [0,1]; a value exactly on an edge
// goes to the upper bin, 1.0 to the top bin.
inline std::size_t confidence_bin(double conf, std::size_t M) {
    if (conf >= 1.0) return M - 1;
    auto idx = static_cast<std::size_t>(conf * static_cast<double>(M));
    return idx >= M ? M - 1 : idx;
}

// ECE/MCE report over M equally spaced confidence bins. Empty bins contribute
// zero to ECE and are excluded from the MCE max.
inline CalibrationReport calibration_report(const Matrix& probs, const std::vector<int>& labels,
                                            std::size_t M) {
    if (M < 1) throw std::invalid_argument("need at least one bin");
    if (probs.rows() == 0) throw std::invalid_argument("no samples");
    if (labels.size() != probs.rows()) throw std::invalid_argument("labels/probs size mismatch");

    CalibrationReport rep;
    rep.n = probs.rows();
    rep.bins.resize(M);
    std::vector<double> conf_sum(M, 0.0), acc_sum(M, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
        rep.bins[m].lo = static_cast<double>(m) / static_cast<double>(M);
        rep.bins[m].hi = static_cast<double>(m + 1) / static_cast<double>(M);
    }

    for (std::size_t i = 0; i < probs.rows(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols())
            throw std::invalid_argument("label out of range");
        ConfidencePrediction cp = confidence_and_prediction(probs.row(i));
        std::size_t m = confidence_bin(cp.confidence, M);
        rep.bins[m].count += 1;
        conf_sum[m] += cp.confidence;
        acc_sum[m] += (cp.prediction == labels[i]) ? 1.0 : 0.0;
    }

    for (std::size_t m = 0; m < M; ++m) {
        auto& b = rep.bins[m];
        if (b.count == 0) continue;
        b.accuracy = acc_sum[m] / static_cast<double>(b.count);
        b.confidence = conf_sum[m] / static_cast<double>(b.count);
        double gap = std::abs(b.accuracy - b.confidence);
        rep.ece += (static_cast<double>(b.count) / static_cast<double>(rep.n)) * gap;
        if (gap > rep.mce) rep.mce = gap;
    }
    return rep;
}

}  // namespace dpbnn
