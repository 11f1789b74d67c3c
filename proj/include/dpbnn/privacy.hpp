#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dpbnn {

struct PrivacyBudget {
    double mu = 0.0;
    double eps = 0.0;
    double delta = 0.0;
};

// Standard normal CDF via erfc: Phi(x) = erfc(-x/sqrt(2))/2. |error| <= 1e-15
// in double precision since std::erfc is correctly rounded to a few ulp.
inline double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// GDP budget of a generic DP optimizer (DP-SGD, DP-BBP, DP-MC Dropout):
// mu = sqrt(T*(e^{1/sigma^2}-1)) * |B|/n. sigma = 0 yields +infinity.
inline double gdp_mu_generic(long T, double sigma, int batch_size, int n) {
    if (T < 0) throw std::invalid_argument("T must be >= 0");
    if (sigma < 0) throw std::invalid_argument("sigma must be >= 0");
    if (batch_size < 1 || batch_size > n) throw std::invalid_argument("need 1 <= |B| <= n");
    if (T == 0) return 0.0;
    if (sigma == 0.0) return std::numeric_limits<double>::infinity();
    double ratio = static_cast<double>(batch_size) / static_cast<double>(n);
    return std::sqrt(static_cast<double>(T) * std::expm1(1.0 / (sigma * sigma))) * ratio;
}

// GDP budget of DP-SGLD: mu = sqrt(T*(e^{n^2 eta C^2/|B|^2}-1)) * |B|/n.
inline double gdp_mu_sgld(long T, double eta, double C, int batch_size, int n) {
    if (T < 0) throw std::invalid_argument("T must be >= 0");
    if (!(eta >= 0) || !(C > 0)) throw std::invalid_argument("eta >= 0 and C > 0 required");
    if (batch_size < 1 || batch_size > n) throw std::invalid_argument("need 1 <= |B| <= n");
    if (T == 0 || eta == 0.0) return 0.0;
    double ratio = static_cast<double>(batch_size) / static_cast<double>(n);
    double exponent = eta * C * C / (ratio * ratio);
    return std::sqrt(static_cast<double>(T) * std::expm1(exponent)) * ratio;
}

// delta(eps; mu) = Phi(-eps/mu + mu/2) - e^eps * Phi(-eps/mu - mu/2).
inline double delta_from_mu_eps(double eps, double mu) {
    if (mu < 0 || eps < 0) throw std::invalid_argument("mu and eps must be >= 0");
    if (mu == 0.0) return 0.0;
    if (std::isinf(mu)) return 1.0;
    // e^eps * Phi(...) evaluated in log space to dodge overflow at large eps.
    double a = std_normal_cdf(-eps / mu + mu / 2.0);
    double phi2 = std_normal_cdf(-eps / mu - mu / 2.0);
    double b = phi2 > 0 ? std::exp(eps + std::log(phi2)) : 0.0;
    double d = a - b;
    return d < 0 ? 0.0 : d;
}

// Numerical inverse of delta_from_mu_eps in eps, by bisection on [0, 200].
inline double eps_from_mu_delta(double mu, double delta) {
    if (!(mu > 0)) throw std::invalid_argument("mu must be positive");
    if (!(delta > 0) || !(delta < 1)) throw std::invalid_argument("delta must be in (0,1)");
    if (delta >= delta_from_mu_eps(0.0, mu)) return 0.0;
    double lo = 0.0, hi = 200.0;
    if (delta_from_mu_eps(hi, mu) > delta)
        throw std::range_error("requested delta unreachable for eps <= 200");
    while (hi - lo > 1e-10) {
        double mid = 0.5 * (lo + hi);
        if (delta_from_mu_eps(mid, mu) > delta)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

struct BatchMonotonicity {
    bool nonincreasing = true;
    std::vector<double> mus;
};

// The SGLD budget evaluated over an increasing batch-size grid; larger batches
// are more private, so the sequence must be nonincreasing.
inline BatchMonotonicity mu_monotone_in_batch(long T, double eta, double C, int n,
                                              const std::vector<int>& batch_sizes) {
    BatchMonotonicity out;
    for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
        if (i > 0 && batch_sizes[i] < batch_sizes[i - 1])
            throw std::invalid_argument("batch sizes must be nondecreasing");
        out.mus.push_back(gdp_mu_sgld(T, eta, C, batch_sizes[i], n));
        if (i > 0 && out.mus[i] > out.mus[i - 1] * (1.0 + 1e-12)) out.nonincreasing = false;
    }
    return out;
}

}  // namespace dpbnn
