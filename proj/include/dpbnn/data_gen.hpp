#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpbnn/matrix.hpp"
#include "dpbnn/rng.hpp"

namespace dpbnn {

struct RegressionDataset {
    Vector x;
    Vector y;
    std::vector<int> train_idx;
    std::vector<int> test_idx;
};

struct ClassificationDataset {
    Matrix inputs;            // n x Q
    std::vector<int> labels;  // in [0, K)
    int num_classes = 0;
};

// RBF kernel with unit variance; the lengthscale is configurable (default 1).
inline double rbf_kernel(double x, double y, double lengthscale = 1.0) {
    double d = (x - y) / lengthscale;
    return std::exp(-0.5 * d * d);
}

namespace detail {

// Lower-triangular Cholesky; returns false on a non-PD pivot.
inline bool cholesky(Matrix& a) {
    std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double sum = a(j, j);
        for (std::size_t k = 0; k < j; ++k) sum -= a(j, k) * a(j, k);
        if (sum <= 0.0) return false;
        a(j, j) = std::sqrt(sum);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / a(j, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
    return true;
}

}  // namespace detail

// Heteroscedastic GP draw: x ~ U(-3,3) iid, y ~ N(0, K_rbf + diag((0.3x+0.6)^2)).
// Split is 250/150 at n=400, proportional otherwise.
inline RegressionDataset generate_heteroscedastic(int n, std::uint64_t seed,
                                                  double lengthscale = 1.0) {
    if (n < 2) throw std::invalid_argument("need n >= 2");
    Rng rng(derive_stream_seed(seed, "hetero"));
    RegressionDataset ds;
    ds.x.resize(n);
    for (double& v : ds.x) v = rng.uniform(-3.0, 3.0);

    auto sn = static_cast<std::size_t>(n);
    Matrix cov(sn, sn);
    for (std::size_t i = 0; i < sn; ++i) {
        for (std::size_t j = 0; j < sn; ++j) cov(i, j) = rbf_kernel(ds.x[i], ds.x[j], lengthscale);
        double s = 0.3 * ds.x[i] + 0.6;
        cov(i, i) += s * s;
    }

    Matrix chol = cov;
    if (!detail::cholesky(chol)) {
        chol = cov;
        for (std::size_t i = 0; i < sn; ++i) chol(i, i) += 1e-8;
        if (!detail::cholesky(chol))
            throw std::runtime_error("covariance factorization failed even with jitter");
    }

    Vector z(sn);
    for (double& v : z) v = rng.normal();
    ds.y.assign(sn, 0.0);
    for (std::size_t i = 0; i < sn; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j <= i; ++j) s += chol(i, j) * z[j];
        ds.y[i] = s;
    }

    int n_train = (n == 400) ? 250 : static_cast<int>(std::lround(n * 250.0 / 400.0));
    for (int i = 0; i < n; ++i)
        (i < n_train ? ds.train_idx : ds.test_idx).push_back(i);
    return ds;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated at byte offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace detail

// IDX loader: big-endian magic 2051 (images) / 2049 (labels); pixels are
// scaled to [0,1] by /255.
inline ClassificationDataset load_mnist_idx(const std::string& images_path,
                                            const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open " + images_path);
    std::uint32_t magic = detail::read_be32(img, images_path, 0);
    if (magic != 2051)
        throw std::runtime_error(images_path + ": bad magic " + std::to_string(magic) +
                                 " at byte offset 0 (expected 2051)");
    std::uint32_t count = detail::read_be32(img, images_path, 4);
    std::uint32_t rows = detail::read_be32(img, images_path, 8);
    std::uint32_t cols = detail::read_be32(img, images_path, 12);

    ClassificationDataset ds;
    ds.inputs = Matrix(count, std::size_t(rows) * cols);
    std::vector<unsigned char> buf(std::size_t(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw std::runtime_error(images_path + ": truncated at byte offset " +
                                     std::to_string(16 + std::size_t(i) * buf.size()));
        for (std::size_t j = 0; j < buf.size(); ++j)
            ds.inputs(i, j) = static_cast<double>(buf[j]) / 255.0;
    }

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open " + labels_path);
    std::uint32_t lmagic = detail::read_be32(lab, labels_path, 0);
    if (lmagic != 2049)
        throw std::runtime_error(labels_path + ": bad magic " + std::to_string(lmagic) +
                                 " at byte offset 0 (expected 2049)");
    std::uint32_t lcount = detail::read_be32(lab, labels_path, 4);
    if (lcount != count)
        throw std::runtime_error(labels_path + ": label count " + std::to_string(lcount) +
                                 " does not match image count " + std::to_string(count));
    ds.labels.resize(lcount);
    for (std::uint32_t i = 0; i < lcount; ++i) {
        char c;
        if (!lab.get(c))
            throw std::runtime_error(labels_path + ": truncated at byte offset " +
                                     std::to_string(8 + i));
        ds.labels[i] = static_cast<unsigned char>(c);
    }
    ds.num_classes = 10;
    return ds;
}

// IDX writer, bit-exact inverse of the loader for byte-valued pixels.
inline void write_mnist_idx(const std::string& images_path, const std::string& labels_path,
                            const std::vector<std::vector<unsigned char>>& images,
                            const std::vector<unsigned char>& labels,
                            std::uint32_t rows, std::uint32_t cols) {
    std::ofstream img(images_path, std::ios::binary);
    detail::write_be32(img, 2051);
    detail::write_be32(img, static_cast<std::uint32_t>(images.size()));
    detail::write_be32(img, rows);
    detail::write_be32(img, cols);
    for (const auto& im : images)
        img.write(reinterpret_cast<const char*>(im.data()), static_cast<std::streamsize>(im.size()));

    std::ofstream lab(labels_path, std::ios::binary);
    detail::write_be32(lab, 2049);
    detail::write_be32(lab, static_cast<std::uint32_t>(labels.size()));
    lab.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

// Gaussian blobs: K unit-variance clusters whose means sit `separation`
// apart along the axes, labels round-robin. Separation 5 makes the classes
// Bayes-separable well above 0.95.
inline ClassificationDataset generate_blobs(int n, int K, int Q, std::uint64_t seed,
                                            double separation = 5.0) {
    if (n < K || K < 1 || Q < 1) throw std::invalid_argument("need n >= K >= 1 and Q >= 1");
    Rng rng(derive_stream_seed(seed, "blobs"));
    Matrix means(K, Q);
    for (int k = 0; k < K; ++k)
        means(k, k % Q) = separation * (1.0 + static_cast<double>(k / Q));
    ClassificationDataset ds;
    ds.inputs = Matrix(n, Q);
    ds.labels.resize(n);
    ds.num_classes = K;
    for (int i = 0; i < n; ++i) {
        int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
        ds.labels[i] = k;
        for (int q = 0; q < Q; ++q) ds.inputs(i, q) = means(k, q) + rng.normal();
    }
    return ds;
}

// batch_size distinct indices, uniform over subsets, returned in increasing
// order so downstream reductions are deterministic.
inline std::vector<int> sample_batch(int n, int batch_size, Rng& rng) {
    if (batch_size > n) throw std::invalid_argument("batch_size exceeds dataset size");
    // Partial Fisher-Yates over an index pool.
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < batch_size; ++i) {
        auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(batch_size);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace dpbnn
