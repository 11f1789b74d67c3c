#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpbnn/dpbnn.hpp"

using namespace dpbnn;
using Catch::Approx;

namespace {

Matrix rows_to_matrix(const std::vector<Vector>& rows) {
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), m.row_ptr(i));
    return m;
}

// Straight-line reimplementation used as a brute-force oracle.
std::pair<double, double> brute_force_ece_mce(const Matrix& probs, const std::vector<int>& labels,
                                              std::size_t M) {
    std::vector<double> conf(probs.rows());
    std::vector<int> pred(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto cp = confidence_and_prediction(probs.row(i));
        conf[i] = cp.confidence;
        pred[i] = cp.prediction;
    }
    double ece = 0.0, mce = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        double lo = double(m) / M, hi = double(m + 1) / M;
        double csum = 0, asum = 0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            bool in = (m + 1 == M) ? (conf[i] >= lo) : (conf[i] >= lo && conf[i] < hi);
            if (!in) continue;
            ++cnt;
            csum += conf[i];
            asum += (pred[i] == labels[i]) ? 1.0 : 0.0;
        }
        if (cnt == 0) continue;
        double gap = std::abs(asum / cnt - csum / cnt);
        ece += double(cnt) / probs.rows() * gap;
        mce = std::max(mce, gap);
    }
    return {ece, mce};
}

}  // namespace

TEST_CASE("confidence and prediction") {
    auto cp = confidence_and_prediction({0.1, 0.7, 0.2});
    CHECK(cp.confidence == Approx(0.7).epsilon(1e-15));
    CHECK(cp.prediction == 1);
    // Uniform ten-way: confidence 0.1, ties resolve to the lowest index.
    auto u = confidence_and_prediction(Vector(10, 0.1));
    CHECK(u.confidence == Approx(0.1).epsilon(1e-12));
    CHECK(u.prediction == 0);
    auto one_hot = confidence_and_prediction({0.0, 0.0, 1.0});
    CHECK(one_hot.confidence == 1.0);
    CHECK(one_hot.prediction == 2);
    CHECK_THROWS_AS(confidence_and_prediction({0.5, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(confidence_and_prediction({}), std::invalid_argument);
}

TEST_CASE("bin assignment sends edges upward") {
    CHECK(confidence_bin(0.0, 10) == 0);
    CHECK(confidence_bin(0.05, 10) == 0);
    CHECK(confidence_bin(0.1, 10) == 1);   // exact edge goes to the upper bin
    CHECK(confidence_bin(0.999, 10) == 9);
    CHECK(confidence_bin(1.0, 10) == 9);   // except 1.0, which stays in range
    CHECK(confidence_bin(0.5, 2) == 1);
}

TEST_CASE("perfectly calibrated predictions have zero ECE") {
    // Confidence 0.75 with exactly 3 of 4 correct inside that bin.
    Matrix probs = rows_to_matrix({{0.75, 0.25}, {0.75, 0.25}, {0.75, 0.25}, {0.75, 0.25}});
    std::vector<int> labels{0, 0, 0, 1};
    auto rep = calibration_report(probs, labels, 10);
    CHECK(rep.ece == Approx(0.0).margin(1e-15));
    CHECK(rep.mce == Approx(0.0).margin(1e-15));
    CHECK(rep.n == 4);
}

TEST_CASE("single confident wrong prediction") {
    Matrix probs = rows_to_matrix({{0.8, 0.2}});
    std::vector<int> labels{1};
    auto rep = calibration_report(probs, labels, 10);
    CHECK(rep.ece == Approx(0.8).epsilon(1e-14));
    CHECK(rep.mce == Approx(0.8).epsilon(1e-14));
}

TEST_CASE("empty bins are ignored") {
    Matrix probs = rows_to_matrix({{0.95, 0.05}, {0.55, 0.45}});
    std::vector<int> labels{0, 1};
    auto rep = calibration_report(probs, labels, 10);
    std::size_t populated = 0;
    for (const auto& b : rep.bins) populated += (b.count > 0);
    CHECK(populated == 2);
    // Gaps: |1 - 0.95| = 0.05 and |0 - 0.55| = 0.55, each holding half the mass.
    CHECK(rep.ece == Approx(0.5 * 0.05 + 0.5 * 0.55).epsilon(1e-13));
    CHECK(rep.mce == Approx(0.55).epsilon(1e-13));
}

TEST_CASE("report matches the brute-force oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t n = 1 + rng.below(20);
        std::size_t K = 2 + rng.below(3);
        std::size_t M = 1 + rng.below(5);
        std::vector<Vector> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) {
            Vector p(K);
            double s = 0;
            for (double& v : p) s += (v = -std::log(rng.uniform()));
            for (double& v : p) v /= s;
            rows.push_back(p);
            labels.push_back(static_cast<int>(rng.below(K)));
        }
        Matrix probs = rows_to_matrix(rows);
        auto rep = calibration_report(probs, labels, M);
        auto [ece, mce] = brute_force_ece_mce(probs, labels, M);
        REQUIRE(rep.ece == Approx(ece).margin(1e-12));
        REQUIRE(rep.mce == Approx(mce).margin(1e-12));
        REQUIRE(rep.mce >= rep.ece - 1e-12);

        // Permutation invariance.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::reverse(perm.begin(), perm.end());
        std::vector<Vector> prows;
        std::vector<int> plabels;
        for (auto i : perm) {
            prows.push_back(rows[i]);
            plabels.push_back(labels[i]);
        }
        auto prep = calibration_report(rows_to_matrix(prows), plabels, M);
        REQUIRE(prep.ece == Approx(rep.ece).margin(1e-12));
        REQUIRE(prep.mce == Approx(rep.mce).margin(1e-12));
        // Bin counts account for every sample.
        std::size_t total = 0;
        for (const auto& b : rep.bins) total += b.count;
        REQUIRE(total == n);
    }
}

TEST_CASE("single bin reduces to the overall accuracy gap") {
    Matrix probs = rows_to_matrix({{0.9, 0.1}, {0.6, 0.4}, {0.7, 0.3}});
    std::vector<int> labels{0, 1, 0};
    auto rep = calibration_report(probs, labels, 1);
    double conf = (0.9 + 0.6 + 0.7) / 3.0;
    double acc = 2.0 / 3.0;
    CHECK(rep.ece == Approx(std::abs(acc - conf)).epsilon(1e-13));
    CHECK(rep.mce == Approx(rep.ece).epsilon(1e-13));
}

TEST_CASE("report input validation") {
    Matrix probs = rows_to_matrix({{0.5, 0.5}});
    CHECK_THROWS_AS(calibration_report(probs, {0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(calibration_report(probs, {0, 1}, 10), std::invalid_argument);
    CHECK_THROWS_AS(calibration_report(probs, {7}, 10), std::invalid_argument);
    CHECK_THROWS_AS(calibration_report(Matrix(), {}, 10), std::invalid_argument);
}
