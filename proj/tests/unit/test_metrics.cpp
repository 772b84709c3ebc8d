#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gridfuse/error.hpp"
#include "gridfuse/metrics.hpp"

using namespace gridfuse;
using namespace gridfuse::metrics;

namespace {

// Reference implementations written directly from the definitions, with plain
// double loops.
double naive_nrmse(const std::vector<std::vector<double>>& est, const std::vector<double>& truth) {
    double sq = 0.0, total = 0.0;
    std::size_t count = 0;
    for (const auto& row : est)
        for (std::size_t c = 0; c < truth.size(); ++c) {
            sq += (row[c] - truth[c]) * (row[c] - truth[c]);
            total += row[c];
            ++count;
        }
    return std::sqrt(sq / count) / (total / count);
}

double naive_variance_avg(const std::vector<std::vector<double>>& est) {
    const std::size_t n_c = est[0].size();
    double acc = 0.0;
    for (std::size_t c = 0; c < n_c; ++c) {
        double mean = 0.0;
        for (const auto& row : est) mean += row[c];
        mean /= est.size();
        double var = 0.0;
        for (const auto& row : est) var += (row[c] - mean) * (row[c] - mean);
        acc += var / est.size();
    }
    return acc / n_c;
}

std::vector<double> flatten(const std::vector<std::vector<double>>& m) {
    std::vector<double> out;
    for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
    return out;
}

}  // namespace

TEST_CASE("estimation and absolute error") {
    CHECK(estimation_error(1.0, 1.0) == 0.0);
    CHECK(estimation_error(1.1, 1.0) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(estimation_error(0.9, 1.0) == doctest::Approx(-10.0).epsilon(1e-12));
    CHECK(absolute_error(1.0, 1.0) == 0.0);
    CHECK(absolute_error(1.1, 1.0) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(absolute_error(0.9, 1.0) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(estimation_error(1.0, 0.0), "undefined relative error", DataError);
}

TEST_CASE("nrmse worked example and degenerate cases") {
    const std::vector<double> est{1.1, 0.9};
    const std::vector<double> truth{1.0};
    CHECK(nrmse(est, 2, truth) == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(variance_avg(est, 2, 1) == doctest::Approx(0.01).epsilon(1e-14));

    const std::vector<double> exact{1.0, 2.0, 1.0, 2.0};
    CHECK(nrmse(exact, 2, std::vector<double>{1.0, 2.0}) == 0.0);
    CHECK(variance_avg(exact, 2, 2) == 0.0);

    CHECK_THROWS_AS(nrmse(std::vector<double>{1.0, -1.0}, 2, truth), DataError);
    CHECK_THROWS_AS(nrmse(est, 3, truth), DataError);
}

TEST_CASE("metrics match brute-force references on random tensors") {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n_s = 1 + gen() % 40, n_c = 1 + gen() % 13;
        std::vector<std::vector<double>> est(n_s, std::vector<double>(n_c));
        std::vector<double> truth(n_c);
        for (auto& t : truth) t = u(gen);
        for (auto& row : est)
            for (auto& e : row) e = u(gen);
        const auto flat = flatten(est);
        CHECK(std::abs(nrmse(flat, n_s, truth) - naive_nrmse(est, truth)) < 1e-12);
        CHECK(std::abs(variance_avg(flat, n_s, n_c) - naive_variance_avg(est)) < 1e-12);
    }
}

TEST_CASE("metric invariances") {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> noise(0.0, 0.05);
    const std::size_t n_s = 20, n_c = 6;
    std::vector<double> truth(n_c), est(n_s * n_c);
    for (std::size_t c = 0; c < n_c; ++c) truth[c] = 1.0 + 0.1 * static_cast<double>(c);
    for (std::size_t n = 0; n < n_s; ++n)
        for (std::size_t c = 0; c < n_c; ++c) est[n * n_c + c] = truth[c] + noise(gen);

    SUBCASE("homogeneity of nrmse") {
        std::vector<double> est2 = est, truth2 = truth;
        for (auto& e : est2) e *= 3.7;
        for (auto& t : truth2) t *= 3.7;
        CHECK(nrmse(est2, n_s, truth2) == doctest::Approx(nrmse(est, n_s, truth)).epsilon(1e-12));
    }
    SUBCASE("translation invariance of variance") {
        std::vector<double> est2 = est;
        for (auto& e : est2) e += 0.25;
        CHECK(variance_avg(est2, n_s, n_c) == doctest::Approx(variance_avg(est, n_s, n_c)).epsilon(1e-9));
    }
    SUBCASE("adding an exact instance never raises nrmse") {
        const double before = nrmse(est, n_s, truth);
        std::vector<double> more = est;
        more.insert(more.end(), truth.begin(), truth.end());
        CHECK(nrmse(more, n_s + 1, truth) <= before);
    }
}

TEST_CASE("quantiles and summaries") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({1.0, 2.0, 3.0, 4.0}) == 2.5);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == 2.0);
    const auto s = summarize({-2.0, 1.0, 4.0});
    CHECK(s.count == 3);
    CHECK(s.mean == 1.0);
    CHECK(s.median == 1.0);
    CHECK(s.max_abs == 4.0);
    CHECK(s.iqr() == doctest::Approx(3.0));
    CHECK(summarize({}).count == 0);
    CHECK_THROWS_AS(quantile({}, 0.5), DataError);
}
