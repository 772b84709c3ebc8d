#include "gridfuse/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "gridfuse/error.hpp"
#include "gridfuse/kernels.hpp"

namespace gridfuse::metrics {

double estimation_error(double est, double truth) {
    if (truth == 0.0) throw DataError("undefined relative error");
    return (est - truth) / truth * 100.0;
}

double absolute_error(double est, double truth) { return std::abs(estimation_error(est, truth)); }

double nrmse(std::span<const double> est, std::size_t n_samples, std::span<const double> truth) {
    const std::size_t n_c = truth.size();
    if (n_samples == 0 || n_c == 0) throw DataError("nrmse needs at least one sample and one component");
    if (est.size() != n_samples * n_c) throw DataError("estimate tensor does not match sample and component counts");
    double sq = 0.0;
    for (std::size_t n = 0; n < n_samples; ++n) sq += kernels::sum_sq_diff(est.subspan(n * n_c, n_c), truth);
    const double count = static_cast<double>(n_samples * n_c);
    const double mean = kernels::sum(est) / count;
    if (mean == 0.0) throw DataError("nrmse undefined for zero mean estimate");
    return std::sqrt(sq / count) / mean;
}

double variance_avg(std::span<const double> est, std::size_t n_samples, std::size_t n_components) {
    if (n_samples == 0 || n_components == 0) throw DataError("variance needs at least one sample and one component");
    if (est.size() != n_samples * n_components)
        throw DataError("estimate tensor does not match sample and component counts");
    std::vector<double> column(n_samples);
    double total = 0.0;
    for (std::size_t c = 0; c < n_components; ++c) {
        for (std::size_t n = 0; n < n_samples; ++n) column[n] = est[n * n_components + c];
        const double mean = kernels::sum(column) / static_cast<double>(n_samples);
        total += kernels::sum_sq_dev(column, mean) / static_cast<double>(n_samples);
    }
    return total / static_cast<double>(n_components);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("quantile of an empty series");
    if (!(q >= 0.0 && q <= 1.0)) throw DataError("quantile level outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

ErrorSummary summarize(const std::vector<double>& errors) {
    ErrorSummary s;
    s.count = errors.size();
    if (errors.empty()) return s;
    std::vector<double> abs_errors(errors.size());
    std::transform(errors.begin(), errors.end(), abs_errors.begin(), [](double e) { return std::abs(e); });
    const double n = static_cast<double>(errors.size());
    s.mean = kernels::sum(errors) / n;
    s.mean_abs = kernels::sum(abs_errors) / n;
    s.max_abs = *std::max_element(abs_errors.begin(), abs_errors.end());
    s.median = quantile(errors, 0.5);
    s.q1 = quantile(errors, 0.25);
    s.q3 = quantile(errors, 0.75);
    return s;
}

}  // namespace gridfuse::metrics
