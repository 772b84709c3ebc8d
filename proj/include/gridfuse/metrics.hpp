#pragma once

// Accuracy statistics over Monte-Carlo ensembles. Estimate tensors are stored
// row-major with one row per instance and one column per component.

#include <cstddef>
#include <span>
#include <vector>

namespace gridfuse::metrics {

/// Signed relative error in percent. Throws DataError("undefined relative error") for zero truth.
double estimation_error(double est, double truth);
double absolute_error(double est, double truth);

/// RMSE over all entries divided by the grand mean of the estimates.
/// Throws DataError when the mean estimate is zero or the shapes disagree.
double nrmse(std::span<const double> est, std::size_t n_samples, std::span<const double> truth);

/// Population variance of each component across instances, averaged over components.
double variance_avg(std::span<const double> est, std::size_t n_samples, std::size_t n_components);

/// Quantile with linear interpolation between order statistics (q in [0, 1]).
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

struct ErrorSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double mean_abs = 0.0;
    double max_abs = 0.0;

    double iqr() const { return q3 - q1; }
};

/// Summary of a series of signed percentage errors. Empty input gives count 0.
ErrorSummary summarize(const std::vector<double>& errors);

}  // namespace gridfuse::metrics
