#pragma once

// Batch numeric kernels with a scalar reference and an AVX2 variant chosen at
// runtime. Reductions use a fixed four-lane order (lane j accumulates elements
// j, j+4, ...; lanes combine as (l0 + l1) + (l2 + l3); the tail is added last)
// in both variants, so results are bit-identical whichever variant runs.

#include <cstddef>
#include <span>

namespace gridfuse::kernels {

enum class Variant { scalar, avx2 };

/// Variant used by the dispatching entry points: AVX2 when the CPU supports it,
/// unless GRIDFUSE_SIMD=scalar is set in the environment.
Variant active_variant();
bool avx2_available();

double sum(std::span<const double> x);
/// sum of (x_i - c)^2
double sum_sq_dev(std::span<const double> x, double c);
/// sum of (x_i - y_i)^2
double sum_sq_diff(std::span<const double> x, std::span<const double> y);
/// g_i = p_i / v_i^2, b_i = q_i / v_i^2. Throws DataError for v_i <= 0.
void feature_transform_batch(std::span<const double> p, std::span<const double> q, std::span<const double> v,
                             std::span<double> g, std::span<double> b);

namespace scalar {
double sum(std::span<const double> x);
double sum_sq_dev(std::span<const double> x, double c);
double sum_sq_diff(std::span<const double> x, std::span<const double> y);
void feature_transform_batch(std::span<const double> p, std::span<const double> q, std::span<const double> v,
                             std::span<double> g, std::span<double> b);
}  // namespace scalar

namespace avx2 {
double sum(std::span<const double> x);
double sum_sq_dev(std::span<const double> x, double c);
double sum_sq_diff(std::span<const double> x, std::span<const double> y);
void feature_transform_batch(std::span<const double> p, std::span<const double> q, std::span<const double> v,
                             std::span<double> g, std::span<double> b);
}  // namespace avx2

}  // namespace gridfuse::kernels
