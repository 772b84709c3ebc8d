#include "gridfuse/kernels.hpp"

#include <immintrin.h>

#include <cstdlib>
#include <string_view>

#include "gridfuse/error.hpp"

namespace gridfuse::kernels {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b) throw DataError("kernel inputs differ in length");
}

void check_voltages(std::span<const double> v) {
    for (double e : v)
        if (!(e > 0.0)) throw DataError("invalid voltage magnitude measurement");
}

template <typename Term>
double lane_reduce(std::size_t n, Term term) {
    double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        l0 += term(i);
        l1 += term(i + 1);
        l2 += term(i + 2);
        l3 += term(i + 3);
    }
    double s = (l0 + l1) + (l2 + l3);
    for (; i < n; ++i) s += term(i);
    return s;
}

__attribute__((target("avx2"))) double combine(__m256d acc) {
    alignas(32) double l[4];
    _mm256_store_pd(l, acc);
    return (l[0] + l[1]) + (l[2] + l[3]);
}

}  // namespace

namespace scalar {

double sum(std::span<const double> x) {
    return lane_reduce(x.size(), [&](std::size_t i) { return x[i]; });
}

double sum_sq_dev(std::span<const double> x, double c) {
    return lane_reduce(x.size(), [&](std::size_t i) {
        const double d = x[i] - c;
        return d * d;
    });
}

double sum_sq_diff(std::span<const double> x, std::span<const double> y) {
    check_sizes(x.size(), y.size());
    return lane_reduce(x.size(), [&](std::size_t i) {
        const double d = x[i] - y[i];
        return d * d;
    });
}

void feature_transform_batch(std::span<const double> p, std::span<const double> q, std::span<const double> v,
                             std::span<double> g, std::span<double> b) {
    check_sizes(p.size(), q.size());
    check_sizes(p.size(), v.size());
    check_sizes(p.size(), g.size());
    check_sizes(p.size(), b.size());
    check_voltages(v);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double v2 = v[i] * v[i];
        g[i] = p[i] / v2;
        b[i] = q[i] / v2;
    }
}

}  // namespace scalar

namespace avx2 {

__attribute__((target("avx2"))) double sum(std::span<const double> x) {
    const std::size_t n = x.size();
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x.data() + i));
    double s = combine(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

__attribute__((target("avx2"))) double sum_sq_dev(std::span<const double> x, double c) {
    const std::size_t n = x.size();
    const __m256d cv = _mm256_set1_pd(c);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), cv);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    double s = combine(acc);
    for (; i < n; ++i) {
        const double d = x[i] - c;
        s += d * d;
    }
    return s;
}

__attribute__((target("avx2"))) double sum_sq_diff(std::span<const double> x, std::span<const double> y) {
    check_sizes(x.size(), y.size());
    const std::size_t n = x.size();
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), _mm256_loadu_pd(y.data() + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    double s = combine(acc);
    for (; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

__attribute__((target("avx2"))) void feature_transform_batch(std::span<const double> p, std::span<const double> q,
                                                             std::span<const double> v, std::span<double> g,
                                                             std::span<double> b) {
    check_sizes(p.size(), q.size());
    check_sizes(p.size(), v.size());
    check_sizes(p.size(), g.size());
    check_sizes(p.size(), b.size());
    check_voltages(v);
    const std::size_t n = p.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vv = _mm256_loadu_pd(v.data() + i);
        const __m256d v2 = _mm256_mul_pd(vv, vv);
        _mm256_storeu_pd(g.data() + i, _mm256_div_pd(_mm256_loadu_pd(p.data() + i), v2));
        _mm256_storeu_pd(b.data() + i, _mm256_div_pd(_mm256_loadu_pd(q.data() + i), v2));
    }
    for (; i < n; ++i) {
        const double v2 = v[i] * v[i];
        g[i] = p[i] / v2;
        b[i] = q[i] / v2;
    }
}

}  // namespace avx2

bool avx2_available() {
    static const bool ok = __builtin_cpu_supports("avx2");
    return ok;
}

Variant active_variant() {
    static const Variant v = [] {
        const char* env = std::getenv("GRIDFUSE_SIMD");
        if (env != nullptr && std::string_view(env) == "scalar") return Variant::scalar;
        return avx2_available() ? Variant::avx2 : Variant::scalar;
    }();
    return v;
}

double sum(std::span<const double> x) {
    return active_variant() == Variant::avx2 ? avx2::sum(x) : scalar::sum(x);
}

double sum_sq_dev(std::span<const double> x, double c) {
    return active_variant() == Variant::avx2 ? avx2::sum_sq_dev(x, c) : scalar::sum_sq_dev(x, c);
}

double sum_sq_diff(std::span<const double> x, std::span<const double> y) {
    return active_variant() == Variant::avx2 ? avx2::sum_sq_diff(x, y) : scalar::sum_sq_diff(x, y);
}

void feature_transform_batch(std::span<const double> p, std::span<const double> q, std::span<const double> v,
                             std::span<double> g, std::span<double> b) {
    if (active_variant() == Variant::avx2)
        avx2::feature_transform_batch(p, q, v, g, b);
    else
        scalar::feature_transform_batch(p, q, v, g, b);
}

}  // namespace gridfuse::kernels
