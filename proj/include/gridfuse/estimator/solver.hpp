#pragma once

#include <span>
#include <string>
#include <vector>

#include "gridfuse/estimator/problem.hpp"

namespace gridfuse::est {

struct SolveOptions {
    double tol = 1e-8;                 ///< infinity norm of the first-order KKT residual
    int max_iterations = 200;
    int max_backtracks = 20;
    double backtrack_factor = 0.5;
    double regularization = 1e-10;     ///< first shift tried after a failed factorization
    double regularization_growth = 100.0;
    int max_regularization_retries = 3;
};

struct Estimates {
    std::vector<double> x;
    std::vector<double> lambda;
    double objective = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string diagnostic;
};

/// Gradient of f + lambda^T h with respect to x.
std::vector<double> lagrangian_gradient(const EstimationProblem& problem, std::span<const double> x,
                                        std::span<const double> lambda);

/// Stacked first-order conditions [grad_x L; h(x)].
std::vector<double> kkt_residual(const EstimationProblem& problem, std::span<const double> x,
                                 std::span<const double> lambda);

/// Full-space Lagrange-Newton on the KKT conditions. Non-convergence is reported
/// in the result; a KKT matrix that stays singular after the regularization
/// retries raises SolverError.
Estimates solve(const EstimationProblem& problem, std::span<const double> x0, const SolveOptions& opts = {});

/// Warm start from a previous primal-dual point.
Estimates solve(const EstimationProblem& problem, std::span<const double> x0, std::span<const double> lambda0,
                const SolveOptions& opts = {});

}  // namespace gridfuse::est
