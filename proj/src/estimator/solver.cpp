#include "gridfuse/estimator/solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gridfuse/error.hpp"

namespace gridfuse::est {

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
}

// Line-search merit: two-norm of the KKT residual with the stationarity block
// divided by the largest objective weight, so scaling every weight by a
// constant leaves the sequence of iterates unchanged.
double merit_norm(std::span<const double> r, std::size_t n, double dual_scale) {
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
        const double e = j < n ? r[j] * dual_scale : r[j];
        s += e * e;
    }
    return std::sqrt(s);
}

class KktSystem {
public:
    explicit KktSystem(const EstimationProblem& p) : p_(p), n_(p.num_variables()), m_(p.num_rows()) {}

    /// Residual [grad f + J^T lambda; h].
    std::vector<double> residual(std::span<const double> x, std::span<const double> lambda) {
        std::vector<double> r(n_ + m_, 0.0);
        for (const auto& t : p_.objective()) r[t.var] += 2.0 * t.weight * x[t.var];
        for (std::size_t i = 0; i < m_; ++i) {
            evaluate_row(p_.rows()[i], x, p_.efficiencies(), ev_);
            for (const auto& g : ev_.gradient) r[g.var] += lambda[i] * g.coeff;
            r[n_ + i] = ev_.value;
        }
        return r;
    }

    /// Assembles [H + sum lambda_i hess h_i + delta I, J^T; J, -delta I].
    void assemble(std::span<const double> x, std::span<const double> lambda, double delta, SparseMatrix& k) {
        triplets_.clear();
        for (std::size_t j = 0; j < n_ + m_; ++j) {
            const auto jj = static_cast<int>(j);
            triplets_.emplace_back(jj, jj, j < n_ ? delta : -delta);
        }
        for (const auto& t : p_.objective()) {
            const auto v = static_cast<int>(t.var);
            triplets_.emplace_back(v, v, 2.0 * t.weight);
        }
        for (std::size_t i = 0; i < m_; ++i) {
            evaluate_row(p_.rows()[i], x, p_.efficiencies(), ev_);
            const auto row = static_cast<int>(n_ + i);
            for (const auto& g : ev_.gradient) {
                const auto c = static_cast<int>(g.var);
                triplets_.emplace_back(row, c, g.coeff);
                triplets_.emplace_back(c, row, g.coeff);
            }
            for (const auto& h : ev_.hessian)
                triplets_.emplace_back(static_cast<int>(h.i), static_cast<int>(h.j), lambda[i] * h.value);
        }
        k.resize(static_cast<Eigen::Index>(n_ + m_), static_cast<Eigen::Index>(n_ + m_));
        k.setFromTriplets(triplets_.begin(), triplets_.end());
        k.makeCompressed();
    }

    /// Names of variables whose Jacobian column is zero at x (and that carry no objective term).
    std::string deficient_columns(std::span<const double> x) {
        std::vector<double> col(n_, 0.0);
        for (const auto& t : p_.objective()) col[t.var] = 1.0;
        for (std::size_t i = 0; i < m_; ++i) {
            evaluate_row(p_.rows()[i], x, p_.efficiencies(), ev_);
            for (const auto& g : ev_.gradient) col[g.var] = std::max(col[g.var], std::abs(g.coeff));
        }
        std::string names;
        for (std::size_t j = 0; j < n_; ++j)
            if (col[j] == 0.0) names += (names.empty() ? "" : ", ") + p_.variables()[j].name;
        return names;
    }

    /// Rows whose gradient vanishes at x.
    std::string deficient_rows(std::span<const double> x) {
        std::string names;
        for (std::size_t i = 0; i < m_; ++i) {
            evaluate_row(p_.rows()[i], x, p_.efficiencies(), ev_);
            double g = 0.0;
            for (const auto& e : ev_.gradient) g = std::max(g, std::abs(e.coeff));
            if (g == 0.0) names += (names.empty() ? "" : ", ") + p_.rows()[i].name;
        }
        return names;
    }

private:
    const EstimationProblem& p_;
    std::size_t n_;
    std::size_t m_;
    RowEvaluation ev_;
    std::vector<Triplet> triplets_;
};

void check_parameter_columns(const EstimationProblem& p, std::span<const double> x) {
    std::vector<double> col(p.num_variables(), 0.0);
    RowEvaluation ev;
    for (const auto& row : p.rows()) {
        evaluate_row(row, x, p.efficiencies(), ev);
        for (const auto& g : ev.gradient) col[g.var] = std::max(col[g.var], std::abs(g.coeff));
    }
    for (std::size_t j = 0; j < p.num_variables(); ++j)
        if (p.variables()[j].kind == VarKind::parameter && col[j] == 0.0)
            throw DataError("unknown parameter " + p.variables()[j].name + " is unidentifiable at the initial point");
}

}  // namespace

std::vector<double> lagrangian_gradient(const EstimationProblem& problem, std::span<const double> x,
                                        std::span<const double> lambda) {
    KktSystem sys(problem);
    auto r = sys.residual(x, lambda);
    r.resize(problem.num_variables());
    return r;
}

std::vector<double> kkt_residual(const EstimationProblem& problem, std::span<const double> x,
                                 std::span<const double> lambda) {
    KktSystem sys(problem);
    return sys.residual(x, lambda);
}

Estimates solve(const EstimationProblem& problem, std::span<const double> x0, const SolveOptions& opts) {
    const std::vector<double> lambda0(problem.num_rows(), 0.0);
    return solve(problem, x0, lambda0, opts);
}

Estimates solve(const EstimationProblem& problem, std::span<const double> x0, std::span<const double> lambda0,
                const SolveOptions& opts) {
    const std::size_t n = problem.num_variables();
    const std::size_t m = problem.num_rows();
    if (x0.size() != n) throw DataError("initial point has the wrong size");
    if (lambda0.size() != m) throw DataError("initial multipliers have the wrong size");
    problem.validate();
    check_parameter_columns(problem, x0);

    Estimates out;
    out.x.assign(x0.begin(), x0.end());
    out.lambda.assign(lambda0.begin(), lambda0.end());

    KktSystem sys(problem);
    SparseMatrix k;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    bool pattern_ready = false;

    std::vector<double> r = sys.residual(out.x, out.lambda);
    std::vector<double> trial_x(n), trial_lambda(m);
    double max_weight = 0.0;
    for (const auto& t : problem.objective()) max_weight = std::max(max_weight, t.weight);
    const double dual_scale = max_weight > 0.0 ? 1.0 / max_weight : 1.0;

    for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
        out.kkt_residual = inf_norm(r);
        if (!std::isfinite(out.kkt_residual)) {
            out.diagnostic = "non-finite KKT residual";
            break;
        }
        if (out.kkt_residual < opts.tol) {
            out.converged = true;
            break;
        }

        // Factorize, adding a growing regularization shift only on failure.
        double delta = 0.0;
        bool factored = false;
        for (int attempt = 0; attempt <= opts.max_regularization_retries; ++attempt) {
            sys.assemble(out.x, out.lambda, delta, k);
            if (!pattern_ready) {
                lu.analyzePattern(k);
                pattern_ready = true;
            }
            lu.factorize(k);
            if (lu.info() == Eigen::Success) {
                factored = true;
                break;
            }
            delta = attempt == 0 ? opts.regularization : delta * opts.regularization_growth;
        }
        if (!factored) {
            std::string detail = sys.deficient_columns(out.x);
            std::string rows = sys.deficient_rows(out.x);
            std::string msg = "singular KKT matrix";
            if (!detail.empty()) msg += "; variables with empty Jacobian column: " + detail;
            if (!rows.empty()) msg += "; constraints with vanishing gradient: " + rows;
            if (detail.empty() && rows.empty()) msg += " (" + lu.lastErrorMessage() + ")";
            throw SolverError(msg, out.kkt_residual);
        }

        Eigen::VectorXd rhs(static_cast<Eigen::Index>(n + m));
        for (std::size_t j = 0; j < n + m; ++j) rhs[static_cast<Eigen::Index>(j)] = -r[j];
        const Eigen::VectorXd step = lu.solve(rhs);
        if (!step.allFinite()) throw SolverError("KKT solve produced a non-finite step", out.kkt_residual);

        // Junction limiting: scale the whole step so bounded variables move at most their limit.
        double alpha = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double lim = problem.variables()[j].step_limit;
            const double dx = std::abs(step[static_cast<Eigen::Index>(j)]);
            if (lim > 0.0 && dx > lim) alpha = std::min(alpha, lim / dx);
        }

        const double merit = merit_norm(r, n, dual_scale);
        std::vector<double> trial_r;
        for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
            for (std::size_t j = 0; j < n; ++j) trial_x[j] = out.x[j] + alpha * step[static_cast<Eigen::Index>(j)];
            for (std::size_t i = 0; i < m; ++i)
                trial_lambda[i] = out.lambda[i] + alpha * step[static_cast<Eigen::Index>(n + i)];
            trial_r = sys.residual(trial_x, trial_lambda);
            const double trial_merit = merit_norm(trial_r, n, dual_scale);
            if (std::isfinite(trial_merit) && trial_merit <= (1.0 - 1e-4 * alpha) * merit) break;
            if (bt < opts.max_backtracks) alpha *= opts.backtrack_factor;
        }
        out.x.swap(trial_x);
        out.lambda.swap(trial_lambda);
        r.swap(trial_r);
    }

    out.kkt_residual = inf_norm(r);
    if (!out.converged && out.kkt_residual < opts.tol) out.converged = true;
    if (!out.converged && out.diagnostic.empty())
        out.diagnostic = "no convergence after " + std::to_string(out.iterations) + " iterations";
    out.objective = problem.objective_value(out.x);
    return out;
}

}  // namespace gridfuse::est
