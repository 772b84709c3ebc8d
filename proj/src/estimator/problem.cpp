#include "gridfuse/estimator/problem.hpp"

#include <string>

#include "gridfuse/der.hpp"
#include "gridfuse/error.hpp"

namespace gridfuse::est {

std::string to_string(RowFamily family) {
    switch (family) {
        case RowFamily::grid_kcl: return "grid_kcl";
        case RowFamily::zero_injection: return "zero_injection";
        case RowFamily::reference: return "reference";
        case RowFamily::pv_circuit: return "pv_circuit";
        case RowFamily::battery_circuit: return "battery_circuit";
        case RowFamily::soc_trapezoid: return "soc_trapezoid";
        case RowFamily::coupling: return "coupling";
    }
    return "unknown";
}

void evaluate_row(const Row& row, std::span<const double> x, std::span<const double> efficiencies,
                  RowEvaluation& out) {
    out.value = row.constant;
    out.gradient.clear();
    out.hessian.clear();

    const double eta = row.efficiency_slot >= 0 ? efficiencies[static_cast<std::size_t>(row.efficiency_slot)] : 1.0;

    for (const auto& t : row.linear) {
        out.value += t.coeff * x[t.var];
        out.gradient.push_back({t.var, t.coeff});
    }
    for (const auto& t : row.bilinear) {
        const double c = t.efficiency_scaled ? t.coeff * eta : t.coeff;
        if (t.a == t.b) {
            out.value += c * x[t.a] * x[t.a];
            out.gradient.push_back({t.a, 2.0 * c * x[t.a]});
            out.hessian.push_back({t.a, t.a, 2.0 * c});
        } else {
            out.value += c * x[t.a] * x[t.b];
            out.gradient.push_back({t.a, c * x[t.b]});
            out.gradient.push_back({t.b, c * x[t.a]});
            out.hessian.push_back({t.a, t.b, c});
            out.hessian.push_back({t.b, t.a, c});
        }
    }
    if (row.quotient) {
        const auto& q = *row.quotient;
        double num = q.numerator_const;
        for (const auto& t : q.numerator) num += t.coeff * x[t.var];
        const double r = x[q.denominator];
        out.value += q.alpha * num / r;
        for (const auto& t : q.numerator) {
            out.gradient.push_back({t.var, q.alpha * t.coeff / r});
            const double h = -q.alpha * t.coeff / (r * r);
            out.hessian.push_back({t.var, q.denominator, h});
            out.hessian.push_back({q.denominator, t.var, h});
        }
        out.gradient.push_back({q.denominator, -q.alpha * num / (r * r)});
        out.hessian.push_back({q.denominator, q.denominator, 2.0 * q.alpha * num / (r * r * r)});
    }
    if (row.diode) {
        const auto& d = *row.diode;
        const double v = x[d.var];
        out.value += d.coeff * diode_current(v, d.i_0, d.a);
        out.gradient.push_back({d.var, d.coeff * diode_conductance(v, d.i_0, d.a)});
        out.hessian.push_back({d.var, d.var, d.coeff * diode_curvature(v, d.i_0, d.a)});
    }
}

std::size_t EstimationProblem::add_variable(Variable v) {
    variables_.push_back(std::move(v));
    return variables_.size() - 1;
}

void EstimationProblem::add_objective(std::size_t var, double weight) {
    if (!(weight > 0.0)) throw DataError("objective weight must be positive for variable " + std::to_string(var));
    objective_.push_back({var, weight});
}

void EstimationProblem::add_row(Row row) { rows_.push_back(std::move(row)); }

std::size_t EstimationProblem::add_efficiency(double eta) {
    efficiencies_.push_back(eta);
    return efficiencies_.size() - 1;
}

EstimationProblem EstimationProblem::with_efficiencies(std::vector<double> etas) const {
    if (etas.size() != efficiencies_.size()) throw DataError("efficiency table size mismatch");
    EstimationProblem copy = *this;
    copy.efficiencies_ = std::move(etas);
    return copy;
}

std::vector<double> EstimationProblem::initial_point() const {
    std::vector<double> x(variables_.size());
    for (std::size_t j = 0; j < variables_.size(); ++j) x[j] = variables_[j].init;
    return x;
}

double EstimationProblem::objective_value(std::span<const double> x) const {
    double f = 0.0;
    for (const auto& t : objective_) f += t.weight * x[t.var] * x[t.var];
    return f;
}

std::vector<double> EstimationProblem::constraint_values(std::span<const double> x) const {
    std::vector<double> h(rows_.size());
    RowEvaluation ev;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        evaluate_row(rows_[i], x, efficiencies_, ev);
        h[i] = ev.value;
    }
    return h;
}

void EstimationProblem::validate() const {
    const std::size_t n = variables_.size();
    std::vector<int> in_objective(n, 0), in_rows(n, 0);
    for (const auto& t : objective_) {
        if (t.var >= n) throw DataError("objective term references undeclared variable");
        if (variables_[t.var].kind != VarKind::noise)
            throw DataError("objective term on non-noise variable " + variables_[t.var].name);
        ++in_objective[t.var];
    }

    const auto touch = [&](std::size_t j, const Row& row) {
        if (j >= n) throw DataError("row " + row.name + " references an undeclared variable");
        ++in_rows[j];
    };
    for (const auto& row : rows_) {
        if (row.efficiency_slot >= static_cast<int>(efficiencies_.size()))
            throw DataError("row " + row.name + " references an undeclared efficiency");
        for (const auto& t : row.linear) touch(t.var, row);
        for (const auto& t : row.bilinear) {
            touch(t.a, row);
            touch(t.b, row);
        }
        if (row.quotient) {
            for (const auto& t : row.quotient->numerator) touch(t.var, row);
            touch(row.quotient->denominator, row);
        }
        if (row.diode) touch(row.diode->var, row);
    }

    for (std::size_t j = 0; j < n; ++j) {
        const auto& v = variables_[j];
        if (v.kind == VarKind::noise) {
            if (in_objective[j] != 1) throw DataError("noise variable " + v.name + " must have exactly one objective term");
            if (in_rows[j] == 0) throw DataError("noise variable " + v.name + " appears in no constraint");
        } else if (v.kind == VarKind::parameter) {
            if (in_rows[j] == 0) throw DataError("unknown parameter " + v.name + " is structurally unidentifiable");
        } else if (in_rows[j] == 0) {
            throw DataError("variable " + v.name + " appears in no constraint");
        }
    }
}

}  // namespace gridfuse::est
