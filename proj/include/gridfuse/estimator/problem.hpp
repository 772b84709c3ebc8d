#pragma once

// Equality-constrained weighted least squares:
//
//   minimize  sum_j w_j x_{n_j}^2   subject to  h_i(x) = 0,
//
// where every h_i is a structured row built from linear, bilinear, quotient
// (term / resistance) and diode pieces. The structure gives exact first and
// second derivatives with a sparsity pattern that does not depend on x.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gridfuse::est {

enum class VarKind { voltage_real, voltage_imag, dc_voltage, diode_voltage, dc_current, noise, parameter };

struct Variable {
    std::string name;
    VarKind kind = VarKind::noise;
    double init = 0.0;
    /// Newton step bound on this variable (junction limiting); 0 disables it.
    double step_limit = 0.0;
};

enum class RowFamily {
    grid_kcl,
    zero_injection,
    reference,
    pv_circuit,
    battery_circuit,
    soc_trapezoid,
    coupling,
};

std::string to_string(RowFamily family);

struct LinearTerm {
    std::size_t var;
    double coeff;
};

/// coeff * x_a * x_b (a == b gives a square), optionally times an efficiency slot.
struct BilinearTerm {
    std::size_t a;
    std::size_t b;
    double coeff;
    bool efficiency_scaled = false;
};

/// alpha * (sum numerator + numerator_const) / x_denominator
struct QuotientTerm {
    double alpha = 1.0;
    std::vector<LinearTerm> numerator;
    double numerator_const = 0.0;
    std::size_t denominator = 0;
};

/// coeff * i_0 (exp(x/a) - 1) with the clamped continuation of diode_current.
struct DiodeTerm {
    std::size_t var;
    double i_0;
    double a;
    double coeff = 1.0;
};

struct Row {
    std::string name;
    RowFamily family = RowFamily::grid_kcl;
    double constant = 0.0;
    std::vector<LinearTerm> linear;
    std::vector<BilinearTerm> bilinear;
    std::optional<QuotientTerm> quotient;
    std::optional<DiodeTerm> diode;
    int efficiency_slot = -1;
};

struct HessianEntry {
    std::size_t i;
    std::size_t j;
    double value;
};

/// Value and derivatives of one row. Gradient and Hessian entry positions are
/// identical for every x; duplicates are summed by the consumer.
struct RowEvaluation {
    double value = 0.0;
    std::vector<LinearTerm> gradient;
    std::vector<HessianEntry> hessian;  ///< both (i,j) and (j,i) for off-diagonals
};

void evaluate_row(const Row& row, std::span<const double> x, std::span<const double> efficiencies,
                  RowEvaluation& out);

struct ObjectiveTerm {
    std::size_t var;
    double weight;
};

class EstimationProblem {
public:
    EstimationProblem() = default;

    std::size_t add_variable(Variable v);
    void add_objective(std::size_t var, double weight);
    void add_row(Row row);
    std::size_t add_efficiency(double eta);

    const std::vector<Variable>& variables() const noexcept { return variables_; }
    const std::vector<Row>& rows() const noexcept { return rows_; }
    const std::vector<ObjectiveTerm>& objective() const noexcept { return objective_; }
    const std::vector<double>& efficiencies() const noexcept { return efficiencies_; }

    std::size_t num_variables() const noexcept { return variables_.size(); }
    std::size_t num_rows() const noexcept { return rows_.size(); }

    /// Same problem with the efficiency slots replaced.
    EstimationProblem with_efficiencies(std::vector<double> etas) const;

    /// Initial point taken from the variable declarations.
    std::vector<double> initial_point() const;

    double objective_value(std::span<const double> x) const;
    std::vector<double> constraint_values(std::span<const double> x) const;

    /// Structural checks: every index in range, every noise variable in exactly
    /// one objective term and at least one row, every parameter used by a row.
    /// Throws DataError naming the offending entry.
    void validate() const;

private:
    std::vector<Variable> variables_;
    std::vector<Row> rows_;
    std::vector<ObjectiveTerm> objective_;
    std::vector<double> efficiencies_;
};

}  // namespace gridfuse::est
