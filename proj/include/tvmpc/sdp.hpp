#pragma once

#include "tvmpc/numerics.hpp"

#include <string>
#include <utility>
#include <vector>

namespace tvmpc {

/// Handle to a decision matrix of a SemidefiniteProgram.
struct SdpVar
{
  int id = -1;
};

/// One term L * V * R (or L * V^T * R when transposed) of an affine matrix expression.
struct LinearTerm
{
  SdpVar var;
  Matrix left;
  Matrix right;
  bool transposed = false;
  double scale = 1.0;
};

/// Constant plus a sum of linear terms in decision matrices.
struct AffineExpr
{
  Matrix constant;  // may be empty (treated as zero)
  std::vector<LinearTerm> terms;

  static AffineExpr constant_of(Matrix c);
  AffineExpr& add(SdpVar v, Matrix left, Matrix right, double scale = 1.0);
  AffineExpr& add_transposed(SdpVar v, Matrix left, Matrix right, double scale = 1.0);
};

/// A symmetric matrix-valued affine function  F(y) = F0 + sum_k y_k F_k  of the flat decision
/// vector y, constrained to be positive semidefinite.
struct LmiBlock
{
  std::string label;
  Matrix constant;
  std::vector<std::pair<Eigen::Index, Matrix>> terms;
  /// Bound blocks keep the problem compact and take no part in the margin.
  bool auxiliary = false;

  Eigen::Index size() const { return constant.rows(); }
  Matrix evaluate(const Vector& y) const;
};

struct SdpOptions
{
  /// Bound on the spectral norm of every decision matrix.
  double variable_bound = 1e4;
  int max_iterations = 120;
  double tolerance = 1e-8;
  double block_tolerance = 1e-7;
  double strict_tolerance = 1e-9;
};

/// Feasibility problem over decision matrices:  find V_1..V_k  s.t.  every block F_b(V) >= 0,
/// strict variables V > 0, with an optional linear objective to maximize.
class SemidefiniteProgram
{
public:
  SdpVar add_symmetric(std::string name, Eigen::Index n, bool strictly_positive = false);
  SdpVar add_matrix(std::string name, Eigen::Index rows, Eigen::Index cols);

  /// Adds an LMI given as a grid of affine expressions. Only entries with i <= j need to be
  /// supplied; the lower triangle is mirrored. `sizes` gives the row/column partition.
  void add_block_lmi(const std::string& label, const std::vector<Eigen::Index>& sizes,
                     const std::vector<std::vector<AffineExpr>>& upper);
  /// Adds a single-expression LMI  expr >= 0  (expr must be symmetric).
  void add_lmi(const std::string& label, const AffineExpr& expr);

  /// Adds weight * trace(V) to the maximized objective (V symmetric).
  void add_trace_objective(SdpVar v, double weight);

  Eigen::Index num_scalars() const { return num_scalars_; }
  std::size_t num_vars() const { return vars_.size(); }
  const std::vector<LmiBlock>& blocks() const { return blocks_; }
  const Vector& objective() const { return objective_; }

  /// Reconstructs decision matrix v from the flat vector y.
  Matrix value(SdpVar v, const Vector& y) const;
  /// Flat vector from decision matrices (inverse of value()).
  Vector flatten(const std::vector<Matrix>& values) const;

  bool is_strict(SdpVar v) const { return vars_.at(static_cast<std::size_t>(v.id)).strict; }
  bool is_symmetric_var(SdpVar v) const { return vars_.at(static_cast<std::size_t>(v.id)).symmetric; }
  const std::string& name(SdpVar v) const { return vars_.at(static_cast<std::size_t>(v.id)).name; }
  std::pair<Eigen::Index, Eigen::Index> shape(SdpVar v) const;

  /// Contribution of one expression as a dense block (constant, per-scalar coefficients).
  void materialize(const AffineExpr& e, Eigen::Index rows, Eigen::Index cols, Matrix& constant,
                   std::vector<std::pair<Eigen::Index, Matrix>>& terms) const;

private:
  struct VarInfo
  {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    bool symmetric = false;
    bool strict = false;
    Eigen::Index offset = 0;
  };

  Eigen::Index scalar_count(const VarInfo& v) const;
  /// Basis matrix of the k-th scalar of variable v.
  Matrix basis(const VarInfo& v, Eigen::Index k) const;

  std::vector<VarInfo> vars_;
  std::vector<LmiBlock> blocks_;
  Vector objective_;
  Eigen::Index num_scalars_ = 0;
};

enum class SdpStatus { Feasible, Infeasible };

struct SdpResult
{
  SdpStatus status = SdpStatus::Infeasible;
  std::vector<Matrix> values;  ///< one per decision variable, in creation order
  Vector flat;
  double objective = 0.0;
  /// Largest t with every block >= t I found by the interior-point method.
  double margin = 0.0;
  /// Smallest eigenvalue over all blocks (independent re-evaluation) and over strict variables.
  double min_block_eigenvalue = 0.0;
  double min_strict_eigenvalue = 0.0;
  int iterations = 0;
};

/// Primal-dual interior-point method (HKM direction, Mehrotra predictor-corrector) applied to
/// "maximize t + objective s.t. F_b(y) >= t I". Feasible is reported only when the independent
/// eigenvalue re-check of every block passes.
SdpResult solve_sdp(const SemidefiniteProgram& p, const SdpOptions& opt = {});

/// Maximizer of the log-det barrier of all blocks, the strictly positive variables and the
/// variable norm bounds, by damped Newton steps from the strictly feasible point `start`.
/// `margin` reports the smallest eigenvalue over the barrier blocks.
SdpResult analytic_center(const SemidefiniteProgram& p, const Vector& start, const SdpOptions& opt = {});

}  // namespace tvmpc
