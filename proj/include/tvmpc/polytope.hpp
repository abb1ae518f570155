#pragma once

#include "tvmpc/numerics.hpp"

#include <json.hpp>

#include <vector>

namespace tvmpc {

/// Polytope in H-representation with every constraint normalized to c_i x <= 1. Sets written
/// this way always contain the origin.
struct Polytope
{
  Eigen::Index dim = 0;
  Matrix rows;  // num_rows x dim

  Polytope() = default;
  Polytope(Eigen::Index n, Matrix r);

  /// Axis-aligned box [lo, hi]; requires lo < 0 < hi componentwise.
  static Polytope box(const Vector& lo, const Vector& hi);
  /// Symmetric box [-h, h].
  static Polytope box(const Vector& half_widths);

  Eigen::Index num_rows() const { return rows.rows(); }
  /// Set scaled by s > 0: {s x : x in P}.
  Polytope scaled(double s) const;
};

/// Cartesian product P x Q.
Polytope cartesian(const Polytope& p, const Polytope& q);

/// Intersection (stacked rows).
Polytope intersect(const Polytope& p, const Polytope& q);

/// True iff c_i x <= 1 + tol for every row.
bool contains(const Polytope& p, const Vector& x, double tol = 0.0);

/// max_{x in P} c x. Throws UnboundedError when the maximum is unbounded.
double support(const Polytope& p, const Vector& c);

/// True iff Amap P is contained in Q, checked row by row with support LPs.
bool image_contained(const Matrix& amap, const Polytope& p, const Polytope& q, double tol = 1e-8);

/// Largest value of q_i Amap x - 1 over x in P and rows q_i of Q (0 or less means contained).
double image_excess(const Matrix& amap, const Polytope& p, const Polytope& q);

/// Same point set with every redundant row removed.
Polytope remove_redundant(const Polytope& p);

/// Largest subset of x0 that is invariant under x -> acl x, obtained by intersecting x0 with
/// the preimages of its rows until no new row is active. Throws NotConverged after max_iter
/// rounds.
Polytope max_invariant_polytope(const Matrix& acl, const Polytope& x0, int max_iter = 200);

/// Largest alpha in [0, 1] with alpha L Z inside box for every L in maps.
double max_scaling(const std::vector<Matrix>& maps, const Polytope& z, const Polytope& box);

/// Sets Z_0..Z_{M-1} used as terminal regions of the token bucket controller.
struct PeriodicPolytopeFamily
{
  std::vector<Polytope> sets;
};

/// Z_0 = alpha Z and Z_j = alpha A1^{j-1} A2 Z for j in 1..M-1. Images under singular maps are
/// replaced by outer approximations built from support LPs. The inclusions
/// A2 Z_0 in Z_1, A1 Z_j in Z_{j+1} and A1 Z_{M-1} in Z_0 are checked before returning.
PeriodicPolytopeFamily build_periodic_family(const Polytope& z, double alpha, const Matrix& a2, const Matrix& a1,
                                             int m);

/// Checks the chain inclusions of a family (and containment in `box` when it is non-empty).
/// Throws VerificationFailed carrying the index j of the first violated inclusion.
void verify_periodic_family(const PeriodicPolytopeFamily& f, const Matrix& a2, const Matrix& a1,
                            const Polytope* box = nullptr, double tol = 1e-8);

void to_json(nlohmann::json& j, const Polytope& p);
void from_json(const nlohmann::json& j, Polytope& p);

}  // namespace tvmpc
