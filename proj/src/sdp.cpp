#include "tvmpc/sdp.hpp"

#include "tvmpc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tvmpc {

AffineExpr AffineExpr::constant_of(Matrix c)
{
  AffineExpr e;
  e.constant = std::move(c);
  return e;
}

AffineExpr& AffineExpr::add(SdpVar v, Matrix left, Matrix right, double scale)
{
  terms.push_back(LinearTerm{v, std::move(left), std::move(right), false, scale});
  return *this;
}

AffineExpr& AffineExpr::add_transposed(SdpVar v, Matrix left, Matrix right, double scale)
{
  terms.push_back(LinearTerm{v, std::move(left), std::move(right), true, scale});
  return *this;
}

Matrix LmiBlock::evaluate(const Vector& y) const
{
  Matrix out = constant;
  for (const auto& [k, f] : terms) { out += y(k) * f; }
  return sym(out);
}

SdpVar SemidefiniteProgram::add_symmetric(std::string name, Eigen::Index n, bool strictly_positive)
{
  VarInfo v{std::move(name), n, n, true, strictly_positive, num_scalars_};
  num_scalars_ += scalar_count(v);
  vars_.push_back(v);
  objective_.conservativeResize(num_scalars_);
  objective_.tail(scalar_count(v)).setZero();
  return SdpVar{static_cast<int>(vars_.size()) - 1};
}

SdpVar SemidefiniteProgram::add_matrix(std::string name, Eigen::Index rows, Eigen::Index cols)
{
  VarInfo v{std::move(name), rows, cols, false, false, num_scalars_};
  num_scalars_ += scalar_count(v);
  vars_.push_back(v);
  objective_.conservativeResize(num_scalars_);
  objective_.tail(scalar_count(v)).setZero();
  return SdpVar{static_cast<int>(vars_.size()) - 1};
}

Eigen::Index SemidefiniteProgram::scalar_count(const VarInfo& v) const
{
  return v.symmetric ? v.rows * (v.rows + 1) / 2 : v.rows * v.cols;
}

std::pair<Eigen::Index, Eigen::Index> SemidefiniteProgram::shape(SdpVar v) const
{
  const auto& info = vars_.at(static_cast<std::size_t>(v.id));
  return {info.rows, info.cols};
}

Matrix SemidefiniteProgram::basis(const VarInfo& v, Eigen::Index k) const
{
  Matrix e = Matrix::Zero(v.rows, v.cols);
  if (v.symmetric) {
    // Upper triangle, row by row.
    Eigen::Index idx = 0;
    for (Eigen::Index a = 0; a < v.rows; ++a) {
      for (Eigen::Index b = a; b < v.cols; ++b, ++idx) {
        if (idx == k) {
          e(a, b) = 1.0;
          e(b, a) = 1.0;
          return e;
        }
      }
    }
  } else {
    e(k / v.cols, k % v.cols) = 1.0;
  }
  return e;
}

Matrix SemidefiniteProgram::value(SdpVar v, const Vector& y) const
{
  const auto& info = vars_.at(static_cast<std::size_t>(v.id));
  Matrix out = Matrix::Zero(info.rows, info.cols);
  const Eigen::Index cnt = scalar_count(info);
  for (Eigen::Index k = 0; k < cnt; ++k) { out += y(info.offset + k) * basis(info, k); }
  return out;
}

Vector SemidefiniteProgram::flatten(const std::vector<Matrix>& values) const
{
  Vector y = Vector::Zero(num_scalars_);
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const auto& info = vars_[i];
    const Matrix& m = values.at(i);
    Eigen::Index idx = info.offset;
    if (info.symmetric) {
      for (Eigen::Index a = 0; a < info.rows; ++a) {
        for (Eigen::Index b = a; b < info.cols; ++b) { y(idx++) = 0.5 * (m(a, b) + m(b, a)); }
      }
    } else {
      for (Eigen::Index a = 0; a < info.rows; ++a) {
        for (Eigen::Index b = 0; b < info.cols; ++b) { y(idx++) = m(a, b); }
      }
    }
  }
  return y;
}

void SemidefiniteProgram::materialize(const AffineExpr& e, Eigen::Index rows, Eigen::Index cols, Matrix& constant,
                                      std::vector<std::pair<Eigen::Index, Matrix>>& terms) const
{
  constant = Matrix::Zero(rows, cols);
  if (e.constant.size() > 0) {
    if (e.constant.rows() != rows || e.constant.cols() != cols) {
      throw InvalidModel("LMI: constant term has shape " + std::to_string(e.constant.rows()) + "x" +
                         std::to_string(e.constant.cols()) + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    constant = e.constant;
  }
  for (const auto& t : e.terms) {
    if (t.var.id < 0 || static_cast<std::size_t>(t.var.id) >= vars_.size()) {
      throw InvalidModel("LMI: decision variable reference out of range");
    }
    const auto& info = vars_[static_cast<std::size_t>(t.var.id)];
    const Eigen::Index vr = t.transposed ? info.cols : info.rows;
    const Eigen::Index vc = t.transposed ? info.rows : info.cols;
    if (t.left.cols() != vr || t.right.rows() != vc || t.left.rows() != rows || t.right.cols() != cols) {
      throw InvalidModel("LMI: term with variable '" + info.name + "' has inconsistent shape");
    }
    const Eigen::Index cnt = scalar_count(info);
    for (Eigen::Index k = 0; k < cnt; ++k) {
      const Matrix b = basis(info, k);
      Matrix f = t.scale * (t.left * (t.transposed ? Matrix(b.transpose()) : b) * t.right);
      if (f.cwiseAbs().maxCoeff() == 0.0) { continue; }
      const Eigen::Index flat = info.offset + k;
      auto it = std::find_if(terms.begin(), terms.end(), [flat](const auto& p) { return p.first == flat; });
      if (it == terms.end()) {
        terms.emplace_back(flat, std::move(f));
      } else {
        it->second += f;
      }
    }
  }
}

void SemidefiniteProgram::add_block_lmi(const std::string& label, const std::vector<Eigen::Index>& sizes,
                                        const std::vector<std::vector<AffineExpr>>& upper)
{
  const auto nb = sizes.size();
  if (upper.size() != nb) { throw InvalidModel("LMI '" + label + "': expression grid has wrong row count"); }
  std::vector<Eigen::Index> off(nb + 1, 0);
  for (std::size_t i = 0; i < nb; ++i) { off[i + 1] = off[i] + sizes[i]; }
  const Eigen::Index total = off[nb];

  LmiBlock blk;
  blk.label = label;
  blk.constant = Matrix::Zero(total, total);
  std::vector<std::pair<Eigen::Index, Matrix>> acc;

  for (std::size_t i = 0; i < nb; ++i) {
    if (upper[i].size() != nb) { throw InvalidModel("LMI '" + label + "': expression grid has wrong column count"); }
    for (std::size_t j = i; j < nb; ++j) {
      const AffineExpr& e = upper[i][j];
      if (e.constant.size() == 0 && e.terms.empty()) { continue; }
      Matrix c;
      std::vector<std::pair<Eigen::Index, Matrix>> terms;
      materialize(e, sizes[i], sizes[j], c, terms);
      auto place = [&](Matrix& target, const Matrix& piece) {
        target.block(off[i], off[j], sizes[i], sizes[j]) += piece;
        if (i != j) { target.block(off[j], off[i], sizes[j], sizes[i]) += piece.transpose(); }
      };
      place(blk.constant, c);
      for (auto& [k, f] : terms) {
        auto it = std::find_if(acc.begin(), acc.end(), [k = k](const auto& p) { return p.first == k; });
        if (it == acc.end()) {
          acc.emplace_back(k, Matrix::Zero(total, total));
          it = std::prev(acc.end());
        }
        place(it->second, f);
      }
    }
  }
  blk.constant = sym(blk.constant);
  for (auto& [k, f] : acc) { f = sym(f); }
  std::sort(acc.begin(), acc.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  blk.terms = std::move(acc);
  blocks_.push_back(std::move(blk));
}

void SemidefiniteProgram::add_lmi(const std::string& label, const AffineExpr& expr)
{
  Eigen::Index n = expr.constant.rows();
  if (n == 0 && !expr.terms.empty()) { n = expr.terms.front().left.rows(); }
  add_block_lmi(label, {n}, {{expr}});
}

void SemidefiniteProgram::add_trace_objective(SdpVar v, double weight)
{
  const auto& info = vars_.at(static_cast<std::size_t>(v.id));
  if (!info.symmetric) { throw InvalidModel("trace objective requires a symmetric variable"); }
  Eigen::Index idx = info.offset;
  for (Eigen::Index a = 0; a < info.rows; ++a) {
    for (Eigen::Index b = a; b < info.cols; ++b, ++idx) {
      if (a == b) { objective_(idx) += weight; }
    }
  }
}

namespace {

// Internal block of the conic form: Z = C - sum_i y_i A_i with A_i stored sparsely per block.
struct ConeBlock
{
  Matrix c;
  std::vector<std::pair<Eigen::Index, Matrix>> a;  // (index into y, A_i)
};

double inner(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

// Largest step alpha in (0, 1] with X + alpha dX >= 0 (scaled by tau), via Cholesky of X.
double max_step(const Matrix& x, const Matrix& dx)
{
  Eigen::LLT<Matrix> llt(x);
  if (llt.info() != Eigen::Success) { return 0.0; }
  const Matrix l = llt.matrixL();
  const Matrix linv_dx = l.triangularView<Eigen::Lower>().solve(dx);
  const Matrix m = l.triangularView<Eigen::Lower>().solve(Matrix(linv_dx.transpose()));
  const double lmin = Eigen::SelfAdjointEigenSolver<Matrix>(sym(m), Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (lmin >= 0.0) { return std::numeric_limits<double>::infinity(); }
  return -1.0 / lmin;
}

// Independent re-evaluation of every block at the point `flat`.
void recheck(const SemidefiniteProgram& p, const Vector& flat, const SdpOptions& opt, SdpResult& res)
{
  res.flat = flat;
  res.objective = p.objective().dot(flat);
  res.values.clear();
  for (std::size_t vi = 0; vi < p.num_vars(); ++vi) { res.values.push_back(p.value(SdpVar{static_cast<int>(vi)}, flat)); }
  res.min_block_eigenvalue = std::numeric_limits<double>::infinity();
  for (const auto& blk : p.blocks()) { res.min_block_eigenvalue = std::min(res.min_block_eigenvalue, min_eigenvalue(blk.evaluate(flat))); }
  res.min_strict_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t vi = 0; vi < p.num_vars(); ++vi) {
    if (p.is_strict(SdpVar{static_cast<int>(vi)})) {
      res.min_strict_eigenvalue = std::min(res.min_strict_eigenvalue, min_eigenvalue(res.values[vi]));
    }
  }
  const bool blocks_ok = res.min_block_eigenvalue >= -opt.block_tolerance;
  const bool strict_ok = res.min_strict_eigenvalue >= opt.strict_tolerance;
  res.status = blocks_ok && strict_ok ? SdpStatus::Feasible : SdpStatus::Infeasible;
}

// Blocks entering the log-det barrier: every user block, one block V per strictly positive
// variable and the norm bound of every variable (the LMI sets need not be bounded on their own).
std::vector<ConeBlock> barrier_blocks(const SemidefiniteProgram& p, double bound)
{
  std::vector<ConeBlock> out;
  for (const auto& blk : p.blocks()) { out.push_back(ConeBlock{blk.constant, blk.terms}); }
  for (std::size_t vi = 0; vi < p.num_vars(); ++vi) {
    const SdpVar v{static_cast<int>(vi)};
    const auto [r, c] = p.shape(v);
    AffineExpr e;
    e.add(v, Matrix::Identity(r, r), Matrix::Identity(c, c));
    ConeBlock b;
    p.materialize(e, r, c, b.c, b.a);
    if (p.is_strict(v)) { out.push_back(b); }
    ConeBlock nb;
    nb.c = bound * Matrix::Identity(r + c, r + c);
    for (const auto& [k, f] : b.a) {
      Matrix full = Matrix::Zero(r + c, r + c);
      full.topRightCorner(r, c) = f;
      full.bottomLeftCorner(c, r) = f.transpose();
      nb.a.emplace_back(k, std::move(full));
    }
    out.push_back(std::move(nb));
  }
  return out;
}

}  // namespace

SdpResult analytic_center(const SemidefiniteProgram& p, const Vector& start, const SdpOptions& opt)
{
  const Eigen::Index ns = p.num_scalars();
  if (start.size() != ns) { throw InvalidModel("analytic_center: start point has the wrong size"); }
  const std::vector<ConeBlock> blocks = barrier_blocks(p, opt.variable_bound);
  auto evaluate = [&](const ConeBlock& b, const Vector& y) {
    Matrix f = b.c;
    for (const auto& [k, a] : b.a) { f += y(k) * a; }
    return sym(f);
  };
  // -sum log det F_b(y), or +inf outside the interior.
  auto barrier = [&](const Vector& y) {
    double v = 0.0;
    for (const auto& b : blocks) {
      Eigen::LLT<Matrix> llt(evaluate(b, y));
      if (llt.info() != Eigen::Success) { return std::numeric_limits<double>::infinity(); }
      v -= 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
    return v;
  };

  Vector y = start;
  double phi = barrier(y);
  if (!std::isfinite(phi)) { throw SolverError("analytic_center: start point is not strictly feasible"); }
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    Vector g = Vector::Zero(ns);
    Matrix h = Matrix::Zero(ns, ns);
    for (const auto& b : blocks) {
      Eigen::LLT<Matrix> llt(evaluate(b, y));
      const auto l = llt.matrixL();
      std::vector<Matrix> w;
      w.reserve(b.a.size());
      for (const auto& [k, a] : b.a) {
        const Matrix la = l.solve(a);
        w.push_back(l.solve(Matrix(la.transpose())));
        g(k) -= w.back().trace();
      }
      for (std::size_t i = 0; i < b.a.size(); ++i) {
        for (std::size_t j = i; j < b.a.size(); ++j) {
          const double v = inner(w[i], w[j]);
          h(b.a[i].first, b.a[j].first) += v;
          if (j != i) { h(b.a[j].first, b.a[i].first) += v; }
        }
      }
    }
    const Vector dy = -h.ldlt().solve(g);
    const double decrement = std::sqrt(std::max(0.0, -g.dot(dy)));
    // A decrement of 1e-7 leaves a barrier suboptimality near 1e-14, the rounding level.
    if (!dy.allFinite() || decrement < 1e-7) { break; }
    double step = decrement > 0.25 ? 1.0 / (1.0 + decrement) : 1.0;
    // Backtracking keeps the iterate interior and the barrier decreasing.
    bool moved = false;
    for (int bt = 0; bt < 60 && !moved; ++bt) {
      const double trial = barrier(y + step * dy);
      if (trial <= phi + 0.25 * step * g.dot(dy)) {
        y += step * dy;
        phi = trial;
        moved = true;
      }
      step *= 0.5;
    }
    if (!moved) { break; }
  }

  SdpResult res;
  res.iterations = it;
  recheck(p, y, opt, res);
  res.margin = std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) { res.margin = std::min(res.margin, min_eigenvalue(evaluate(b, y))); }
  return res;
}

SdpResult solve_sdp(const SemidefiniteProgram& p, const SdpOptions& opt)
{
  const Eigen::Index ns = p.num_scalars();
  const Eigen::Index m = ns + 1;  // last entry is the margin t
  const Eigen::Index t_idx = ns;

  for (const auto& blk : p.blocks()) {
    if (blk.constant.rows() != blk.constant.cols()) { throw InvalidModel("SDP: block '" + blk.label + "' is not square"); }
    for (const auto& [k, f] : blk.terms) {
      if (k < 0 || k >= ns) { throw InvalidModel("SDP: block '" + blk.label + "' references an unknown scalar"); }
      if (f.rows() != blk.size() || f.cols() != blk.size()) { throw InvalidModel("SDP: coefficient shape mismatch"); }
    }
  }

  std::vector<ConeBlock> cone;
  auto push_user = [&](const Matrix& c0, const std::vector<std::pair<Eigen::Index, Matrix>>& terms, bool with_margin) {
    ConeBlock b;
    b.c = c0;
    for (const auto& [k, f] : terms) { b.a.emplace_back(k, -f); }
    if (with_margin) { b.a.emplace_back(t_idx, Matrix::Identity(c0.rows(), c0.cols())); }
    cone.push_back(std::move(b));
  };
  for (const auto& blk : p.blocks()) { push_user(blk.constant, blk.terms, !blk.auxiliary); }

  // Strict positivity V - tI >= 0 and norm bounds [[rho I, V], [V^T, rho I]] >= 0.
  for (std::size_t vi = 0; vi < p.num_vars(); ++vi) {
    const SdpVar v{static_cast<int>(vi)};
    const auto [r, c] = p.shape(v);
    if (p.is_strict(v)) {
      AffineExpr e;
      e.add(v, Matrix::Identity(r, r), Matrix::Identity(c, c));
      Matrix c0;
      std::vector<std::pair<Eigen::Index, Matrix>> terms;
      p.materialize(e, r, c, c0, terms);
      push_user(c0, terms, true);
    }
    AffineExpr off;
    off.add(v, Matrix::Identity(r, r), Matrix::Identity(c, c));
    Matrix c0;
    std::vector<std::pair<Eigen::Index, Matrix>> terms;
    p.materialize(off, r, c, c0, terms);
    ConeBlock b;
    b.c = opt.variable_bound * Matrix::Identity(r + c, r + c);
    for (const auto& [k, f] : terms) {
      Matrix full = Matrix::Zero(r + c, r + c);
      full.topRightCorner(r, c) = f;
      full.bottomLeftCorner(c, r) = f.transpose();
      b.a.emplace_back(k, -full);
    }
    cone.push_back(std::move(b));
  }

  Vector bvec = Vector::Zero(m);
  bvec.head(ns) = p.objective();
  bvec(t_idx) = 1.0;

  // Infeasible-start primal-dual path following.
  const std::size_t nb = cone.size();
  Eigen::Index ntot = 0;
  double cnorm = 0.0;
  for (const auto& b : cone) {
    ntot += b.c.rows();
    cnorm = std::max(cnorm, b.c.cwiseAbs().maxCoeff());
  }
  const double init = std::max(1.0, std::sqrt(cnorm));
  std::vector<Matrix> x(nb);
  std::vector<Matrix> z(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    x[b] = init * Matrix::Identity(cone[b].c.rows(), cone[b].c.rows());
    z[b] = init * Matrix::Identity(cone[b].c.rows(), cone[b].c.rows());
  }
  Vector y = Vector::Zero(m);

  auto a_op = [&](const std::vector<Matrix>& w) {
    Vector out = Vector::Zero(m);
    for (std::size_t b = 0; b < nb; ++b) {
      for (const auto& [k, a] : cone[b].a) { out(k) += inner(a, w[b]); }
    }
    return out;
  };
  auto at_op = [&](const Vector& v, std::size_t b) {
    Matrix out = Matrix::Zero(cone[b].c.rows(), cone[b].c.rows());
    for (const auto& [k, a] : cone[b].a) { out += v(k) * a; }
    return out;
  };

  SdpResult res;
  const double bnorm = 1.0 + bvec.norm();
  // Last iterate whose dual slack was verified positive definite; numerical breakdown falls
  // back to it and leaves the verdict to the independent re-check below.
  Vector y_good = y;
  bool breakdown = false;
  int stalled = 0;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    // Residuals.
    const Vector rp = bvec - a_op(x);
    std::vector<Matrix> rd(nb);
    double rd_norm = 0.0;
    double gap = 0.0;
    double pobj = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      rd[b] = cone[b].c - z[b] - at_op(y, b);
      rd_norm = std::max(rd_norm, rd[b].cwiseAbs().maxCoeff());
      gap += inner(x[b], z[b]);
      pobj += inner(cone[b].c, x[b]);
    }
    const double dobj = bvec.dot(y);
    const double mu = gap / static_cast<double>(ntot);
    const double rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    const bool dual_ok = rd_norm / (1.0 + cnorm) < opt.tolerance;
    if (dual_ok && rp.norm() / bnorm < opt.tolerance && (rel_gap < opt.tolerance || gap < opt.tolerance * 1e-2)) {
      break;
    }
    // Once complementarity is exhausted the primal residual cannot improve any further; the
    // dual point (the decision variables) is converged.
    if (dual_ok && gap < 1e-3 * opt.tolerance * (1.0 + std::abs(dobj))) { break; }

    // Schur complement M_ij = sum_b <A_i, X A_j Z^{-1}>.
    std::vector<Matrix> zinv(nb);
    Matrix schur = Matrix::Zero(m, m);
    for (std::size_t b = 0; b < nb; ++b) {
      Eigen::LLT<Matrix> llt(z[b]);
      if (llt.info() != Eigen::Success) {
        breakdown = true;
        break;
      }
      zinv[b] = llt.solve(Matrix::Identity(z[b].rows(), z[b].cols()));
      const auto& as = cone[b].a;
      std::vector<Matrix> g(as.size());
      for (std::size_t i = 0; i < as.size(); ++i) { g[i] = x[b] * as[i].second * zinv[b]; }
      for (std::size_t i = 0; i < as.size(); ++i) {
        for (std::size_t j = i; j < as.size(); ++j) {
          const double v = inner(as[j].second, g[i]);
          schur(as[i].first, as[j].first) += v;
          if (i != j) { schur(as[j].first, as[i].first) += v; }
        }
      }
    }
    if (breakdown) { break; }
    y_good = y;
    schur = sym(schur);
    const double reg = 1e-14 * (1.0 + schur.diagonal().cwiseAbs().maxCoeff());
    Eigen::LLT<Matrix> schur_llt(schur + reg * Matrix::Identity(m, m));
    if (schur_llt.info() != Eigen::Success) {
      breakdown = true;
      break;
    }

    auto direction = [&](double sigma, const std::vector<Matrix>* corr_x, const std::vector<Matrix>* corr_z,
                         Vector& dy, std::vector<Matrix>& dx, std::vector<Matrix>& dz) {
      std::vector<Matrix> w(nb);
      for (std::size_t b = 0; b < nb; ++b) {
        w[b] = sigma * mu * zinv[b] - x[b] - x[b] * rd[b] * zinv[b];
        if (corr_x != nullptr) { w[b] -= (*corr_x)[b] * (*corr_z)[b] * zinv[b]; }
      }
      dy = schur_llt.solve(rp - a_op(w));
      dx.resize(nb);
      dz.resize(nb);
      for (std::size_t b = 0; b < nb; ++b) {
        dz[b] = rd[b] - at_op(dy, b);
        Matrix full = sigma * mu * zinv[b] - x[b] - x[b] * dz[b] * zinv[b];
        if (corr_x != nullptr) { full -= (*corr_x)[b] * (*corr_z)[b] * zinv[b]; }
        dx[b] = sym(full);
      }
    };
    auto step_lengths = [&](const std::vector<Matrix>& dx, const std::vector<Matrix>& dz, double& ap, double& ad) {
      ap = std::numeric_limits<double>::infinity();
      ad = std::numeric_limits<double>::infinity();
      for (std::size_t b = 0; b < nb; ++b) {
        ap = std::min(ap, max_step(x[b], dx[b]));
        ad = std::min(ad, max_step(z[b], dz[b]));
      }
    };

    // Predictor.
    Vector dy;
    std::vector<Matrix> dx;
    std::vector<Matrix> dz;
    direction(0.0, nullptr, nullptr, dy, dx, dz);
    double ap = 0.0;
    double ad = 0.0;
    step_lengths(dx, dz, ap, ad);
    ap = std::min(1.0, ap);
    ad = std::min(1.0, ad);
    double gap_aff = 0.0;
    for (std::size_t b = 0; b < nb; ++b) { gap_aff += inner(x[b] + ap * dx[b], z[b] + ad * dz[b]); }
    const double sigma = std::clamp(std::pow(gap_aff / gap, 3.0), 0.0, 1.0);

    // Corrector.
    const std::vector<Matrix> dx_aff = dx;
    const std::vector<Matrix> dz_aff = dz;
    direction(sigma, &dx_aff, &dz_aff, dy, dx, dz);
    step_lengths(dx, dz, ap, ad);
    const double tau = 0.9 + 0.09 * std::min({1.0, ap, ad});
    ap = std::min(1.0, tau * ap);
    ad = std::min(1.0, tau * ad);
    for (std::size_t b = 0; b < nb; ++b) {
      x[b] = sym(x[b] + ap * dx[b]);
      z[b] = sym(z[b] + ad * dz[b]);
    }
    y += ad * dy;
    if (!y.allFinite()) {
      breakdown = true;
      break;
    }
    stalled = std::max(ap, ad) < 1e-8 ? stalled + 1 : 0;
    if (stalled >= 3) { break; }
  }
  res.iterations = it;
  if (breakdown) { y = y_good; }

  recheck(p, y.head(ns), opt, res);
  res.margin = y(t_idx);
  if (breakdown && res.status == SdpStatus::Infeasible && res.margin > -opt.block_tolerance) {
    throw SolverError("SDP: numerical breakdown after " + std::to_string(it) + " iterations with margin " +
                      std::to_string(res.margin));
  }
  return res;
}

}  // namespace tvmpc
