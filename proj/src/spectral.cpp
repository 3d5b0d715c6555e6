#include "klab/spectral.hpp"

#include "klab/error.hpp"
#include "klab/philox.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace klab {

namespace {

std::vector<double> d1_coeffs(int order) {
  switch (order) {
    case 2: return {0.5};
    case 4: return {2.0 / 3.0, -1.0 / 12.0};
    case 6: return {3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0};
    case 8: return {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
    default: throw Error(ErrorKind::grid, "stencil order must be 2, 4, 6 or 8");
  }
}

std::pair<double, std::vector<double>> d2_coeffs(int order) {
  switch (order) {
    case 2: return {-2.0, {1.0}};
    case 4: return {-5.0 / 2.0, {4.0 / 3.0, -1.0 / 12.0}};
    case 6: return {-49.0 / 18.0, {3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0}};
    case 8: return {-205.0 / 72.0, {8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0}};
    default: throw Error(ErrorKind::grid, "stencil order must be 2, 4, 6 or 8");
  }
}

void check_width(int n, int order, bool periodic) {
  if (n < (periodic ? order + 1 : order + 2))
    throw Error(ErrorKind::grid, "grid too coarse for a stencil of order " + std::to_string(order));
}

// P X P with P = I - U U^T.
Mat project_both(const Mat& x, const Mat& ul, const Mat& ur) {
  Mat y = x - ul * (ul.transpose() * x);
  return y - (y * ur) * ur.transpose();
}

double fro_ratio(const Mat& a, const Mat& b) {
  const double nb = b.norm();
  return nb > 0.0 ? a.norm() / nb : a.norm();
}

[[noreturn]] void eigensolver_failure(const Mat& m, const char* what) {
  const auto path = std::filesystem::temp_directory_path() / "klab_eigensolver_failure.bin";
  std::ofstream out(path, std::ios::binary);
  const std::int64_t r = m.rows(), c = m.cols();
  out.write(reinterpret_cast<const char*>(&r), sizeof r);
  out.write(reinterpret_cast<const char*>(&c), sizeof c);
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  throw Error(ErrorKind::numerical, std::string(what) + " eigensolver did not converge; matrix written to " +
                                        path.string());
}

}  // namespace

Mat central_d1(int n, double h, int order, bool periodic) {
  check_width(n, order, periodic);
  const auto c = d1_coeffs(order);
  Mat d = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 1; k <= static_cast<int>(c.size()); ++k) {
      const double v = c[k - 1] / h;
      int r = i + k, l = i - k;
      if (periodic) {
        d(i, ((r % n) + n) % n) += v;
        d(i, ((l % n) + n) % n) -= v;
      } else {
        if (r < n) d(i, r) += v;
        if (l >= 0) d(i, l) -= v;
      }
    }
  return d;
}

Mat central_d2(int n, double h, int order, bool periodic) {
  check_width(n, order, periodic);
  const auto [c0, c] = d2_coeffs(order);
  Mat d = Mat::Zero(n, n);
  const double h2 = h * h;
  for (int i = 0; i < n; ++i) {
    d(i, i) += c0 / h2;
    for (int k = 1; k <= static_cast<int>(c.size()); ++k) {
      const double v = c[k - 1] / h2;
      int r = i + k, l = i - k;
      if (periodic) {
        d(i, ((r % n) + n) % n) += v;
        d(i, ((l % n) + n) % n) += v;
      } else {
        if (r < n) d(i, r) += v;
        if (l >= 0) d(i, l) += v;
      }
    }
  }
  return d;
}

LinearizedOperator assemble_linearized_operators(const ModelSpec& model, const EquilibriumState& eq,
                                                 int stencil_order) {
  if (model.dim() != 1) throw Error(ErrorKind::invalid_model, "linearized operators are assembled for n = 1");
  LinearizedOperator ops;
  ops.grid = eq.grid;
  ops.stencil_order = stencil_order;
  const PhaseGrid& grid = ops.grid;
  const int N = grid.nq(), Np = grid.np();
  const Eigen::Index NP = static_cast<Eigen::Index>(N) * Np;
  const double dq = grid.dq(), dp = grid.dp(), beta = model.beta;

  const Mat Dq = central_d1(N, dq, stencil_order, grid.periodic_q());
  const Mat Dp = central_d1(Np, dp, stencil_order, false);
  const Mat Dpp = central_d2(Np, dp, stencil_order, false);

  std::vector<Coeffs1> c(N);
  for (int i = 0; i < N; ++i) c[i] = model.family->eval1(grid.q(i));

  ops.wg.resize(N);
  ops.wf.resize(NP);
  for (int i = 0; i < N; ++i) ops.wg(i) = eq.g[i] * dq;
  for (Eigen::Index k = 0; k < NP; ++k) ops.wf(k) = eq.f[static_cast<std::size_t>(k)] * dq * dp;
  ops.sg = ops.wg.cwiseSqrt();
  ops.sf = ops.wf.cwiseSqrt();
  auto idx = [Np](int i, int j) { return static_cast<Eigen::Index>(i) * Np + j; };

  // Xi eta = -(1/g*) Dq (g*/M sum_j p h* eta dp).
  Mat C = Mat::Zero(N, NP);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < Np; ++j) C(i, idx(i, j)) = grid.p(j) * eq.h[static_cast<std::size_t>(idx(i, j))] * dp;
  Vec gm(N), ginv(N);
  for (int i = 0; i < N; ++i) {
    gm(i) = eq.g[i] / c[i].M;
    ginv(i) = 1.0 / eq.g[i];
  }
  ops.Xi = -(ginv.asDiagonal() * Dq * gm.asDiagonal()) * C;

  // Phi xi = -(p/M) Dq xi, broadcast over p.
  ops.Phi.resize(NP, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < Np; ++j) ops.Phi.row(idx(i, j)) = -(grid.p(j) / c[i].M) * Dq.row(i);

  ops.Xi_gs = ops.sg.asDiagonal() * ops.Xi * ops.sf.cwiseInverse().asDiagonal();
  ops.Phi_gs = ops.sf.asDiagonal() * ops.Phi * ops.sg.cwiseInverse().asDiagonal();

  // Hamiltonian transport, made exactly antisymmetric.
  Mat At = Mat::Zero(NP, NP);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < Np; ++j) {
      const Eigen::Index r = idx(i, j);
      const double a = grid.p(j) / c[i].M;
      const double dqh = dqH1(c[i], grid.p(j));
      for (int k = 0; k < N; ++k)
        if (Dq(i, k) != 0.0) At(r, idx(k, j)) -= a * Dq(i, k);
      for (int l = 0; l < Np; ++l)
        if (Dp(j, l) != 0.0) At(r, idx(i, l)) += dqh * Dp(j, l);
    }
  Mat Psi_gs = 0.5 * (At - At.transpose());
  At.resize(0, 0);
  // Damping-diffusion part in ground-state form: D/2 (d_p^2 - W), symmetric.
  for (int i = 0; i < N; ++i) {
    const double half_d = 0.5 * c[i].D, m = c[i].M;
    for (int j = 0; j < Np; ++j) {
      const Eigen::Index r = idx(i, j);
      const double p = grid.p(j);
      for (int l = 0; l < Np; ++l)
        if (Dpp(j, l) != 0.0) Psi_gs(r, idx(i, l)) += half_d * Dpp(j, l);
      Psi_gs(r, r) -= half_d * (beta * beta * p * p / (4.0 * m * m) - beta / (2.0 * m));
    }
  }
  // -E Xi: broadcast of the xi-rate onto every momentum node.
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < Np; ++j) {
      const Eigen::Index r = idx(i, j);
      Psi_gs.row(r) -= (ops.sf(r) / ops.sg(i)) * ops.Xi_gs.row(i);
    }
  ops.Psi_gs = std::move(Psi_gs);
  ops.Psi = ops.sf.cwiseInverse().asDiagonal() * ops.Psi_gs * ops.sf.asDiagonal();

  // Constraint directions.
  ops.constraint_g = ops.sg / ops.sg.norm();
  ops.constraint_h = Mat::Zero(NP, N);
  for (int i = 0; i < N; ++i) {
    const Vec blk = ops.sf.segment(idx(i, 0), Np);
    ops.constraint_h.block(idx(i, 0), i, Np, 1) = blk / blk.norm();
  }
  const Mat ug = ops.constraint_g;  // N x 1
  const Mat& uh = ops.constraint_h;

  const Eigen::Index n = N + NP;
  ops.Lambda_raw_gs = Mat::Zero(n, n);
  ops.Lambda_raw_gs.block(0, N, N, NP) = ops.Xi_gs;
  ops.Lambda_raw_gs.block(N, 0, NP, N) = -ops.Xi_gs.transpose();
  ops.Lambda_raw_gs.block(N, N, NP, NP) = ops.Psi_gs;

  const Mat XiP = project_both(ops.Xi_gs, ug, uh);
  ops.Lambda_gs = Mat::Zero(n, n);
  ops.Lambda_gs.block(0, N, N, NP) = XiP;
  ops.Lambda_gs.block(N, 0, NP, N) = -XiP.transpose();
  ops.Lambda_gs.block(N, N, NP, NP) = project_both(ops.Psi_gs, uh, uh);

  // L+ f = -d_q(a f) + d_p(b f) + D/2 d_p^2 f with the same stencils.
  ops.Ldag = Mat::Zero(NP, NP);
  for (int i = 0; i < N; ++i) {
    const double F = 0.5 * beta * c[i].D;
    for (int j = 0; j < Np; ++j) {
      const Eigen::Index r = idx(i, j);
      for (int k = 0; k < N; ++k)
        if (Dq(i, k) != 0.0) ops.Ldag(r, idx(k, j)) -= Dq(i, k) * grid.p(j) / c[k].M;
      for (int l = 0; l < Np; ++l) {
        if (Dp(j, l) != 0.0) {
          const double pl = grid.p(l);
          ops.Ldag(r, idx(i, l)) += Dp(j, l) * (dqH1(c[i], pl) + F * pl / c[i].M);
        }
        if (Dpp(j, l) != 0.0) ops.Ldag(r, idx(i, l)) += 0.5 * c[i].D * Dpp(j, l);
      }
    }
  }
  return ops;
}

AdjointnessReport adjointness_audit(const LinearizedOperator& ops, int probes, std::uint64_t seed) {
  AdjointnessReport r;
  r.probes = probes;
  r.independent_defect = fro_ratio(ops.Phi_gs + ops.Xi_gs.transpose(), ops.Xi_gs);
  // Enforced branch in raw weights: Phi_e = -W_f^-1 Xi^T W_g.
  const Mat phi_e = -(ops.wf.cwiseInverse().asDiagonal() * ops.Xi.transpose() * ops.wg.asDiagonal());
  r.enforced_defect = fro_ratio(ops.wf.asDiagonal() * phi_e + (ops.wg.asDiagonal() * ops.Xi).transpose(),
                                ops.wg.asDiagonal() * ops.Xi);
  const Mat B = ops.wf.asDiagonal() * (ops.Phi * ops.Xi);
  r.symmetry_defect = fro_ratio(B - B.transpose(), B);

  const Eigen::Index NP = ops.Xi.cols();
  r.max_form = -INFINITY;
  for (int k = 0; k < probes; ++k) {
    Vec psi(NP);
    for (Eigen::Index i = 0; i < NP; i += 2) {
      const auto [a, b] = normal_pair(seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      psi(i) = a;
      if (i + 1 < NP) psi(i + 1) = b;
    }
    const Vec v = ops.Xi * psi;
    const double form = (ops.wf.array() * (ops.Phi * v).array() * psi.array()).sum();
    const double nrm = (ops.wg.array() * v.array().square()).sum();
    r.max_form = std::max(r.max_form, form);
    if (nrm > 0.0) r.max_form_identity = std::max(r.max_form_identity, std::abs(form + nrm) / nrm);
  }

  // Constraint invariance, with and without the projectors.
  const int N = ops.nq();
  const Eigen::Index n = ops.Lambda_raw_gs.rows();
  Mat U = Mat::Zero(n, 1 + N);
  U.block(0, 0, N, 1) = ops.constraint_g;
  U.block(N, 1, NP, N) = ops.constraint_h;
  auto leak = [&U](const Mat& L) {
    const Mat LP = L - (L * U) * U.transpose();  // L P
    return fro_ratio(LP - U * (U.transpose() * LP), L);
  };
  const Mat& L = ops.Lambda_gs;
  const Mat PL = L - U * (U.transpose() * L);
  const Mat LP = L - (L * U) * U.transpose();
  r.projector_defect = fro_ratio(PL - LP, L);
  r.raw_constraint_leak = leak(ops.Lambda_raw_gs);
  return r;
}

double high_frequency_fraction(const PhaseGrid& grid, const CVec& field) {
  const int nq = grid.nq(), np = grid.np();
  auto dft = [](int n) {
    Eigen::MatrixXcd w(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) w(a, b) = std::polar(1.0, -two_pi * a * b / n);
    return w;
  };
  const Eigen::MatrixXcd Wq = dft(nq), Wp = dft(np);
  Eigen::MatrixXcd u(nq, np);
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < np; ++j) u(i, j) = field(static_cast<Eigen::Index>(i) * np + j);
  const Eigen::MatrixXcd s = Wq * u * Wp.transpose();
  double total = 0.0, high = 0.0;
  for (int a = 0; a < nq; ++a)
    for (int b = 0; b < np; ++b) {
      const double e = std::norm(s(a, b));
      total += e;
      const int ka = std::min(a, nq - a), kb = std::min(b, np - b);
      if (4 * ka > nq || 4 * kb > np) high += e;
    }
  return total > 0.0 ? high / total : 0.0;
}

SpectrumReport spectrum(const LinearizedOperator& ops, const SpectrumOptions& options) {
  SpectrumReport rep;
  const int N = ops.nq();
  const Eigen::Index NP = ops.Xi.cols();

  Eigen::EigenSolver<Mat> es(ops.Lambda_gs, true);
  if (es.info() != Eigen::Success) eigensolver_failure(ops.Lambda_gs, "Lambda");
  const CVec lam = es.eigenvalues();
  const Eigen::MatrixXcd vec = es.eigenvectors();

  Eigen::EigenSolver<Mat> ed(ops.Ldag, false);
  if (ed.info() != Eigen::Success) eigensolver_failure(ops.Ldag, "L+");
  const CVec mu = ed.eigenvalues();

  rep.lambda_eigs.assign(lam.data(), lam.data() + lam.size());
  rep.ldag_eigs.assign(mu.data(), mu.data() + mu.size());
  rep.spectral_radius = lam.cwiseAbs().maxCoeff();
  const double rho = rep.spectral_radius;
  const double rho_l = mu.cwiseAbs().maxCoeff();
  rep.max_real_relative = lam.real().maxCoeff() / rho;
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (lam(k).real() > 1e-6 * rho) ++rep.positive_count;

  const Mat XiP = ops.Lambda_gs.block(0, N, N, NP);
  const Mat PsiP = ops.Lambda_gs.block(N, N, NP, NP);
  auto quad_residual = [&](Eigen::Index k) {
    const std::complex<double> l = lam(k);
    const Eigen::VectorXcd y = vec.col(k).tail(NP);
    const double yy = y.squaredNorm();
    const std::complex<double> ypy = y.dot(PsiP * y);  // y^H Psi y
    const double xx = (XiP * y).squaredNorm();
    const double scale = yy * std::norm(l);
    return scale > 0.0 ? std::abs(l * l * yy - l * ypy + xx) / scale : 0.0;
  };

  std::vector<Eigen::Index> order(lam.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return lam(a).real() > lam(b).real(); });
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (std::abs(lam(k)) > 1e-8 * rho) rep.max_quad_residual = std::max(rep.max_quad_residual, quad_residual(k));

  rep.lambda_high_frequency.assign(lam.size(), std::nan(""));
  std::vector<bool> used(mu.size(), false);
  for (Eigen::Index k : order) {
    if (static_cast<int>(rep.pairs.size()) >= options.pairs) break;
    if (!(std::abs(lam(k)) > 1e-8 * rho)) continue;
    // Perturbation of f in the symmetric representation: sf (xi + eta).
    CVec u(NP);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < ops.np(); ++j) {
        const Eigen::Index r = static_cast<Eigen::Index>(i) * ops.np() + j;
        u(r) = ops.sf(r) * vec(i, k) / ops.sg(i) + vec(N + r, k);
      }
    const double hf = high_frequency_fraction(ops.grid, u);
    rep.lambda_high_frequency[static_cast<std::size_t>(k)] = hf;
    if (hf >= options.high_frequency_limit) continue;
    Eigen::Index best = -1;
    double bd = INFINITY;
    for (Eigen::Index m = 0; m < mu.size(); ++m) {
      if (used[static_cast<std::size_t>(m)] || !(std::abs(mu(m)) > 1e-8 * rho_l)) continue;
      const double d = std::abs(mu(m) - lam(k));
      if (d < bd) {
        bd = d;
        best = m;
      }
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = true;
    rep.pairs.push_back({lam(k), mu(best), bd / std::abs(lam(k)), hf});
    rep.quad_residuals.push_back(quad_residual(k));
  }
  rep.pairing_modes = static_cast<int>(rep.pairs.size());
  for (std::size_t k = 0; k < rep.pairs.size() && k < 10; ++k)
    rep.worst_pairing_10 = std::max(rep.worst_pairing_10, rep.pairs[k].distance);
  if (rep.pairs.size() < 10) rep.worst_pairing_10 = INFINITY;

  if (options.zero_psi_check) {
    const Eigen::Index n = N + NP;
    Mat L0 = Mat::Zero(n, n);
    L0.block(0, N, N, NP) = XiP;
    L0.block(N, 0, NP, N) = -XiP.transpose();
    Eigen::EigenSolver<Mat> ez(L0, false);
    if (ez.info() != Eigen::Success) eigensolver_failure(L0, "zero-Psi");
    const Eigen::JacobiSVD<Mat> svd(XiP);
    const Vec sv = svd.singularValues();
    const double smax = sv.maxCoeff();
    std::vector<double> im, sing;
    double max_re = 0.0;
    for (Eigen::Index k = 0; k < ez.eigenvalues().size(); ++k) {
      const auto z = ez.eigenvalues()(k);
      max_re = std::max(max_re, std::abs(z.real()));
      if (z.imag() > 1e-8 * smax) im.push_back(z.imag());
    }
    for (Eigen::Index k = 0; k < sv.size(); ++k)
      if (sv(k) > 1e-8 * smax) sing.push_back(sv(k));
    std::sort(im.rbegin(), im.rend());
    std::sort(sing.rbegin(), sing.rend());
    double d = max_re;
    if (im.size() != sing.size()) {
      d = INFINITY;
    } else {
      for (std::size_t k = 0; k < im.size(); ++k) d = std::max(d, std::abs(im[k] - sing[k]));
    }
    rep.zero_psi_defect = d / smax;
  }
  return rep;
}

QuadraticApprox quadratic_entropy_approx(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model) {
  const LogRatioFields lr = log_ratio_fields(f, eq);
  const EntropyReport e = entropies(f, eq, model, lr);
  const PhaseGrid& grid = eq.grid;
  QuadraticApprox q;
  q.F = e.F;
  q.G = e.G;
  q.H = e.H;
  double qg = 0.0;
  for (int i = 0; i < grid.nq(); ++i) qg += eq.g[i] * lr.xi[i] * lr.xi[i];
  q.QG = 0.5 * qg * grid.dq();
  double qh = 0.0, cross = 0.0;
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) {
      const std::size_t k = grid.index(i, j);
      qh += eq.f[k] * lr.eta[k] * lr.eta[k];
      cross += eq.f[k] * lr.xi[i] * lr.eta[k];
      q.max_theta = std::max(q.max_theta, std::abs(lr.theta[k]));
    }
  q.QH = 0.5 * qh * grid.cell();
  q.cross = cross * grid.cell();
  q.QF = q.QG + q.QH + q.cross;
  q.rF = q.F - q.QF;
  q.rG = q.G - q.QG;
  q.rH = q.H - q.QH;
  q.range_warning = q.max_theta > 1.0;
  return q;
}

DensityField perturbed_equilibrium(const EquilibriumState& eq, const ModelSpec& model, double amplitude) {
  const PhaseGrid& grid = eq.grid;
  const double temp = model.temperature();
  DensityField f{grid, std::vector<double>(grid.size()), 0.0};
  for (int i = 0; i < grid.nq(); ++i) {
    const double q = grid.q(i);
    const double m = model.family->eval1(q).M;
    const double s1 = grid.periodic_q() ? std::cos(q) : std::tanh(q);
    const double s2 = grid.periodic_q() ? std::sin(q) : q / (1.0 + q * q);
    for (int j = 0; j < grid.np(); ++j) {
      const double p = grid.p(j);
      const double phi = s1 + (0.5 * p * p / (temp * m) - 0.5) + 0.5 * s2 * p / std::sqrt(temp * m);
      const std::size_t k = grid.index(i, j);
      f.values[k] = eq.f[k] * std::exp(amplitude * phi);
    }
  }
  normalize(f);
  return f;
}

QuadraticScaling quadratic_scaling(const EquilibriumState& eq, const ModelSpec& model, double amplitude,
                                   const std::function<DensityField(double)>& make) {
  auto build = [&](double a) { return make ? make(a) : perturbed_equilibrium(eq, model, a); };
  QuadraticScaling s;
  s.full = quadratic_entropy_approx(build(amplitude), eq, model);
  s.half = quadratic_entropy_approx(build(0.5 * amplitude), eq, model);
  s.ratio_F = s.full.rF / s.half.rF;
  s.ratio_G = s.full.rG / s.half.rG;
  s.ratio_H = s.full.rH / s.half.rH;
  return s;
}

}  // namespace klab
