#pragma once

// Bus admittance assembly and AC power flow (full Newton and fast-decoupled).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovc/netmodel.hpp"
#include "ovc/numerics.hpp"

namespace ovc {

using Complex = std::complex<double>;

class PowerFlowError : public std::runtime_error {
 public:
  PowerFlowError(const std::string& what, int iterations, double mismatch)
      : std::runtime_error(what), iterations_(iterations), mismatch_(mismatch) {}
  int iterations() const noexcept { return iterations_; }
  double mismatch() const noexcept { return mismatch_; }

 private:
  int iterations_;
  double mismatch_;
};

struct AdmittanceMatrix {
  std::size_t n = 0;
  DenseMatrix g;  // Re(Ybus), pu
  DenseMatrix b;  // Im(Ybus), pu

  Complex operator()(std::size_t i, std::size_t j) const { return {g(i, j), b(i, j)}; }
};

/// Which parts of the pi-model take part in an admittance assembly. The
/// defaults give the true Ybus; the FDLF matrices switch pieces off.
struct AssemblyOptions {
  bool series_resistance = true;
  bool line_charging = true;
  bool bus_shunts = true;
  bool off_nominal_taps = true;
  bool phase_shift = true;
};

inline AdmittanceMatrix assemble_admittance(const Network& net, const AssemblyOptions& opt = {}) {
  const std::size_t n = net.buses.size();
  AdmittanceMatrix y{n, DenseMatrix(n, n), DenseMatrix(n, n)};
  auto add = [&](std::size_t i, std::size_t j, Complex v) {
    y.g(i, j) += v.real();
    y.b(i, j) += v.imag();
  };
  for (const Branch& br : net.branches) {
    if (!br.in_service) continue;
    const std::size_t f = net.index_of(br.from_bus);
    const std::size_t t = net.index_of(br.to_bus);
    if (f == Network::npos || t == Network::npos) throw NetworkError("branch references unknown bus");
    const double r = opt.series_resistance ? br.r : 0.0;
    if (r * r + br.x * br.x <= 0.0)
      throw NetworkError("zero-impedance branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus));
    const Complex ys = 1.0 / Complex(r, br.x);
    const Complex yc(0.0, opt.line_charging ? br.b_charging / 2.0 : 0.0);
    const double ratio = opt.off_nominal_taps ? br.tap : 1.0;
    const double shift = opt.phase_shift ? br.shift * std::numbers::pi / 180.0 : 0.0;
    const Complex tap = std::polar(ratio, shift);
    add(f, f, (ys + yc) / (ratio * ratio));
    add(t, t, ys + yc);
    add(f, t, -ys / std::conj(tap));
    add(t, f, -ys / tap);
  }
  if (opt.bus_shunts)
    for (std::size_t i = 0; i < n; ++i) {
      const Bus& b = net.buses[i];
      add(i, i, Complex(b.g_shunt, b.b_shunt) / net.base_mva);
    }
  return y;
}

/// Complex bus admittance matrix (standard pi-model) over storage order.
inline AdmittanceMatrix build_ybus(const Network& net) { return assemble_admittance(net); }

/// Constant-matrix variants of B'' = -Im(Y) used by the fast-decoupled
/// iteration and by the Q-V sensitivity model.
enum class BppVariant {
  SeriesReactance,  // series resistance dropped; charging, shunts and taps kept
  Full,             // -Im(Ybus) with everything except phase shift
};

inline const char* to_string(BppVariant v) {
  return v == BppVariant::Full ? "full" : "series-reactance";
}

inline DenseMatrix negated(DenseMatrix m) { return m *= -1.0; }

/// B'' over all buses in storage order.
inline DenseMatrix build_bpp_all(const Network& net, BppVariant variant) {
  AssemblyOptions opt;
  opt.phase_shift = false;
  opt.series_resistance = variant == BppVariant::Full;
  return negated(assemble_admittance(net, opt).b);
}

/// B' over all buses (shunts, charging and taps removed; resistance
/// dropped for the XB scheme).
inline DenseMatrix build_bp_all(const Network& net, bool drop_resistance) {
  AssemblyOptions opt;
  opt.line_charging = false;
  opt.bus_shunts = false;
  opt.off_nominal_taps = false;
  opt.phase_shift = false;
  opt.series_resistance = !drop_resistance;
  return negated(assemble_admittance(net, opt).b);
}

struct PowerFlowSolution {
  std::vector<int> bus_ids;  // storage order
  Vector vm;                 // pu
  Vector va;                 // radians, slack at 0
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;  // pu

  double vm_of(int bus_id) const {
    for (std::size_t i = 0; i < bus_ids.size(); ++i)
      if (bus_ids[i] == bus_id) return vm[i];
    throw std::out_of_range("unknown bus id " + std::to_string(bus_id));
  }
};

struct PowerFlowOptions {
  double tolerance = 1e-8;  // pu power
  int max_iterations = 30;
};

namespace detail {

struct BusSets {
  std::vector<std::size_t> nonslack;  // PV (without slack) then PQ, storage order
  std::vector<std::size_t> pq;
  std::size_t slack = 0;
};

inline BusSets bus_sets(const Network& net) {
  BusSets s;
  std::vector<std::size_t> pv;
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    switch (net.buses[i].kind) {
      case BusKind::Slack: s.slack = i; break;
      case BusKind::PV: pv.push_back(i); break;
      case BusKind::PQ: s.pq.push_back(i); break;
    }
  }
  s.nonslack = pv;
  s.nonslack.insert(s.nonslack.end(), s.pq.begin(), s.pq.end());
  return s;
}

/// Scheduled net injection (generation minus load), pu. Reactive generation
/// is taken as zero; it is only meaningful at PQ buses.
inline std::vector<Complex> scheduled_injection(const Network& net) {
  std::vector<Complex> s(net.buses.size());
  for (std::size_t i = 0; i < net.buses.size(); ++i)
    s[i] = Complex(-net.buses[i].p_load, -net.buses[i].q_load) / net.base_mva;
  for (const Generator& g : net.generators) {
    if (!g.in_service) continue;
    const std::size_t i = net.index_of(g.bus);
    if (i != Network::npos) s[i] += Complex(g.p_gen / net.base_mva, 0.0);
  }
  return s;
}

inline std::vector<Complex> to_complex(const AdmittanceMatrix& y) {
  std::vector<Complex> c(y.n * y.n);
  for (std::size_t i = 0; i < y.n; ++i)
    for (std::size_t j = 0; j < y.n; ++j) c[i * y.n + j] = y(i, j);
  return c;
}

inline std::vector<Complex> injections(const std::vector<Complex>& y, std::size_t n, const std::vector<Complex>& v) {
  std::vector<Complex> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    Complex cur = 0.0;
    for (std::size_t j = 0; j < n; ++j) cur += y[i * n + j] * v[j];
    s[i] = v[i] * std::conj(cur);
  }
  return s;
}

inline std::vector<Complex> phasors(const Vector& vm, const Vector& va) {
  std::vector<Complex> v(vm.size());
  for (std::size_t i = 0; i < vm.size(); ++i) v[i] = std::polar(vm[i], va[i]);
  return v;
}

inline void flat_start(const Network& net, Vector& vm, Vector& va) {
  vm.assign(net.buses.size(), 1.0);
  va.assign(net.buses.size(), 0.0);
  for (std::size_t i = 0; i < net.buses.size(); ++i)
    if (net.buses[i].kind != BusKind::PQ) vm[i] = net.buses[i].v_setpoint;
}

inline double worst_mismatch(const std::vector<Complex>& s, const std::vector<Complex>& sched, const BusSets& sets) {
  double m = 0.0;
  for (std::size_t i : sets.nonslack) m = std::max(m, std::abs(s[i].real() - sched[i].real()));
  for (std::size_t i : sets.pq) m = std::max(m, std::abs(s[i].imag() - sched[i].imag()));
  return m;
}

inline PowerFlowSolution make_solution(const Network& net, Vector vm, Vector va, int iters, double mismatch) {
  PowerFlowSolution sol;
  sol.bus_ids.reserve(net.buses.size());
  for (const Bus& b : net.buses) sol.bus_ids.push_back(b.id);
  sol.vm = std::move(vm);
  sol.va = std::move(va);
  sol.converged = true;
  sol.iterations = iters;
  sol.max_mismatch = mismatch;
  return sol;
}

[[noreturn]] inline void diverged(const char* solver, int iters, double mismatch) {
  std::ostringstream os;
  os << solver << " power flow did not converge after " << iters << " iterations (mismatch " << mismatch << " pu)";
  throw PowerFlowError(os.str(), iters, mismatch);
}

}  // namespace detail

/// Full Newton-Raphson in polar coordinates from a flat start at the
/// set-points. Throws PowerFlowError on divergence or a singular Jacobian.
inline PowerFlowSolution solve_newton(const Network& net, const PowerFlowOptions& opt = {}) {
  require_valid(net);
  const std::size_t n = net.buses.size();
  const auto sets = detail::bus_sets(net);
  const auto ybus = detail::to_complex(build_ybus(net));
  const auto sched = detail::scheduled_injection(net);
  Vector vm, va;
  detail::flat_start(net, vm, va);

  const std::size_t npvpq = sets.nonslack.size();
  const std::size_t npq = sets.pq.size();
  const std::size_t dim = npvpq + npq;
  // Column position of a bus's angle / magnitude unknown, or npos.
  std::vector<std::size_t> ang_col(n, Network::npos), mag_col(n, Network::npos);
  for (std::size_t k = 0; k < npvpq; ++k) ang_col[sets.nonslack[k]] = k;
  for (std::size_t k = 0; k < npq; ++k) mag_col[sets.pq[k]] = npvpq + k;

  int iter = 0;
  for (;;) {
    const auto v = detail::phasors(vm, va);
    const auto s = detail::injections(ybus, n, v);
    const double mis = detail::worst_mismatch(s, sched, sets);
    if (mis <= opt.tolerance) return detail::make_solution(net, vm, va, iter, mis);
    if (iter >= opt.max_iterations || !std::isfinite(mis)) detail::diverged("newton", iter, mis);

    std::vector<Complex> current(n);
    for (std::size_t i = 0; i < n; ++i) {
      Complex c = 0.0;
      for (std::size_t j = 0; j < n; ++j) c += ybus[i * n + j] * v[j];
      current[i] = c;
    }
    // Rows: dP at non-slack buses, then dQ at PQ buses.
    DenseMatrix jac(dim, dim);
    Vector f(dim);
    auto fill_row = [&](std::size_t row, std::size_t i, bool real_part) {
      for (std::size_t j = 0; j < n; ++j) {
        const Complex yij = ybus[i * n + j];
        if (yij == Complex(0.0) && i != j) continue;
        const Complex vnorm_j = v[j] / vm[j];
        // dS_i/dVa_j and dS_i/dVm_j
        Complex ds_dva = Complex(0.0, 1.0) * v[i] * std::conj(-yij * v[j]);
        Complex ds_dvm = v[i] * std::conj(yij * vnorm_j);
        if (i == j) {
          ds_dva += Complex(0.0, 1.0) * v[i] * std::conj(current[i]);
          ds_dvm += std::conj(current[i]) * vnorm_j;
        }
        if (ang_col[j] != Network::npos) jac(row, ang_col[j]) = real_part ? ds_dva.real() : ds_dva.imag();
        if (mag_col[j] != Network::npos) jac(row, mag_col[j]) = real_part ? ds_dvm.real() : ds_dvm.imag();
      }
    };
    for (std::size_t k = 0; k < npvpq; ++k) {
      const std::size_t i = sets.nonslack[k];
      fill_row(k, i, true);
      f[k] = s[i].real() - sched[i].real();
    }
    for (std::size_t k = 0; k < npq; ++k) {
      const std::size_t i = sets.pq[k];
      fill_row(npvpq + k, i, false);
      f[npvpq + k] = s[i].imag() - sched[i].imag();
    }
    Vector dx;
    try {
      dx = LuFactorization(jac).solve(f);
    } catch (const SingularMatrixError& e) {
      throw PowerFlowError(std::string("newton: singular Jacobian: ") + e.what(), iter, mis);
    }
    for (std::size_t k = 0; k < npvpq; ++k) va[sets.nonslack[k]] -= dx[k];
    for (std::size_t k = 0; k < npq; ++k) vm[sets.pq[k]] -= dx[npvpq + k];
    ++iter;
  }
}

enum class FdlfScheme { XB, BX };

struct FdlfOptions {
  double tolerance = 1e-8;
  int max_iterations = 60;
  FdlfScheme scheme = FdlfScheme::XB;
};

/// Fast-decoupled load flow with constant B' (angles) and B'' (magnitudes).
inline PowerFlowSolution solve_fdlf(const Network& net, const FdlfOptions& opt = {}) {
  require_valid(net);
  const std::size_t n = net.buses.size();
  const auto sets = detail::bus_sets(net);
  const auto ybus = detail::to_complex(build_ybus(net));
  const auto sched = detail::scheduled_injection(net);
  Vector vm, va;
  detail::flat_start(net, vm, va);

  const bool xb = opt.scheme == FdlfScheme::XB;
  const DenseMatrix bp_all = build_bp_all(net, xb);
  const DenseMatrix bpp_all = build_bpp_all(net, xb ? BppVariant::Full : BppVariant::SeriesReactance);
  const DenseMatrix bp = bp_all.select(sets.nonslack, sets.nonslack);
  const DenseMatrix bpp = bpp_all.select(sets.pq, sets.pq);

  auto factor = [](const DenseMatrix& m, const char* name) {
    try {
      return LuFactorization(m);
    } catch (const SingularMatrixError& e) {
      throw PowerFlowError(std::string("fdlf: singular ") + name + ": " + e.what(), 0, 0.0);
    }
  };
  const LuFactorization lu_p = factor(bp, "B'");
  const bool has_pq = !sets.pq.empty();
  const LuFactorization lu_q = has_pq ? factor(bpp, "B''") : LuFactorization(DenseMatrix::identity(1));

  int iter = 0;
  for (;;) {
    auto s = detail::injections(ybus, n, detail::phasors(vm, va));
    double mis = detail::worst_mismatch(s, sched, sets);
    if (mis <= opt.tolerance) return detail::make_solution(net, vm, va, iter, mis);
    if (iter >= opt.max_iterations || !std::isfinite(mis)) detail::diverged("fdlf", iter, mis);

    Vector p(sets.nonslack.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      const std::size_t i = sets.nonslack[k];
      p[k] = (s[i].real() - sched[i].real()) / vm[i];
    }
    const Vector dva = lu_p.solve(p);
    for (std::size_t k = 0; k < p.size(); ++k) va[sets.nonslack[k]] -= dva[k];

    if (has_pq) {
      s = detail::injections(ybus, n, detail::phasors(vm, va));
      Vector q(sets.pq.size());
      for (std::size_t k = 0; k < q.size(); ++k) {
        const std::size_t i = sets.pq[k];
        q[k] = (s[i].imag() - sched[i].imag()) / vm[i];
      }
      const Vector dvm = lu_q.solve(q);
      for (std::size_t k = 0; k < q.size(); ++k) vm[sets.pq[k]] -= dvm[k];
    }
    ++iter;
  }
}

struct BusMismatch {
  Vector dp;  // scheduled minus injected, pu
  Vector dq;
};

/// Scheduled-minus-injected power at every bus, summed branch by branch.
///
/// Entries where the injection is free (slack P, slack/PV Q) are measured
/// against zero scheduled generation and carry no convergence meaning.
inline BusMismatch bus_mismatch(const Network& net, std::span<const double> vm, std::span<const double> va) {
  const std::size_t n = net.buses.size();
  if (vm.size() != n || va.size() != n) throw std::invalid_argument("bus_mismatch: dimension mismatch");
  std::vector<Complex> injected(n, Complex(0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const Bus& b = net.buses[i];
    injected[i] += vm[i] * vm[i] * Complex(b.g_shunt, -b.b_shunt) / net.base_mva;
  }
  for (const Branch& br : net.branches) {
    if (!br.in_service) continue;
    const std::size_t f = net.index_of(br.from_bus);
    const std::size_t t = net.index_of(br.to_bus);
    const Complex vf = std::polar(vm[f], va[f]);
    const Complex vt = std::polar(vm[t], va[t]);
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex half_charging(0.0, br.b_charging / 2.0);
    const Complex tap = std::polar(br.tap, br.shift * std::numbers::pi / 180.0);
    // Ideal transformer on the from side: vf / tap feeds the series element.
    const Complex vf_sec = vf / tap;
    const Complex i_series = ys * (vf_sec - vt);
    const Complex i_from = (i_series + half_charging * vf_sec) / std::conj(tap);
    const Complex i_to = -i_series + half_charging * vt;
    injected[f] += vf * std::conj(i_from);
    injected[t] += vt * std::conj(i_to);
  }
  const auto sched = detail::scheduled_injection(net);
  BusMismatch mm{Vector(n), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    mm.dp[i] = sched[i].real() - injected[i].real();
    mm.dq[i] = sched[i].imag() - injected[i].imag();
  }
  return mm;
}

/// Largest mismatch over the constrained quantities (P at non-slack buses,
/// Q at PQ buses).
inline double max_constrained_mismatch(const Network& net, const BusMismatch& mm) {
  double m = 0.0;
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    const BusKind k = net.buses[i].kind;
    if (k != BusKind::Slack) m = std::max(m, std::abs(mm.dp[i]));
    if (k == BusKind::PQ) m = std::max(m, std::abs(mm.dq[i]));
  }
  return m;
}

}  // namespace ovc
