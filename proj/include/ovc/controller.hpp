#pragma once

// Generator set-point control of load-bus voltages.
//
// Each iteration picks the out-of-limit load bus closest to the reference
// (the controlled bus, CB), builds N = A^T M A for a selector weight M on that
// bus, and moves the PV set-points along the dominant singular direction u1
// of N by alpha = dV_cb / sigma1, so the linear model lands V_cb on v_ref.
// The sensitivity baseline (SVC) instead moves only the single PV bus the CB
// is most sensitive to.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovc/netmodel.hpp"
#include "ovc/numerics.hpp"
#include "ovc/powerflow.hpp"
#include "ovc/sensitivity.hpp"

namespace ovc {

class ControlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The controlled bus cannot be moved from the PV set (sigma1 ~ 0).
class UncontrollableError : public ControlError {
 public:
  using ControlError::ControlError;
};

enum class EvaluationMode { PowerFlow, Linear };
enum class PowerFlowSolver { Newton, Fdlf };
enum class ControlMethod { Ovc, Svc };
enum class Outcome { Resolved, IterationCapHit, Infeasible, Oscillating };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Resolved: return "Resolved";
    case Outcome::IterationCapHit: return "IterationCapHit";
    case Outcome::Infeasible: return "Infeasible";
    case Outcome::Oscillating: return "Oscillating";
  }
  return "?";
}
inline const char* to_string(ControlMethod m) { return m == ControlMethod::Ovc ? "ovc" : "svc"; }

namespace control_tol {
inline constexpr double kMinSigma = 1e-10;
inline constexpr double kDeviationTie = 1e-12;
}  // namespace control_tol

struct ControlConfig {
  double v_ref = 1.0;
  double v_min = 0.9;
  double v_max = 1.1;
  int max_iterations = 20;
  EvaluationMode evaluation_mode = EvaluationMode::PowerFlow;
  bool clamp_pv = true;
  double pf_tolerance = 1e-8;
  PowerFlowSolver solver = PowerFlowSolver::Newton;
  SensitivityOptions sensitivity{};

  void validate() const {
    if (!(v_min < v_ref && v_ref < v_max)) throw ControlError("control config: need v_min < v_ref < v_max");
    if (max_iterations < 0) throw ControlError("control config: max_iterations must be non-negative");
    if (!(pf_tolerance > 0.0)) throw ControlError("control config: pf_tolerance must be positive");
  }
};

struct CriticalBus {
  int bus = 0;
  double vm = 0.0;
  friend bool operator==(const CriticalBus&, const CriticalBus&) = default;
};

struct IterationRecord {
  int index = 0;
  ControlMethod method = ControlMethod::Ovc;
  std::vector<CriticalBus> critical_buses;
  int controlled_bus = 0;
  double dv_cb_target = 0.0;
  double sigma1 = 0.0;  // sqrt of the largest singular value of N
  Vector u1;            // over the PV coordinates
  double alpha = 0.0;
  Vector dv_pv_unclamped;  // alpha * u1
  Vector dv_pv;            // after set-point clamping
  std::vector<int> clamped;
  double j_predicted = 0.0;  // alpha^2 sigma1^2
  double j_achieved = 0.0;   // dV_pq^T M dV_pq, measured
  Vector vm_after;           // storage order
};

struct ControlTrace {
  ControlMethod method = ControlMethod::Ovc;
  ControlConfig config;
  std::vector<int> bus_ids;  // storage order
  std::vector<BusKind> bus_kinds;
  std::vector<int> pv_ids;   // control coordinates
  PowerFlowSolution initial_solution;
  std::vector<IterationRecord> iterations;
  Outcome outcome = Outcome::Resolved;
  double j_achieved_total = 0.0;
  Vector final_setpoints;  // over pv_ids

  const Vector& final_vm() const {
    return iterations.empty() ? initial_solution.vm : iterations.back().vm_after;
  }
  double final_vm_of(int bus_id) const {
    for (std::size_t i = 0; i < bus_ids.size(); ++i)
      if (bus_ids[i] == bus_id) return final_vm()[i];
    throw std::out_of_range("unknown bus id " + std::to_string(bus_id));
  }
};

/// Load buses outside [v_min, v_max], ascending by id.
inline std::vector<CriticalBus> find_critical_buses(const PowerFlowSolution& sol, const ControlConfig& cfg,
                                                    const BusPartition& partition) {
  if (!sol.converged) throw ControlError("find_critical_buses: power flow solution is not converged");
  std::vector<CriticalBus> out;
  for (std::size_t i : partition.pq_idx) {
    const double v = sol.vm.at(i);
    if (v < cfg.v_min || v > cfg.v_max) out.push_back({sol.bus_ids.at(i), v});
  }
  return out;
}

/// Critical bus with least deviation from v_ref; ties go to the lowest id.
inline int select_controlled_bus(const std::vector<CriticalBus>& critical, const ControlConfig& cfg) {
  if (critical.empty()) throw ControlError("select_controlled_bus: no critical buses");
  const CriticalBus* best = &critical.front();
  for (const CriticalBus& c : critical) {
    const double d = std::abs(c.vm - cfg.v_ref);
    const double bd = std::abs(best->vm - cfg.v_ref);
    if (d < bd - control_tol::kDeviationTie || (std::abs(d - bd) <= control_tol::kDeviationTie && c.bus < best->bus))
      best = &c;
  }
  return best->bus;
}

/// PQ x PQ diagonal selector with a single 1 at the controlled bus.
inline DenseMatrix build_weight_matrix(int cb, const BusPartition& partition) {
  const auto it = partition.ext_to_int.find(cb);
  if (it == partition.ext_to_int.end()) throw ControlError("bus " + std::to_string(cb) + " does not exist");
  const auto pos = std::find(partition.pq_idx.begin(), partition.pq_idx.end(), it->second);
  if (pos == partition.pq_idx.end()) throw ControlError("bus " + std::to_string(cb) + " is not a load (PQ) bus");
  DenseMatrix m(partition.pq_idx.size(), partition.pq_idx.size());
  const auto k = static_cast<std::size_t>(pos - partition.pq_idx.begin());
  m(k, k) = 1.0;
  return m;
}

/// N = A^T M A over the PV coordinates, symmetrized.
inline DenseMatrix build_n_matrix(const SensitivityModel& model, const DenseMatrix& m) {
  if (m.rows() != model.pq_count() || m.cols() != model.pq_count())
    throw ControlError("build_n_matrix: weight matrix must be " + std::to_string(model.pq_count()) + "x" +
                       std::to_string(model.pq_count()));
  return symmetrized(model.a_ctrl.transpose() * m * model.a_ctrl);
}

/// dV_pq^T M dV_pq.
inline double performance_index(const DenseMatrix& m, std::span<const double> dv_pq) {
  if (m.rows() != dv_pq.size() || m.cols() != dv_pq.size())
    throw ControlError("performance_index: dimension mismatch");
  return dot(dv_pq, m * dv_pq);
}

namespace detail {

inline Vector pv_setpoints(const SensitivityModel& model, const PowerFlowSolution& sol) {
  Vector v;
  v.reserve(model.pv_count());
  for (std::size_t i : model.partition.pv_idx) v.push_back(sol.vm.at(i));
  return v;
}

// Applies the set-point update with optional clamping and fills the
// post-clamp fields of the record.
inline void finish_step(IterationRecord& rec, const SensitivityModel& model, const PowerFlowSolution& sol,
                        const ControlConfig& cfg) {
  const Vector current = pv_setpoints(model, sol);
  rec.dv_pv = rec.dv_pv_unclamped;
  rec.clamped.clear();
  if (!cfg.clamp_pv) return;
  for (std::size_t k = 0; k < current.size(); ++k) {
    const double target = current[k] + rec.dv_pv_unclamped[k];
    const double bounded = std::clamp(target, cfg.v_min, cfg.v_max);
    if (bounded != target) rec.clamped.push_back(model.pv_ids[k]);
    rec.dv_pv[k] = bounded - current[k];
  }
}

inline double target_change(const SensitivityModel& model, const PowerFlowSolution& sol, int cb,
                            const ControlConfig& cfg) {
  const std::size_t row = model.pq_position(cb);
  return cfg.v_ref - sol.vm.at(model.partition.pq_idx[row]);
}

}  // namespace detail

/// One optimal-control step for controlled bus `cb` under weight `m`.
/// The returned record has no index, critical list or measured voltages.
inline IterationRecord ovc_step(const SensitivityModel& model, const PowerFlowSolution& sol, int cb,
                                const ControlConfig& cfg, const DenseMatrix& m) {
  const std::size_t row = model.pq_position(cb);
  IterationRecord rec;
  rec.method = ControlMethod::Ovc;
  rec.controlled_bus = cb;
  rec.dv_cb_target = detail::target_change(model, sol, cb, cfg);

  const DenseMatrix n = build_n_matrix(model, m);
  TopSingularPair top = top_singular_pair(n);
  rec.sigma1 = std::sqrt(std::max(top.sigma1_sq, 0.0));
  if (!(rec.sigma1 >= control_tol::kMinSigma))
    throw UncontrollableError("bus " + std::to_string(cb) + " cannot be moved from the voltage-controlled buses");
  rec.u1 = std::move(top.u1);
  // Orient u1 so a positive alpha raises the controlled bus.
  double gain = dot(model.a_ctrl.row(row), rec.u1);
  if (gain < 0.0) {
    for (double& x : rec.u1) x = -x;
    gain = -gain;
  }
  if (!(gain >= control_tol::kMinSigma))
    throw UncontrollableError("bus " + std::to_string(cb) + " does not respond to the dominant direction");

  rec.alpha = rec.dv_cb_target / rec.sigma1;
  // gain == sigma1 for the selector weight; the ratio keeps the step
  // independent of how M is scaled.
  rec.dv_pv_unclamped = scaled(rec.u1, rec.alpha * rec.sigma1 / gain);
  rec.j_predicted = rec.alpha * rec.alpha * rec.sigma1 * rec.sigma1;
  detail::finish_step(rec, model, sol, cfg);
  return rec;
}

inline IterationRecord ovc_step(const SensitivityModel& model, const PowerFlowSolution& sol, int cb,
                                const ControlConfig& cfg) {
  return ovc_step(model, sol, cb, cfg, build_weight_matrix(cb, model.partition));
}

/// Baseline: move only the PV set-point the controlled bus is most sensitive to.
inline IterationRecord svc_step(const SensitivityModel& model, const PowerFlowSolution& sol, int cb,
                                const ControlConfig& cfg) {
  const std::size_t row = model.pq_position(cb);
  IterationRecord rec;
  rec.method = ControlMethod::Svc;
  rec.controlled_bus = cb;
  rec.dv_cb_target = detail::target_change(model, sol, cb, cfg);

  const auto sens = model.a_ctrl.row(row);
  std::size_t best = 0;
  for (std::size_t j = 1; j < sens.size(); ++j)
    if (std::abs(sens[j]) > std::abs(sens[best])) best = j;
  if (!(std::abs(sens[best]) >= control_tol::kMinSigma))
    throw UncontrollableError("bus " + std::to_string(cb) + " has no sensitivity to any voltage-controlled bus");

  rec.sigma1 = std::abs(sens[best]);
  rec.u1.assign(sens.size(), 0.0);
  rec.u1[best] = sens[best] > 0.0 ? 1.0 : -1.0;
  rec.alpha = rec.dv_cb_target / rec.sigma1;
  rec.dv_pv_unclamped = scaled(rec.u1, rec.alpha);
  rec.j_predicted = rec.alpha * rec.alpha * rec.sigma1 * rec.sigma1;
  detail::finish_step(rec, model, sol, cfg);
  return rec;
}

/// Power flow with the configured solver.
inline PowerFlowSolution evaluate_power_flow(const Network& net, const ControlConfig& cfg) {
  if (cfg.solver == PowerFlowSolver::Fdlf) {
    FdlfOptions o;
    o.tolerance = cfg.pf_tolerance;
    return solve_fdlf(net, o);
  }
  PowerFlowOptions o;
  o.tolerance = cfg.pf_tolerance;
  return solve_newton(net, o);
}

namespace detail {

// Stops conflict loops: a (controlled bus, direction) pair seen more than
// three times since the critical set last reached a new minimum size.
class OscillationGuard {
 public:
  bool observe(int cb, double dv_cb, std::size_t critical_count) {
    if (critical_count < min_count_) {
      min_count_ = critical_count;
      seen_.clear();
    }
    const int sign = dv_cb > 0.0 ? 1 : (dv_cb < 0.0 ? -1 : 0);
    return ++seen_[{cb, sign}] > 3;
  }

 private:
  std::size_t min_count_ = static_cast<std::size_t>(-1);
  std::map<std::pair<int, int>, int> seen_;
};

}  // namespace detail

/// Iterative control loop: evaluate, find critical buses, control the one
/// closest to the reference, update set-points, repeat.
inline ControlTrace run_control(const Network& net, const ControlConfig& cfg, ControlMethod method) {
  cfg.validate();
  require_valid(net);
  const SensitivityModel model = build_model(net, cfg.sensitivity);

  ControlTrace trace;
  trace.method = method;
  trace.config = cfg;
  trace.pv_ids = model.pv_ids;
  for (const Bus& b : net.buses) {
    trace.bus_ids.push_back(b.id);
    trace.bus_kinds.push_back(b.kind);
  }

  Network current = net;
  PowerFlowSolution sol = evaluate_power_flow(current, cfg);
  trace.initial_solution = sol;
  detail::OscillationGuard guard;

  for (int it = 1;; ++it) {
    const std::vector<CriticalBus> critical = find_critical_buses(sol, cfg, model.partition);
    if (critical.empty()) {
      trace.outcome = Outcome::Resolved;
      break;
    }
    if (it > cfg.max_iterations) {
      trace.outcome = Outcome::IterationCapHit;
      break;
    }
    const int cb = select_controlled_bus(critical, cfg);
    if (guard.observe(cb, detail::target_change(model, sol, cb, cfg), critical.size())) {
      trace.outcome = Outcome::Oscillating;
      break;
    }

    IterationRecord rec;
    try {
      rec = method == ControlMethod::Ovc ? ovc_step(model, sol, cb, cfg) : svc_step(model, sol, cb, cfg);
    } catch (const UncontrollableError&) {
      trace.outcome = Outcome::Infeasible;
      break;
    }
    rec.index = it;
    rec.critical_buses = critical;

    const Vector before = detail::pv_setpoints(model, sol);
    for (std::size_t k = 0; k < model.pv_count(); ++k)
      current = set_bus_setpoint(std::move(current), model.pv_ids[k], before[k] + rec.dv_pv[k]);

    PowerFlowSolution next;
    if (cfg.evaluation_mode == EvaluationMode::PowerFlow) {
      next = evaluate_power_flow(current, cfg);
    } else {
      next = sol;
      next.iterations = 0;
      const Vector dv_pq = predict_dvpq(model, rec.dv_pv);
      for (std::size_t k = 0; k < model.pv_count(); ++k) next.vm[model.partition.pv_idx[k]] = before[k] + rec.dv_pv[k];
      for (std::size_t k = 0; k < model.pq_count(); ++k) next.vm[model.partition.pq_idx[k]] += dv_pq[k];
    }

    Vector dv_pq_achieved(model.pq_count());
    for (std::size_t k = 0; k < model.pq_count(); ++k) {
      const std::size_t i = model.partition.pq_idx[k];
      dv_pq_achieved[k] = next.vm[i] - sol.vm[i];
    }
    rec.j_achieved = performance_index(build_weight_matrix(cb, model.partition), dv_pq_achieved);
    rec.vm_after = next.vm;
    trace.j_achieved_total += rec.j_achieved;
    trace.iterations.push_back(std::move(rec));
    sol = std::move(next);
  }
  trace.final_setpoints = detail::pv_setpoints(model, sol);
  return trace;
}

inline ControlTrace ovc_run(const Network& net, const ControlConfig& cfg = {}) {
  return run_control(net, cfg, ControlMethod::Ovc);
}

inline ControlTrace svc_run(const Network& net, const ControlConfig& cfg = {}) {
  return run_control(net, cfg, ControlMethod::Svc);
}

struct ComparisonReport {
  int controlled_bus = 0;
  double j_ovc = 0.0;  // achieved, first iteration
  double j_svc = 0.0;
  ControlTrace ovc;
  ControlTrace svc;
};

/// First-iteration performance index of both methods from the same start.
inline ComparisonReport compare_ovc_svc(const Network& net, const ControlConfig& cfg = {}) {
  ComparisonReport r;
  r.ovc = ovc_run(net, cfg);
  r.svc = svc_run(net, cfg);
  if (r.ovc.iterations.empty() || r.svc.iterations.empty())
    throw ControlError("compare_ovc_svc: no critical bus after the initial power flow (or it is uncontrollable)");
  const IterationRecord& a = r.ovc.iterations.front();
  const IterationRecord& b = r.svc.iterations.front();
  if (a.controlled_bus != b.controlled_bus) throw ControlError("compare_ovc_svc: methods started on different buses");
  r.controlled_bus = a.controlled_bus;
  r.j_ovc = a.j_achieved;
  r.j_svc = b.j_achieved;
  return r;
}

}  // namespace ovc
