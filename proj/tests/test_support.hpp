#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "ovc/ovc.hpp"

#ifndef OVC_TEST_DATA_DIR
#define OVC_TEST_DATA_DIR "data"
#endif

namespace ovc::testing {

inline Network load_bundled(const std::string& name) { return load_case(std::string(OVC_TEST_DATA_DIR) + "/" + name + ".m"); }

inline Bus make_bus(int id, BusKind kind, double q_load = 0.0) {
  Bus b;
  b.id = id;
  b.kind = kind;
  b.q_load = q_load;
  return b;
}

inline Branch make_line(int from, int to, double x, double r = 0.0) {
  Branch br;
  br.from_bus = from;
  br.to_bus = to;
  br.r = r;
  br.x = x;
  return br;
}

inline Generator make_gen(int bus, double v = 1.0) {
  Generator g;
  g.bus = bus;
  g.v_setpoint = v;
  return g;
}

// Slack at bus 1 feeding a PQ bus 2 over a lossless x = 0.1 line.
inline Network two_bus(double q_load_mvar = 0.0) {
  Network net;
  net.buses = {make_bus(1, BusKind::Slack), make_bus(2, BusKind::PQ, q_load_mvar)};
  net.branches = {make_line(1, 2, 0.1)};
  net.generators = {make_gen(1)};
  return net;
}

// Lossless triangle: b12 = 10, b23 = 5, b13 = 4; slack 1, PV 2, PQ 3.
inline Network three_bus() {
  Network net;
  net.buses = {make_bus(1, BusKind::Slack), make_bus(2, BusKind::PV), make_bus(3, BusKind::PQ)};
  net.branches = {make_line(1, 2, 0.1), make_line(2, 3, 0.2), make_line(1, 3, 0.25)};
  net.generators = {make_gen(1), make_gen(2)};
  return net;
}

// The reproduction scenarios.
inline Network scenario_9() { return apply_disturbance(set_flat_setpoints(load_bundled("case9"), 1.0), 9, 70.0); }
inline Network scenario_14() { return apply_disturbance(load_bundled("case14"), 10, -46.4); }
inline Network scenario_30() {
  return apply_disturbance(apply_disturbance(load_bundled("case30"), 8, 90.0), 25, -100.0);
}
// Opposite-direction violations at buses 7 (capacitive) and 14 (inductive).
inline Network scenario_conflict() {
  return apply_disturbance(apply_disturbance(set_flat_setpoints(load_bundled("case14"), 1.0), 7, -200.0), 14, 70.0);
}

struct FiniteDifferenceResult {
  double max_relative = 0.0;  // ||measured - predicted||_inf / ||predicted||_inf
  double max_absolute = 0.0;  // ||measured - predicted||_inf
};

// Moves the PV set-points by eps along random unit directions, re-solves the
// power flow and compares the PQ voltage change with a_ctrl * dv.
inline FiniteDifferenceResult finite_difference_check(const Network& net, const SensitivityModel& model, double eps,
                                                      int directions, unsigned seed) {
  const PowerFlowSolution base = solve_newton(net);
  std::mt19937 rng(seed);
  std::normal_distribution<double> normal;
  FiniteDifferenceResult r;
  for (int d = 0; d < directions; ++d) {
    Vector dir(model.pv_count());
    for (double& x : dir) x = normal(rng);
    const double n = norm2(dir);
    for (double& x : dir) x *= eps / n;
    Network moved = net;
    for (std::size_t k = 0; k < dir.size(); ++k)
      moved = set_bus_setpoint(std::move(moved), model.pv_ids[k], base.vm[model.partition.pv_idx[k]] + dir[k]);
    const PowerFlowSolution after = solve_newton(moved);
    const Vector predicted = predict_dvpq(model, dir);
    double err = 0.0;
    for (std::size_t k = 0; k < model.pq_count(); ++k) {
      const std::size_t i = model.partition.pq_idx[k];
      err = std::max(err, std::abs(after.vm[i] - base.vm[i] - predicted[k]));
    }
    r.max_absolute = std::max(r.max_absolute, err);
    r.max_relative = std::max(r.max_relative, err / norm_inf(predicted));
  }
  return r;
}

}  // namespace ovc::testing
