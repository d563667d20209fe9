#pragma once

// Q-V sensitivity model derived from the fast-decoupled B'' matrix:
//
//   [dV_pv]   [S11 S12] [dQ_pv]
//   [dV_pq] = [S21 S22] [dQ_pq],   S = (B'')^-1
//
// which gives dV_pq = A dV_pv + D dQ_pq with A = S21 S11^-1 (the control
// matrix) and D = S22 - S21 S11^-1 S12 (the load-disturbance gain).

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovc/netmodel.hpp"
#include "ovc/numerics.hpp"
#include "ovc/powerflow.hpp"

namespace ovc {

class SensitivityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whether the slack bus magnitude is one of the control coordinates.
enum class SlackCoordinate { Included, Excluded };

struct SensitivityOptions {
  BppVariant bpp = BppVariant::SeriesReactance;
  SlackCoordinate slack = SlackCoordinate::Included;
};

/// The partition restricted to the coordinates the model actually uses.
inline BusPartition model_partition(const Network& net, SlackCoordinate slack) {
  BusPartition p = partition_buses(net);
  if (slack == SlackCoordinate::Excluded) std::erase(p.pv_idx, p.slack_idx);
  return p;
}

/// B'' over the voltage-magnitude coordinates, PV block first then PQ, each in
/// partition order.
inline DenseMatrix build_bpp(const Network& net, const BusPartition& partition,
                             BppVariant variant = BppVariant::SeriesReactance) {
  std::vector<std::size_t> coords = partition.pv_idx;
  coords.insert(coords.end(), partition.pq_idx.begin(), partition.pq_idx.end());
  return build_bpp_all(net, variant).select(coords, coords);
}

struct SensitivityModel {
  DenseMatrix s_vq;
  DenseMatrix s11, s12, s21, s22;
  DenseMatrix a_ctrl;  // PQ x PV
  DenseMatrix d_gain;  // PQ x PQ
  BusPartition partition;
  std::vector<int> pv_ids;  // external ids of the control coordinates
  std::vector<int> pq_ids;
  SensitivityOptions options;

  std::size_t pv_count() const noexcept { return pv_ids.size(); }
  std::size_t pq_count() const noexcept { return pq_ids.size(); }

  /// Row of a PQ bus in the PQ block, or throws.
  std::size_t pq_position(int bus_id) const {
    for (std::size_t k = 0; k < pq_ids.size(); ++k)
      if (pq_ids[k] == bus_id) return k;
    throw SensitivityError("bus " + std::to_string(bus_id) + " is not a load (PQ) bus");
  }
  std::size_t pv_position(int bus_id) const {
    for (std::size_t k = 0; k < pv_ids.size(); ++k)
      if (pv_ids[k] == bus_id) return k;
    throw SensitivityError("bus " + std::to_string(bus_id) + " is not a control (PV) coordinate");
  }
};

namespace detail {
inline std::vector<std::size_t> iota_range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> r;
  for (std::size_t i = from; i < to; ++i) r.push_back(i);
  return r;
}

// Cheap 1-norm condition estimate through the explicit inverse.
inline double condition_1(const DenseMatrix& a, const DenseMatrix& inv) {
  return a.transpose().norm_inf() * inv.transpose().norm_inf();
}
}  // namespace detail

inline SensitivityModel build_model(const Network& net, const SensitivityOptions& opt = {}) {
  SensitivityModel m;
  m.options = opt;
  m.partition = model_partition(net, opt.slack);
  for (std::size_t i : m.partition.pv_idx) m.pv_ids.push_back(net.buses[i].id);
  for (std::size_t i : m.partition.pq_idx) m.pq_ids.push_back(net.buses[i].id);
  if (m.pv_ids.empty()) throw SensitivityError("network has no voltage-controlled coordinates");

  const DenseMatrix bpp = build_bpp(net, m.partition, opt.bpp);
  try {
    m.s_vq = invert(bpp);
  } catch (const SingularMatrixError& e) {
    throw SensitivityError(std::string("B'' is singular (isolated bus or shunt-free network with slack "
                                       "coordinate): ") +
                           e.what());
  }

  const std::size_t npv = m.pv_count();
  const std::size_t nall = npv + m.pq_count();
  const auto pv = detail::iota_range(0, npv);
  const auto pq = detail::iota_range(npv, nall);
  m.s11 = m.s_vq.select(pv, pv);
  m.s12 = m.s_vq.select(pv, pq);
  m.s21 = m.s_vq.select(pq, pv);
  m.s22 = m.s_vq.select(pq, pq);

  DenseMatrix s11_inv;
  try {
    s11_inv = invert(m.s11);
  } catch (const SingularMatrixError& e) {
    std::ostringstream os;
    os << "S11 is singular: " << e.what();
    throw SensitivityError(os.str());
  }
  const double cond = detail::condition_1(m.s11, s11_inv);
  if (!std::isfinite(cond) || cond > 1e14) {
    std::ostringstream os;
    os << "S11 is numerically singular (condition estimate " << cond << ")";
    throw SensitivityError(os.str());
  }
  m.a_ctrl = m.s21 * s11_inv;
  m.d_gain = m.s22 - m.a_ctrl * m.s12;
  return m;
}

/// Linearized load-voltage change for a set-point move, disturbance neglected.
inline Vector predict_dvpq(const SensitivityModel& model, std::span<const double> dv_pv) {
  if (dv_pv.size() != model.pv_count())
    throw SensitivityError("predict_dvpq: expected " + std::to_string(model.pv_count()) + " PV entries, got " +
                           std::to_string(dv_pv.size()));
  return model.a_ctrl * dv_pv;
}

}  // namespace ovc
