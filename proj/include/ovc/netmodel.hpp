#pragma once

// Per-unit network model: buses, branches, generators, bus classification
// and load disturbances.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovc {

enum class BusKind { Slack, PV, PQ };

inline const char* to_string(BusKind k) {
  switch (k) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "pv";
    case BusKind::PQ: return "pq";
  }
  return "?";
}

struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double p_load = 0.0;   // MW
  double q_load = 0.0;   // MVAr, positive = inductive
  double g_shunt = 0.0;  // MW at 1 pu
  double b_shunt = 0.0;  // MVAr at 1 pu
  double v_setpoint = 1.0;
  double v_min = 0.9;
  double v_max = 1.1;

  friend bool operator==(const Bus&, const Bus&) = default;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;
  double shift = 0.0;  // degrees
  bool in_service = true;

  friend bool operator==(const Branch&, const Branch&) = default;
};

struct Generator {
  int bus = 0;
  double p_gen = 0.0;  // MW
  double v_setpoint = 1.0;
  bool in_service = true;

  friend bool operator==(const Generator&, const Generator&) = default;
};

struct Network {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;

  friend bool operator==(const Network&, const Network&) = default;

  /// Internal index of an external bus id, or npos.
  std::size_t index_of(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    return npos;
  }
  const Bus& bus(int id) const {
    const std::size_t i = index_of(id);
    if (i == npos) throw std::out_of_range("unknown bus id " + std::to_string(id));
    return buses[i];
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Violation {
  std::string code;  // e.g. "multiple-slack", "dangling-reference"
  std::string message;
};

using ValidationReport = std::vector<Violation>;

inline std::string describe(const ValidationReport& report) {
  std::ostringstream os;
  for (std::size_t i = 0; i < report.size(); ++i) {
    if (i) os << "; ";
    os << report[i].code << ": " << report[i].message;
  }
  return os.str();
}

namespace detail {
inline bool has_in_service_generator(const Network& net, int bus_id) {
  return std::any_of(net.generators.begin(), net.generators.end(),
                     [&](const Generator& g) { return g.in_service && g.bus == bus_id; });
}
}  // namespace detail

/// Checks every structural invariant of the model; an empty report means valid.
inline ValidationReport validate_network(const Network& net) {
  ValidationReport out;
  auto add = [&](std::string code, std::string msg) { out.push_back({std::move(code), std::move(msg)}); };

  if (!(net.base_mva > 0.0) || !std::isfinite(net.base_mva)) add("base-mva", "base_mva must be positive");
  if (net.buses.empty()) {
    add("empty", "network has no buses");
    return out;
  }

  std::set<int> ids;
  int slack_count = 0;
  for (const Bus& b : net.buses) {
    const std::string tag = "bus " + std::to_string(b.id);
    if (b.id <= 0) add("bus-id", tag + ": id must be positive");
    if (!ids.insert(b.id).second) add("duplicate-bus", tag + ": id appears more than once");
    if (b.kind == BusKind::Slack) ++slack_count;
    if (!(b.v_min > 0.0)) add("voltage-limits", tag + ": v_min must be positive");
    if (!(b.v_min < b.v_max)) add("voltage-limits", tag + ": v_min must be below v_max");
    if (b.kind != BusKind::PQ && !(b.v_setpoint > 0.0 && b.v_setpoint < 2.0))
      add("setpoint", tag + ": set-point outside (0, 2) pu");
    for (double v : {b.p_load, b.q_load, b.g_shunt, b.b_shunt, b.v_setpoint})
      if (!std::isfinite(v)) {
        add("non-finite", tag + ": non-finite field");
        break;
      }
  }
  if (slack_count == 0) add("no-slack", "network has no slack bus");
  if (slack_count > 1) add("multiple-slack", "network has " + std::to_string(slack_count) + " slack buses");

  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const Branch& br = net.branches[k];
    const std::string tag = "branch " + std::to_string(k + 1) + " (" + std::to_string(br.from_bus) + "-" +
                            std::to_string(br.to_bus) + ")";
    if (!ids.count(br.from_bus) || !ids.count(br.to_bus))
      add("dangling-reference", tag + ": references a nonexistent bus");
    if (br.in_service && br.r * br.r + br.x * br.x <= 0.0) add("zero-impedance", tag + ": zero impedance");
    if (!(br.tap > 0.0)) add("tap", tag + ": tap ratio must be positive");
    if (br.from_bus == br.to_bus) add("self-loop", tag + ": connects a bus to itself");
  }
  for (std::size_t k = 0; k < net.generators.size(); ++k) {
    const Generator& g = net.generators[k];
    if (!ids.count(g.bus))
      add("dangling-reference", "generator " + std::to_string(k + 1) + ": references nonexistent bus " +
                                    std::to_string(g.bus));
  }
  for (const Bus& b : net.buses) {
    const bool has_gen = detail::has_in_service_generator(net, b.id);
    if (b.kind != BusKind::PQ && !has_gen)
      add("missing-generator", "bus " + std::to_string(b.id) + ": voltage-controlled bus without a generator");
    if (b.kind == BusKind::PQ && has_gen)
      add("unexpected-generator", "bus " + std::to_string(b.id) + ": load bus hosts an in-service generator");
  }

  // Connectivity over in-service branches.
  std::map<int, std::vector<int>> adj;
  for (const Branch& br : net.branches)
    if (br.in_service && ids.count(br.from_bus) && ids.count(br.to_bus)) {
      adj[br.from_bus].push_back(br.to_bus);
      adj[br.to_bus].push_back(br.from_bus);
    }
  std::set<int> seen{net.buses.front().id};
  std::queue<int> todo;
  todo.push(net.buses.front().id);
  while (!todo.empty()) {
    const int cur = todo.front();
    todo.pop();
    for (int nb : adj[cur])
      if (seen.insert(nb).second) todo.push(nb);
  }
  if (seen.size() != ids.size())
    add("islanded", std::to_string(ids.size() - seen.size()) + " bus(es) not connected to bus " +
                        std::to_string(net.buses.front().id));
  return out;
}

inline void require_valid(const Network& net) {
  const ValidationReport report = validate_network(net);
  if (!report.empty()) throw NetworkError("invalid network: " + describe(report));
}

/// Index sets over the internal (storage-order) bus indices.
///
/// `pv_idx` holds every voltage-controlled bus, the slack included, because
/// the slack magnitude is itself a control variable. Both lists ascend by
/// external bus id.
struct BusPartition {
  std::size_t slack_idx = 0;
  std::vector<std::size_t> pv_idx;
  std::vector<std::size_t> pq_idx;
  std::map<int, std::size_t> ext_to_int;

  friend bool operator==(const BusPartition&, const BusPartition&) = default;

  std::size_t size() const noexcept { return pv_idx.size() + pq_idx.size(); }
};

inline BusPartition partition_buses(const Network& net) {
  require_valid(net);
  BusPartition p;
  std::vector<std::size_t> order(net.buses.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return net.buses[a].id < net.buses[b].id; });
  for (std::size_t i : order) {
    const Bus& b = net.buses[i];
    p.ext_to_int[b.id] = i;
    if (b.kind == BusKind::PQ) {
      p.pq_idx.push_back(i);
    } else {
      if (b.kind == BusKind::Slack) p.slack_idx = i;
      p.pv_idx.push_back(i);
    }
  }
  return p;
}

/// Re-derives bus kinds from generator placement: the slack keeps its role,
/// other buses with an in-service generator become PV, the rest PQ.
inline Network classify_buses(Network net) {
  for (Bus& b : net.buses) {
    if (b.kind == BusKind::Slack) continue;
    b.kind = detail::has_in_service_generator(net, b.id) ? BusKind::PV : BusKind::PQ;
  }
  return net;
}

/// Adds `dq_mvar` to the reactive load of one bus (positive = inductive).
inline Network apply_disturbance(Network net, int bus_id, double dq_mvar) {
  const std::size_t i = net.index_of(bus_id);
  if (i == Network::npos) throw NetworkError("apply_disturbance: unknown bus id " + std::to_string(bus_id));
  net.buses[i].q_load += dq_mvar;
  return net;
}

inline Network set_bus_setpoint(Network net, int bus_id, double v) {
  const std::size_t i = net.index_of(bus_id);
  if (i == Network::npos) throw NetworkError("set_bus_setpoint: unknown bus id " + std::to_string(bus_id));
  net.buses[i].v_setpoint = v;
  for (Generator& g : net.generators)
    if (g.bus == bus_id) g.v_setpoint = v;
  return net;
}

/// Sets every slack/PV bus and every generator to the same voltage set-point.
inline Network set_flat_setpoints(Network net, double v) {
  if (!(v > 0.0 && v < 2.0)) throw NetworkError("set_flat_setpoints: set-point must lie in (0, 2) pu");
  for (Bus& b : net.buses)
    if (b.kind != BusKind::PQ) b.v_setpoint = v;
  for (Generator& g : net.generators) g.v_setpoint = v;
  return net;
}

}  // namespace ovc
