#pragma once

// Case ingestion (MATPOWER-style `.m` subset and a native JSON schema) and
// result serialization (trace CSV / JSON).

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ovc/controller.hpp"
#include "ovc/netmodel.hpp"

namespace ovc {

class CaseError : public std::runtime_error {
 public:
  explicit CaseError(const std::string& what, int line = 0, int column = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                                          what
                                    : what),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

enum class CaseFormat { MatpowerM, NativeJson };

struct CaseSource {
  CaseFormat format = CaseFormat::MatpowerM;
  std::string raw_text;
};

namespace detail {

struct NumericTable {
  std::vector<std::vector<double>> rows;
  int line = 0;
};

class MatpowerReader {
 public:
  explicit MatpowerReader(std::string_view text) : text_(text) {}

  std::optional<double> base_mva;
  std::map<std::string, NumericTable> tables;
  std::vector<std::string> warnings;

  void parse() {
    for (;;) {
      skip_space_and_comments(true);
      if (eof()) break;
      if (peek_word() == "function") {
        skip_line();
        continue;
      }
      statement();
    }
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;

  bool eof() const { return pos_ >= text_.size(); }
  char peek(std::size_t ahead = 0) const { return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0'; }
  void advance() {
    if (eof()) return;
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  [[noreturn]] void fail(const std::string& msg) const { throw CaseError(msg, line_, col_); }

  void skip_line() {
    while (!eof() && peek() != '\n') advance();
  }
  void skip_space_and_comments(bool newlines) {
    while (!eof()) {
      const char c = peek();
      if (c == '%') {
        skip_line();
      } else if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
        advance();
      } else if (c == '.' && peek(1) == '.' && peek(2) == '.') {
        skip_line();  // continuation
        if (!eof()) advance();
      } else {
        break;
      }
    }
  }
  std::string_view peek_word() const {
    std::size_t e = pos_;
    while (e < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[e])) || text_[e] == '_')) ++e;
    return text_.substr(pos_, e - pos_);
  }
  std::string identifier() {
    const std::string_view w = peek_word();
    if (w.empty() || std::isdigit(static_cast<unsigned char>(w.front()))) fail("expected identifier");
    for (std::size_t i = 0; i < w.size(); ++i) advance();
    return std::string(w);
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  void statement() {
    const int start_line = line_;
    if (identifier() != "mpc") fail("expected an assignment to an mpc field");
    expect('.');
    const std::string field = identifier();
    skip_space_and_comments(false);
    expect('=');
    skip_space_and_comments(false);

    if (field == "baseMVA") {
      base_mva = number();
    } else if (field == "bus" || field == "gen" || field == "branch") {
      if (peek() != '[') fail("expected '[' to open the " + field + " matrix");
      NumericTable t = matrix();
      t.line = start_line;
      tables[field] = std::move(t);
    } else {
      if (field != "version") warnings.push_back("line " + std::to_string(start_line) + ": skipped mpc." + field);
      skip_value();
    }
    skip_space_and_comments(false);
    if (peek() == ';') advance();
    skip_space_and_comments(false);
    if (!eof() && peek() != '\n') fail("unexpected trailing input after mpc." + field);
  }

  double number() {
    const std::size_t start = pos_;
    std::size_t e = pos_;
    if (e < text_.size() && (text_[e] == '+' || text_[e] == '-')) ++e;
    while (e < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[e])) || text_[e] == '.' ||
                                ((text_[e] == '+' || text_[e] == '-') && (text_[e - 1] == 'e' || text_[e - 1] == 'E'))))
      ++e;
    const std::string tok(text_.substr(start, e - start));
    if (tok.empty()) fail("expected a number");
    double value = 0.0;
    if (tok == "Inf" || tok == "+Inf") {
      value = HUGE_VAL;
    } else if (tok == "-Inf") {
      value = -HUGE_VAL;
    } else {
      char* end = nullptr;
      errno = 0;
      value = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || tok == "+" || tok == "-" || std::isnan(value))
        fail("non-numeric cell '" + tok + "'");
    }
    while (pos_ < e) advance();
    return value;
  }

  NumericTable matrix() {
    expect('[');
    NumericTable t;
    std::vector<double> row;
    const int open_line = line_;
    auto end_row = [&] {
      if (row.empty()) return;
      if (!t.rows.empty() && row.size() != t.rows.front().size())
        fail("matrix row has " + std::to_string(row.size()) + " columns, expected " +
             std::to_string(t.rows.front().size()));
      t.rows.push_back(std::move(row));
      row.clear();
    };
    for (;;) {
      skip_space_and_comments(false);
      if (eof()) throw CaseError("unterminated matrix", open_line, 1);
      const char c = peek();
      if (c == ']') {
        end_row();
        advance();
        break;
      }
      if (c == ';' || c == '\n') {
        end_row();
        advance();
        continue;
      }
      if (c == ',') {
        advance();
        continue;
      }
      row.push_back(number());
    }
    return t;
  }

  void skip_value() {
    int depth = 0;
    bool in_string = false;
    while (!eof()) {
      const char c = peek();
      if (in_string) {
        if (c == '\'') in_string = false;
        if (c == '\n') fail("unterminated string");
        advance();
        continue;
      }
      if (c == '\'') {
        in_string = true;
      } else if (c == '%') {
        skip_line();
        continue;
      } else if (c == '[' || c == '{' || c == '(') {
        ++depth;
      } else if (c == ']' || c == '}' || c == ')') {
        if (--depth < 0) fail("unbalanced bracket");
      } else if (depth == 0 && (c == ';' || c == '\n')) {
        return;
      }
      advance();
    }
    if (depth != 0 || in_string) fail("unterminated value");
  }
};

inline int integer_cell(double v, const std::string& what, int line) {
  if (!std::isfinite(v) || v != std::floor(v) || std::abs(v) > 2e9)
    throw CaseError(what + " must be an integer", line, 1);
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses the numeric-matrix subset of a MATPOWER case file.
///
/// Recognizes `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch`; other
/// `mpc.<field>` assignments are skipped and listed in `warnings`.
inline Network parse_matpower_case(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  detail::MatpowerReader reader(text);
  reader.parse();

  if (!reader.base_mva) throw CaseError("missing required field `baseMVA`");
  for (const char* name : {"bus", "gen", "branch"})
    if (!reader.tables.count(name)) throw CaseError(std::string("missing required table `") + name + "`");

  auto require_cols = [&](const char* name, std::size_t min_cols) {
    const auto& t = reader.tables.at(name);
    if (!t.rows.empty() && t.rows.front().size() < min_cols)
      throw CaseError(std::string("table `") + name + "` needs at least " + std::to_string(min_cols) + " columns",
                      t.line, 1);
    return t;
  };
  const auto bus_t = require_cols("bus", 13);
  const auto gen_t = require_cols("gen", 8);
  const auto branch_t = require_cols("branch", 11);

  Network net;
  net.base_mva = *reader.base_mva;
  std::vector<double> bus_vm;
  for (const auto& r : bus_t.rows) {
    Bus b;
    b.id = detail::integer_cell(r[0], "bus number", bus_t.line);
    switch (detail::integer_cell(r[1], "bus type", bus_t.line)) {
      case 1: b.kind = BusKind::PQ; break;
      case 2: b.kind = BusKind::PV; break;
      case 3: b.kind = BusKind::Slack; break;
      default: throw CaseError("bus " + std::to_string(b.id) + ": unsupported bus type", bus_t.line, 1);
    }
    b.p_load = r[2];
    b.q_load = r[3];
    b.g_shunt = r[4];
    b.b_shunt = r[5];
    b.v_setpoint = r[7];
    b.v_max = r[11];
    b.v_min = r[12];
    net.buses.push_back(b);
  }
  for (const auto& r : gen_t.rows) {
    Generator g;
    g.bus = detail::integer_cell(r[0], "generator bus", gen_t.line);
    g.p_gen = r[1];
    g.v_setpoint = r[5];
    g.in_service = r[7] > 0.0;
    net.generators.push_back(g);
  }
  for (const auto& r : branch_t.rows) {
    Branch br;
    br.from_bus = detail::integer_cell(r[0], "branch from-bus", branch_t.line);
    br.to_bus = detail::integer_cell(r[1], "branch to-bus", branch_t.line);
    br.r = r[2];
    br.x = r[3];
    br.b_charging = r[4];
    br.tap = r[8] == 0.0 ? 1.0 : r[8];
    br.shift = r[9];
    br.in_service = r[10] > 0.0;
    net.branches.push_back(br);
  }

  // Generator set-points drive voltage-controlled buses; cross-check types.
  std::vector<std::string> notes = std::move(reader.warnings);
  for (Bus& b : net.buses) {
    const Generator* first = nullptr;
    for (const Generator& g : net.generators)
      if (g.in_service && g.bus == b.id) {
        first = &g;
        break;
      }
    if (b.kind != BusKind::PQ && first) b.v_setpoint = first->v_setpoint;
    if (b.kind != BusKind::PQ && !first)
      notes.push_back("bus " + std::to_string(b.id) + ": voltage-controlled type without an in-service generator");
    if (b.kind == BusKind::PQ && first)
      notes.push_back("bus " + std::to_string(b.id) + ": load bus type with an in-service generator");
  }
  if (warnings) *warnings = std::move(notes);
  return net;
}

namespace detail {

using Json = nlohmann::json;

inline const Json& member(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw CaseError("schema: expected an object at " + (path.empty() ? "/" : path));
  const auto it = obj.find(key);
  if (it == obj.end()) throw CaseError("schema: missing field at " + path + "/" + key);
  return *it;
}
inline double num(const Json& obj, const char* key, const std::string& path) {
  const Json& v = member(obj, key, path);
  if (!v.is_number()) throw CaseError("schema: expected a number at " + path + "/" + key);
  return v.get<double>();
}
inline int integer(const Json& obj, const char* key, const std::string& path) {
  const Json& v = member(obj, key, path);
  if (!v.is_number_integer()) throw CaseError("schema: expected an integer at " + path + "/" + key);
  const auto i = v.get<long long>();
  if (i < -2000000000LL || i > 2000000000LL) throw CaseError("schema: integer out of range at " + path + "/" + key);
  return static_cast<int>(i);
}
inline bool boolean(const Json& obj, const char* key, const std::string& path) {
  const Json& v = member(obj, key, path);
  if (!v.is_boolean()) throw CaseError("schema: expected a boolean at " + path + "/" + key);
  return v.get<bool>();
}
inline const Json& array(const Json& obj, const char* key, const std::string& path) {
  const Json& v = member(obj, key, path);
  if (!v.is_array()) throw CaseError("schema: expected an array at " + path + "/" + key);
  return v;
}

}  // namespace detail

/// Parses the native JSON case schema; schema errors carry a JSON-pointer path.
inline Network parse_json_case(std::string_view text) {
  using detail::Json;
  Json doc;
  try {
    doc = Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw CaseError(std::string("invalid JSON: ") + e.what());
  }
  Network net;
  net.base_mva = detail::num(doc, "base_mva", "");

  const Json& buses = detail::array(doc, "buses", "");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const std::string p = "/buses/" + std::to_string(i);
    const Json& o = buses[i];
    Bus b;
    b.id = detail::integer(o, "id", p);
    const Json& kind = detail::member(o, "kind", p);
    const std::string k = kind.is_string() ? kind.get<std::string>() : "";
    if (k == "slack") b.kind = BusKind::Slack;
    else if (k == "pv") b.kind = BusKind::PV;
    else if (k == "pq") b.kind = BusKind::PQ;
    else throw CaseError("schema: kind must be \"slack\", \"pv\" or \"pq\" at " + p + "/kind");
    b.p_load = detail::num(o, "p_load_mw", p);
    b.q_load = detail::num(o, "q_load_mvar", p);
    b.g_shunt = detail::num(o, "g_shunt_mw", p);
    b.b_shunt = detail::num(o, "b_shunt_mvar", p);
    b.v_setpoint = detail::num(o, "v_setpoint_pu", p);
    b.v_min = detail::num(o, "v_min_pu", p);
    b.v_max = detail::num(o, "v_max_pu", p);
    net.buses.push_back(b);
  }
  const Json& branches = detail::array(doc, "branches", "");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const std::string p = "/branches/" + std::to_string(i);
    const Json& o = branches[i];
    Branch br;
    br.from_bus = detail::integer(o, "from", p);
    br.to_bus = detail::integer(o, "to", p);
    br.r = detail::num(o, "r_pu", p);
    br.x = detail::num(o, "x_pu", p);
    br.b_charging = detail::num(o, "b_charging_pu", p);
    br.tap = detail::num(o, "tap", p);
    br.shift = detail::num(o, "shift_deg", p);
    br.in_service = detail::boolean(o, "in_service", p);
    net.branches.push_back(br);
  }
  const Json& gens = detail::array(doc, "generators", "");
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const std::string p = "/generators/" + std::to_string(i);
    const Json& o = gens[i];
    Generator g;
    g.bus = detail::integer(o, "bus", p);
    g.p_gen = detail::num(o, "p_gen_mw", p);
    g.v_setpoint = detail::num(o, "v_setpoint_pu", p);
    g.in_service = detail::boolean(o, "in_service", p);
    net.generators.push_back(g);
  }
  return net;
}

/// Deterministic JSON (sorted keys, shortest round-trip number formatting).
inline std::string write_json_case(const Network& net) {
  using detail::Json;
  Json doc;
  doc["base_mva"] = net.base_mva;
  doc["buses"] = Json::array();
  for (const Bus& b : net.buses)
    doc["buses"].push_back({{"id", b.id},
                            {"kind", to_string(b.kind)},
                            {"p_load_mw", b.p_load},
                            {"q_load_mvar", b.q_load},
                            {"g_shunt_mw", b.g_shunt},
                            {"b_shunt_mvar", b.b_shunt},
                            {"v_setpoint_pu", b.v_setpoint},
                            {"v_min_pu", b.v_min},
                            {"v_max_pu", b.v_max}});
  doc["branches"] = Json::array();
  for (const Branch& br : net.branches)
    doc["branches"].push_back({{"from", br.from_bus},
                               {"to", br.to_bus},
                               {"r_pu", br.r},
                               {"x_pu", br.x},
                               {"b_charging_pu", br.b_charging},
                               {"tap", br.tap},
                               {"shift_deg", br.shift},
                               {"in_service", br.in_service}});
  doc["generators"] = Json::array();
  for (const Generator& g : net.generators)
    doc["generators"].push_back(
        {{"bus", g.bus}, {"p_gen_mw", g.p_gen}, {"v_setpoint_pu", g.v_setpoint}, {"in_service", g.in_service}});
  return doc.dump(2) + "\n";
}

inline Network parse_case(const CaseSource& src) {
  if (src.raw_text.empty()) throw CaseError("empty case text");
  return src.format == CaseFormat::NativeJson ? parse_json_case(src.raw_text) : parse_matpower_case(src.raw_text);
}

/// Reads a case file; `.json` selects the native schema, anything else the
/// MATPOWER subset.
inline Network load_case(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaseError("cannot open case file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.empty()) throw CaseError("case file is empty: " + path.string());
  try {
    if (path.extension() == ".json") return parse_json_case(text);
    return parse_matpower_case(text, warnings);
  } catch (const CaseError& e) {
    throw CaseError(path.string() + ": " + e.what());
  }
}

enum class TraceRole { Pv, Pq, Critical, Controlled };

inline const char* to_string(TraceRole r) {
  switch (r) {
    case TraceRole::Pv: return "pv";
    case TraceRole::Pq: return "pq";
    case TraceRole::Critical: return "critical";
    case TraceRole::Controlled: return "controlled";
  }
  return "?";
}

struct TraceRow {
  int iteration = 0;
  int bus = 0;
  double voltage_pu = 0.0;
  TraceRole role = TraceRole::Pq;
};

/// One row per bus per snapshot (iteration 0 = before control). In snapshot
/// k >= 1 the bus controlled during iteration k is tagged `controlled`; other
/// load buses outside the limits are `critical`.
inline std::vector<TraceRow> trace_rows(const ControlTrace& trace) {
  std::vector<std::size_t> order(trace.bus_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return trace.bus_ids[a] < trace.bus_ids[b]; });

  std::vector<TraceRow> rows;
  for (std::size_t k = 0; k <= trace.iterations.size(); ++k) {
    const Vector& vm = k == 0 ? trace.initial_solution.vm : trace.iterations[k - 1].vm_after;
    const int cb = k == 0 ? 0 : trace.iterations[k - 1].controlled_bus;
    for (std::size_t i : order) {
      TraceRow row{static_cast<int>(k), trace.bus_ids[i], vm[i], TraceRole::Pq};
      if (trace.bus_kinds[i] != BusKind::PQ) row.role = TraceRole::Pv;
      else if (row.bus == cb) row.role = TraceRole::Controlled;
      else if (vm[i] < trace.config.v_min || vm[i] > trace.config.v_max) row.role = TraceRole::Critical;
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string write_trace_csv(const ControlTrace& trace) {
  std::string out = "iteration,bus,voltage_pu,role\n";
  char buf[96];
  for (const TraceRow& r : trace_rows(trace)) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%s\n", r.iteration, r.bus, r.voltage_pu, to_string(r.role));
    out += buf;
  }
  return out;
}

inline nlohmann::json trace_to_json(const ControlTrace& trace) {
  using detail::Json;
  Json doc;
  doc["method"] = to_string(trace.method);
  doc["outcome"] = to_string(trace.outcome);
  doc["bus_ids"] = trace.bus_ids;
  doc["pv_ids"] = trace.pv_ids;
  doc["initial_vm"] = trace.initial_solution.vm;
  doc["j_achieved_total"] = trace.j_achieved_total;
  doc["final_setpoints"] = trace.final_setpoints;
  doc["iterations"] = Json::array();
  for (const IterationRecord& r : trace.iterations) {
    Json crit = Json::array();
    for (const CriticalBus& c : r.critical_buses) crit.push_back({{"bus", c.bus}, {"vm", c.vm}});
    doc["iterations"].push_back({{"index", r.index},
                                 {"critical_buses", crit},
                                 {"controlled_bus", r.controlled_bus},
                                 {"dv_cb_target", r.dv_cb_target},
                                 {"sigma1", r.sigma1},
                                 {"u1", r.u1},
                                 {"alpha", r.alpha},
                                 {"dv_pv_unclamped", r.dv_pv_unclamped},
                                 {"dv_pv", r.dv_pv},
                                 {"clamped", r.clamped},
                                 {"j_predicted", r.j_predicted},
                                 {"j_achieved", r.j_achieved},
                                 {"vm_after", r.vm_after}});
  }
  return doc;
}

}  // namespace ovc
