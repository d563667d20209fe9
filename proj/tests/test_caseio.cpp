#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"

using namespace ovc;
using namespace ovc::testing;

namespace {

const char* kTwoBusM = R"(function mpc = twobus
%% hand-written
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	0	10	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	0	0.1	0	250	250	250	0	0	1	-360	360;
];
)";

}  // namespace

TEST(Matpower, ThirtyBusCounts) {
  const Network net = load_bundled("case30");
  EXPECT_EQ(net.buses.size(), 30u);
  const auto pv = std::count_if(net.buses.begin(), net.buses.end(), [](const Bus& b) { return b.kind != BusKind::PQ; });
  EXPECT_EQ(pv, 6);
  EXPECT_EQ(net.branches.size(), 41u);
}

TEST(Matpower, FourteenBusFields) {
  const Network net = load_bundled("case14");
  EXPECT_EQ(net.base_mva, 100.0);
  EXPECT_EQ(net.bus(9).b_shunt, 19.0);
  EXPECT_EQ(net.bus(1).v_setpoint, 1.06);
  EXPECT_EQ(net.bus(8).v_setpoint, 1.09);
  EXPECT_EQ(net.bus(10).q_load, 5.8);
  const auto tx = std::find_if(net.branches.begin(), net.branches.end(),
                               [](const Branch& b) { return b.from_bus == 4 && b.to_bus == 7; });
  ASSERT_NE(tx, net.branches.end());
  EXPECT_EQ(tx->tap, 0.978);
  // Zero tap column means a plain line.
  EXPECT_EQ(net.branches.front().tap, 1.0);
}

TEST(Matpower, TwoBusAdmittance) {
  std::vector<std::string> warnings;
  const Network net = parse_matpower_case(kTwoBusM, &warnings);
  EXPECT_TRUE(warnings.empty());
  const AdmittanceMatrix y = build_ybus(net);
  EXPECT_NEAR(y.b(0, 0), -10.0, 1e-12);
  EXPECT_NEAR(y.b(0, 1), 10.0, 1e-12);
  EXPECT_NEAR(y.b(1, 0), 10.0, 1e-12);
  EXPECT_NEAR(y.b(1, 1), -10.0, 1e-12);
  EXPECT_EQ(y.g.max_abs(), 0.0);
}

TEST(Matpower, MissingGenTableIsNamed) {
  const std::string text = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 230 1 1.1 0.9];\n";
  try {
    parse_matpower_case(text);
    FAIL() << "expected CaseError";
  } catch (const CaseError& e) {
    EXPECT_NE(std::string(e.what()).find("`gen`"), std::string::npos) << e.what();
  }
}

TEST(Matpower, ErrorsCarryLineAndColumn) {
  const std::string text = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n 2 1 x 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n";
  try {
    parse_matpower_case(text);
    FAIL() << "expected CaseError";
  } catch (const CaseError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_EQ(e.column(), 6);
  }
  EXPECT_THROW(parse_matpower_case("mpc.baseMVA = 100;\nmpc.bus = [1 2 3; 4 5];\n"), CaseError);
  EXPECT_THROW(parse_matpower_case("mpc.baseMVA = 100;\nmpc.bus = [1 2 3;\n"), CaseError);
}

TEST(Matpower, UnknownFieldsWarnAndTypeMismatchWarns) {
  std::string text = kTwoBusM;
  text += "mpc.gencost = [\n\t2 0 0 3 0.1 20 0;\n];\nmpc.bus_name = {'a'; 'b'};\n";
  std::vector<std::string> warnings;
  parse_matpower_case(text, &warnings);
  ASSERT_EQ(warnings.size(), 2u);
  EXPECT_NE(warnings[0].find("gencost"), std::string::npos);

  std::string mismatched = kTwoBusM;
  mismatched.replace(mismatched.find("2\t1\t0\t10"), 4, "2\t2\t");
  warnings.clear();
  const Network net = parse_matpower_case(mismatched, &warnings);
  EXPECT_EQ(net.bus(2).kind, BusKind::PV);  // the type column wins
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("bus 2"), std::string::npos);
}

TEST(Matpower, FuzzNeverCrashes) {
  std::mt19937 rng(42);
  const std::string base = kTwoBusM;
  const std::string alphabet = "mpc.=[];%0123456789 \t\n-+eE,'{}()abusgenbranchInf";
  std::uniform_int_distribution<int> byte(0, 255);
  int parsed = 0, rejected = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    std::string text;
    if (trial % 3 == 0) {
      text.resize(trial % 200);
      for (char& c : text) c = static_cast<char>(byte(rng));
    } else if (trial % 3 == 1) {
      text.resize(trial % 300);
      std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
      for (char& c : text) c = alphabet[pick(rng)];
    } else {
      text = base;
      std::uniform_int_distribution<std::size_t> pos(0, text.size() - 1);
      for (int k = 0; k < 1 + trial % 5; ++k) text[pos(rng)] = static_cast<char>(byte(rng));
    }
    try {
      parse_matpower_case(text);
      ++parsed;
    } catch (const CaseError&) {
      ++rejected;
    }
  }
  EXPECT_EQ(parsed + rejected, 3000);
}

TEST(Json, RoundTripBundledCases) {
  for (const char* name : {"case9", "case14", "case30"}) {
    const Network net = load_bundled(name);
    const std::string text = write_json_case(net);
    EXPECT_EQ(parse_json_case(text), net) << name;
    EXPECT_EQ(write_json_case(parse_json_case(text)), text) << name;
  }
  EXPECT_EQ(parse_json_case(write_json_case(two_bus(10.0))), two_bus(10.0));
}

TEST(Json, RoundTripIsLosslessForArbitraryDoubles) {
  Network net = three_bus();
  net.buses[2].q_load = 1.0 / 3.0;
  net.branches[1].r = 0.1 + 0.2;
  net.base_mva = 97.123456789012345;
  EXPECT_EQ(parse_json_case(write_json_case(net)), net);
}

TEST(Json, SchemaErrorsCarryPointer) {
  const std::string no_base = R"({"buses": [], "branches": [], "generators": []})";
  try {
    parse_json_case(no_base);
    FAIL();
  } catch (const CaseError& e) {
    EXPECT_NE(std::string(e.what()).find("/base_mva"), std::string::npos) << e.what();
  }
  auto doc = nlohmann::json::parse(write_json_case(three_bus()));
  doc["buses"][1]["kind"] = "generator";
  try {
    parse_json_case(doc.dump());
    FAIL();
  } catch (const CaseError& e) {
    EXPECT_NE(std::string(e.what()).find("/buses/1/kind"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_json_case("{not json"), CaseError);
  EXPECT_THROW(parse_json_case("[]"), CaseError);
}

TEST(LoadCase, MissingFileNamesPath) {
  try {
    load_case("/nonexistent/case.m");
    FAIL();
  } catch (const CaseError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/case.m"), std::string::npos);
  }
}

TEST(TraceCsv, NineBusScenario) {
  const ControlTrace t = ovc_run(scenario_9());
  const std::string csv = write_trace_csv(t);
  EXPECT_EQ(csv.rfind("iteration,bus,voltage_pu,role\n", 0), 0u);
  const auto rows = trace_rows(t);
  EXPECT_EQ(rows.size(), 18u);
  const TraceRow& last = rows.back();
  EXPECT_EQ(last.iteration, 1);
  EXPECT_EQ(last.bus, 9);
  EXPECT_EQ(last.role, TraceRole::Controlled);
  EXPECT_NEAR(last.voltage_pu, 0.993, 0.01);
  EXPECT_EQ(rows[8].role, TraceRole::Critical);  // bus 9 before control
  EXPECT_EQ(rows[0].role, TraceRole::Pv);
}

TEST(TraceCsv, NoControlNeeded) {
  const ControlTrace t = ovc_run(load_bundled("case9"));
  EXPECT_TRUE(t.iterations.empty());
  const std::string csv = write_trace_csv(t);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
}

TEST(TraceCsv, ThirtyBusMaxIteration) {
  const auto rows = trace_rows(ovc_run(scenario_30()));
  int max_it = 0;
  for (const TraceRow& r : rows) max_it = std::max(max_it, r.iteration);
  EXPECT_EQ(max_it, 2);
}
