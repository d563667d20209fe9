#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ovc;
using namespace ovc::testing;

namespace {

const SensitivityOptions kNoSlack{BppVariant::SeriesReactance, SlackCoordinate::Excluded};

std::vector<SensitivityOptions> all_options() {
  return {{BppVariant::SeriesReactance, SlackCoordinate::Included},
          {BppVariant::Full, SlackCoordinate::Included},
          {BppVariant::SeriesReactance, SlackCoordinate::Excluded},
          {BppVariant::Full, SlackCoordinate::Excluded}};
}

}  // namespace

TEST(Bpp, ThreeBusWithoutSlack) {
  const Network net = three_bus();
  const DenseMatrix b = build_bpp(net, model_partition(net, SlackCoordinate::Excluded));
  EXPECT_LE((b - DenseMatrix{{15, -5}, {-5, 9}}).max_abs(), 1e-12);
}

TEST(Bpp, TwoBusWithoutSlack) {
  const Network net = two_bus();
  const DenseMatrix b = build_bpp(net, model_partition(net, SlackCoordinate::Excluded));
  ASSERT_EQ(b.rows(), 1u);
  EXPECT_NEAR(b(0, 0), 10.0, 1e-12);
}

TEST(Bpp, CapacitiveShuntLowersDiagonal) {
  Network net = three_bus();
  const BusPartition p = model_partition(net, SlackCoordinate::Excluded);
  const double before = build_bpp(net, p)(1, 1);
  net.buses[2].b_shunt = 5.0;
  EXPECT_NEAR(build_bpp(net, p)(1, 1), before - 0.05, 1e-12);
}

TEST(Bpp, VariantsDifferOnlyInResistance) {
  Network net = load_bundled("case14");
  const BusPartition p = model_partition(net, SlackCoordinate::Included);
  EXPECT_GT((build_bpp(net, p, BppVariant::Full) - build_bpp(net, p)).max_abs(), 1e-3);
  for (Branch& br : net.branches) br.r = 0.0;
  EXPECT_LE((build_bpp(net, p, BppVariant::Full) - build_bpp(net, p)).max_abs(), 1e-12);
}

TEST(Model, ThreeBusHandValues) {
  const SensitivityModel m = build_model(three_bus(), kNoSlack);
  const DenseMatrix s_expected{{9.0 / 110, 5.0 / 110}, {5.0 / 110, 15.0 / 110}};
  EXPECT_LE((m.s_vq - s_expected).max_abs(), 1e-15);
  EXPECT_NEAR(m.s11(0, 0), 9.0 / 110, 1e-15);
  EXPECT_NEAR(m.s21(0, 0), 5.0 / 110, 1e-15);
  EXPECT_NEAR(m.a_ctrl(0, 0), 5.0 / 9.0, 1e-14);
  EXPECT_EQ(m.pv_ids, std::vector<int>{2});
  EXPECT_EQ(m.pq_ids, std::vector<int>{3});
}

TEST(Model, DefinitionalIdentity) {
  for (const char* name : {"case9", "case14", "case30"})
    for (const SensitivityOptions& opt : all_options()) {
      const Network net = load_bundled(name);
      const SensitivityModel m = build_model(net, opt);
      EXPECT_LE((m.a_ctrl * m.s11 - m.s21).max_abs(), 1e-9) << name;
    }
}

TEST(Model, SchurComplementIdentities) {
  // A = -B22^-1 B21 and D = B22^-1, from block inversion of B''.
  for (const char* name : {"case9", "case14", "case30"})
    for (const SensitivityOptions& opt : all_options()) {
      const Network net = load_bundled(name);
      const SensitivityModel m = build_model(net, opt);
      const DenseMatrix b = build_bpp(net, m.partition, opt.bpp);
      std::vector<std::size_t> pv, pq;
      for (std::size_t k = 0; k < m.pv_count(); ++k) pv.push_back(k);
      for (std::size_t k = 0; k < m.pq_count(); ++k) pq.push_back(m.pv_count() + k);
      const DenseMatrix b22_inv = invert(b.select(pq, pq));
      DenseMatrix a = b22_inv * b.select(pq, pv);
      a *= -1.0;
      EXPECT_LE((m.a_ctrl - a).max_abs(), 1e-9) << name;
      EXPECT_LE((m.d_gain - b22_inv).max_abs(), 1e-9) << name;
    }
}

TEST(Model, SymmetryOfSvqAndGain) {
  for (const char* name : {"case9", "case14", "case30"}) {
    const SensitivityModel m = build_model(load_bundled(name));
    EXPECT_LE(asymmetry(m.s_vq), 1e-10 * m.s_vq.max_abs()) << name;
    EXPECT_LE(asymmetry(m.d_gain), 1e-10 * m.d_gain.max_abs()) << name;
  }
}

TEST(Model, ControlRowsAreVoltageDividers) {
  // Without shunts or charging every PQ row of A sums to one; with them it is close.
  for (const char* name : {"case9", "case14", "case30"}) {
    const SensitivityModel m = build_model(load_bundled(name));
    for (std::size_t i = 0; i < m.pq_count(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m.pv_count(); ++j) {
        EXPECT_GE(m.a_ctrl(i, j), -1e-12);
        row += m.a_ctrl(i, j);
      }
      EXPECT_NEAR(row, 1.0, 0.2) << name << " row " << i;
    }
  }
}

TEST(Model, NineBusMostSensitiveToGeneratorOne) {
  const Network net = load_bundled("case9");
  for (BppVariant v : {BppVariant::SeriesReactance, BppVariant::Full}) {
    const SensitivityModel m = build_model(net, {v, SlackCoordinate::Included});
    const auto row = m.a_ctrl.row(m.pq_position(9));
    EXPECT_EQ(std::max_element(row.begin(), row.end()) - row.begin(), 0);
    EXPECT_EQ(m.pv_ids[0], 1);
  }
}

TEST(Model, SingularCasesAreReported) {
  // A shunt-free network with the slack coordinate has a Laplacian B''.
  EXPECT_THROW(build_model(two_bus()), SensitivityError);
  // Without the slack the two-bus toy has no control coordinate at all.
  EXPECT_THROW(build_model(two_bus(), kNoSlack), SensitivityError);
  const SensitivityModel m = build_model(three_bus(), kNoSlack);
  EXPECT_THROW(m.pq_position(2), SensitivityError);
  EXPECT_THROW(m.pv_position(3), SensitivityError);
}

TEST(Predict, Examples) {
  const SensitivityModel m = build_model(three_bus(), kNoSlack);
  EXPECT_NEAR(predict_dvpq(m, Vector{0.054})[0], 0.030, 1e-12);
  EXPECT_EQ(predict_dvpq(m, Vector{0.0})[0], 0.0);
  EXPECT_THROW(predict_dvpq(m, Vector{0.1, 0.2}), SensitivityError);
}

TEST(Predict, NineBusStepMatchesPowerFlow) {
  const Network net = scenario_9();
  const ControlTrace t = ovc_run(net);
  ASSERT_EQ(t.iterations.size(), 1u);
  const SensitivityModel m = build_model(net);
  const double predicted = predict_dvpq(m, t.iterations[0].dv_pv)[m.pq_position(9)];
  const double measured = t.final_vm_of(9) - t.initial_solution.vm_of(9);
  // The linear model ignores the V^2 dependence of branch reactive flow, so
  // at 0.885 pu it under-predicts the rise: 0.091 predicted, 0.109 measured.
  EXPECT_GT(predicted, 0.0);
  EXPECT_NEAR(predicted, measured, 0.02);
  EXPECT_GT(measured / predicted, 1.0);
  EXPECT_LT(measured / predicted, 1.25);
}

TEST(FiniteDifference, AllCases) {
  for (const char* name : {"case9", "case14", "case30"}) {
    const Network net = load_bundled(name);
    const SensitivityModel m = build_model(net);
    const FiniteDifferenceResult coarse = finite_difference_check(net, m, 1e-3, 20, 7);
    const FiniteDifferenceResult fine = finite_difference_check(net, m, 1e-4, 20, 7);
    EXPECT_LE(coarse.max_relative, 0.15) << name;
    EXPECT_LT(fine.max_absolute, coarse.max_absolute) << name;
    // The residual error is the model's decoupling approximation, so it
    // scales with the step rather than vanishing relative to it.
    EXPECT_NEAR(fine.max_relative, coarse.max_relative, 0.02) << name;
  }
}
