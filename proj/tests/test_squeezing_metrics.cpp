#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twinbeam/squeezing_metrics.hpp"

namespace tb = twinbeam;

TEST(ComputeRt, OperatingPointValues) {
  const auto r = tb::compute_Rt(4.80e-4, 6.11e-4, 3.86e-4);
  ASSERT_TRUE(r.rt_db.has_value());
  EXPECT_NEAR(*r.ratio_rt, 0.4178, 5e-4);
  EXPECT_NEAR(*r.rt_db, -3.79, 0.01);
  EXPECT_FALSE(r.unphysical_subtraction);
}

TEST(ComputeRt, TrivialRatios) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double snl = 1e-4 + u(rng) * 1e-3;
    const double en = u(rng) * 0.99 * snl;
    EXPECT_NEAR(*tb::compute_Rt(snl, snl, en).ratio_rt, 1.0, 1e-12);
  }
  const auto half = tb::compute_Rt(0.5, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(*half.ratio_rt, 0.5);
  EXPECT_NEAR(*half.rt_db, -3.0103, 1e-4);
}

TEST(ComputeRt, MonotoneInIdlerDifferenceVariance) {
  double prev = -1.0;
  for (double v = 4.0e-4; v < 8e-4; v += 2e-5) {
    const double r = *tb::compute_Rt(v, 6.11e-4, 3.86e-4).ratio_rt;
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(ComputeRt, InvalidCalibrationAndUnphysicalSubtraction) {
  EXPECT_THROW(tb::compute_Rt(5e-4, 3.86e-4, 3.86e-4), tb::PreconditionError);
  EXPECT_THROW(tb::compute_Rt(5e-4, 3.0e-4, 3.86e-4), tb::PreconditionError);
  const auto r = tb::compute_Rt(3.5e-4, 6.11e-4, 3.86e-4);
  EXPECT_TRUE(r.unphysical_subtraction);
  EXPECT_FALSE(r.ratio_rt.has_value());
  EXPECT_FALSE(r.rt_db.has_value());
}

TEST(LossCorrection, ReferenceCorrectedValues) {
  const auto a = tb::loss_correct(tb::from_db(-3.8), tb::mean_efficiency(0.70, 0.68));
  ASSERT_TRUE(a.db.has_value());
  EXPECT_NEAR(*a.db, -8.1, 0.1);
  const auto b = tb::loss_correct(tb::from_db(-7.2), 0.90);
  ASSERT_TRUE(b.db.has_value());
  EXPECT_NEAR(*b.db, -10.1, 0.3);
}

TEST(LossCorrection, IdentityRoundTripAndFloor) {
  EXPECT_DOUBLE_EQ(*tb::loss_correct(0.42, 1.0).ratio, 0.42);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double truth = u(rng);
    const double eta = u(rng);
    const double measured = eta * truth + (1.0 - eta);
    EXPECT_NEAR(*tb::loss_correct(measured, eta).ratio, truth, 1e-12);
  }
  EXPECT_TRUE(tb::loss_correct(0.31, 0.69).unphysical);
  EXPECT_FALSE(tb::loss_correct(0.31, 0.69).db.has_value());
  EXPECT_THROW(tb::loss_correct(0.5, 0.0), tb::ParameterError);
  EXPECT_THROW(tb::loss_correct(0.5, 1.1), tb::ParameterError);
}

TEST(LossCorrection, AttachedToResult) {
  auto r = tb::with_loss_correction(tb::compute_Rt(4.80e-4, 6.11e-4, 3.86e-4), 0.69);
  ASSERT_TRUE(r.rt_corrected_db.has_value());
  EXPECT_LT(*r.rt_corrected_db, *r.rt_db);
  EXPECT_FALSE(r.unphysical_correction);
  auto u = tb::with_loss_correction(tb::compute_Rt(3.5e-4, 6.11e-4, 3.86e-4), 0.69);
  EXPECT_FALSE(u.rt_corrected_db.has_value());
}

TEST(DecibelHelpers, Inverse) {
  for (double db : {-10.0, -3.8, 0.0, 2.5}) EXPECT_NEAR(tb::to_db(tb::from_db(db)), db, 1e-12);
  EXPECT_DOUBLE_EQ(tb::to_db(0.1), -10.0);
}

namespace {

tb::PsdEstimate flat_psd(double level, std::size_t bins = 1001, double df = 10e3) {
  tb::PsdEstimate p;
  for (std::size_t k = 0; k < bins; ++k) {
    p.freqs.push_back(static_cast<double>(k) * df);
    p.psd.push_back(level);
  }
  return p;
}

}  // namespace

TEST(FreqDomainR, BandRatios) {
  const auto en = flat_psd(1.0);
  const auto snl = flat_psd(5.0);
  EXPECT_DOUBLE_EQ(tb::freq_domain_R(snl, snl, en).ratio, 1.0);
  const auto r = tb::freq_domain_R(flat_psd(3.0), snl, en);
  EXPECT_DOUBLE_EQ(r.ratio, 0.5);
  EXPECT_FALSE(r.unphysical);
  const auto below = tb::freq_domain_R(flat_psd(0.5), snl, en);
  EXPECT_TRUE(below.unphysical);
  // 1 MHz band at 10 kHz spacing: 101 bins inclusive.
  EXPECT_NEAR(r.p_snl, 5.0 * 101 * 10e3, 1e-6);
}

TEST(FreqDomainR, OnlyTheBandCounts) {
  auto sig = flat_psd(3.0);
  for (std::size_t k = 0; k < sig.freqs.size(); ++k)
    if (sig.freqs[k] > 4e6) sig.psd[k] = 1000.0;
  EXPECT_DOUBLE_EQ(tb::freq_domain_R(sig, flat_psd(5.0), flat_psd(1.0)).ratio, 0.5);
}

TEST(FreqDomainR, Errors) {
  const auto en = flat_psd(1.0);
  EXPECT_THROW(tb::freq_domain_R(flat_psd(3.0), flat_psd(1.0), en), tb::PreconditionError);
  EXPECT_THROW(tb::freq_domain_R(flat_psd(3.0, 500), flat_psd(5.0), en), tb::PreconditionError);
  EXPECT_THROW(tb::freq_domain_R(flat_psd(3.0), flat_psd(5.0), en, {9.8e6, 1e6}),
               tb::ParameterError);
  EXPECT_THROW(tb::freq_domain_R(flat_psd(3.0), flat_psd(5.0), en, {2.5e6, 0.0}),
               tb::ParameterError);
}
