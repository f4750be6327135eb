#include <gtest/gtest.h>

#include <cmath>

#include "dptab/privacy_accountant.hpp"

using namespace dptab;

namespace {

/// Renyi divergence D_alpha((1-q)N(0,s^2) + qN(1,s^2) || N(0,s^2)) by composite
/// Simpson integration in long double, independent of the library's
/// trapezoid and binomial paths.
double rdp_oracle(double q, double sigma, double alpha) {
  const long double s2 = static_cast<long double>(sigma) * sigma;
  const long double lo = -40.0L * sigma - 10;
  const long double hi = alpha + 40.0L * sigma + 10;
  const int n = 400000;
  const long double h = (hi - lo) / n;
  auto log_f = [&](long double z) {
    const long double log_gauss = -z * z / (2 * s2) - 0.5L * std::log(2 * M_PIl * s2);
    const long double ratio = (1 - q) + q * std::exp((2 * z - 1) / (2 * s2));
    return log_gauss + alpha * std::log(ratio);
  };
  long double top = -INFINITY;
  for (int i = 0; i <= n; ++i) top = std::max(top, log_f(lo + h * i));
  long double sum = 0;
  for (int i = 0; i <= n; ++i) {
    const long double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    sum += w * std::exp(log_f(lo + h * i) - top);
  }
  const long double log_a = top + std::log(sum * h / 3);
  return static_cast<double>(log_a / (alpha - 1));
}

/// min over a fine continuous alpha grid of alpha/(2 s^2) T + ln(1/delta)/(alpha-1).
double full_batch_epsilon_oracle(double sigma, double steps, double delta) {
  double best = INFINITY;
  for (double a = 1.001; a < 400; a += 1e-4) {
    best = std::min(best, steps * a / (2 * sigma * sigma) + std::log(1 / delta) / (a - 1));
  }
  return best;
}

}  // namespace

TEST(PrivacyAccountant, FullBatchClosedForm) {
  EXPECT_EQ(rdp_step(1, 2, 8), 1.0);
  for (double sigma : {0.5, 1.0, 2.0, 4.0, 7.3}) {
    for (double alpha : {1.25, 1.5, 2.0, 3.0, 32.0, 256.0}) {
      EXPECT_EQ(rdp_step(1, sigma, alpha), alpha / (2 * sigma * sigma));
    }
  }
  EXPECT_THROW(rdp_step(0.1, 1, 1.0), NumericError);
  EXPECT_THROW(rdp_step(0.1, 1, 0.5), NumericError);
}

TEST(PrivacyAccountant, SubsampledMatchesQuadratureOracle) {
  for (double q : {0.001, 0.01, 0.1}) {
    for (double sigma : {1.0, 2.0, 4.0}) {
      for (int alpha = 2; alpha <= 32; alpha += 3) {
        const double expected = rdp_oracle(q, sigma, alpha);
        EXPECT_NEAR(rdp_step(q, sigma, alpha), expected, 1e-4 * expected)
            << "q=" << q << " sigma=" << sigma << " alpha=" << alpha;
      }
      for (double alpha : {1.25, 1.5, 1.75}) {
        const double expected = rdp_oracle(q, sigma, alpha);
        EXPECT_NEAR(rdp_step(q, sigma, alpha), expected, 1e-4 * expected)
            << "q=" << q << " sigma=" << sigma << " alpha=" << alpha;
      }
    }
  }
}

TEST(PrivacyAccountant, MonotoneInOrderSigmaAndRate) {
  const auto orders = default_orders();
  for (double q : {0.001, 0.01, 0.1, 0.5}) {
    for (double sigma : {0.8, 1.0, 2.0, 4.0}) {
      double previous = 0;
      for (double a : orders) {
        const double r = rdp_step(q, sigma, a);
        EXPECT_GE(r, previous * (1 - 1e-9)) << q << " " << sigma << " " << a;
        EXPECT_LE(r, a / (2 * sigma * sigma) * (1 + 1e-12));
        previous = r;
      }
    }
  }
  for (double a : {2.0, 8.0, 1.5}) {
    EXPECT_GE(rdp_step(0.01, 1.0, a), rdp_step(0.01, 1.5, a));
    EXPECT_LE(rdp_step(0.01, 1.0, a), rdp_step(0.02, 1.0, a));
  }
  double previous = INFINITY;
  for (double q : {0.1, 0.01, 0.001, 1e-4, 1e-6}) {
    const double r = rdp_step(q, 2.0, 4.0);
    EXPECT_LT(r, previous);
    previous = r;
  }
  EXPECT_LT(previous, 1e-10);
}

TEST(PrivacyAccountant, CompositionIsAdditive) {
  const PrivacyLedger empty = make_ledger();
  EXPECT_EQ(to_epsilon(empty, 1e-6).epsilon, 0.0);
  const auto unchanged = compose(empty, 0.01, 1.0, 0);
  EXPECT_EQ(unchanged.rdp, empty.rdp);

  const auto once = compose(make_ledger(), 0.01, 1.2, 1000);
  const auto twice = compose(compose(make_ledger(), 0.01, 1.2, 500), 0.01, 1.2, 500);
  for (std::size_t i = 0; i < once.rdp.size(); ++i) EXPECT_NEAR(once.rdp[i], twice.rdp[i], 1e-12 * once.rdp[i]);
  EXPECT_EQ(twice.history.size(), 1u);
  EXPECT_EQ(twice.steps, 1000u);

  const auto big = compose(make_ledger(), 0.004, 0.9, 100000);
  for (std::size_t i = 0; i < big.orders.size(); ++i) {
    EXPECT_DOUBLE_EQ(big.rdp[i], 100000 * rdp_step(0.004, 0.9, big.orders[i]));
  }

  StepCost cost = step_cost(make_ledger(), 0.05, 1.1);
  PrivacyLedger stepped = make_ledger();
  for (int i = 0; i < 50; ++i) stepped = compose(std::move(stepped), cost, 1);
  const auto direct = compose(make_ledger(), 0.05, 1.1, 50);
  EXPECT_NEAR(to_epsilon(stepped, 1e-6).epsilon, to_epsilon(direct, 1e-6).epsilon, 1e-12);
}

TEST(PrivacyAccountant, FullBatchEpsilonAgainstContinuousOracle) {
  const auto ledger = compose(make_ledger(), 1.0, 2.0, 1);
  const auto result = to_epsilon(ledger, 1e-6);
  const double oracle = full_batch_epsilon_oracle(2.0, 1, 1e-6);
  EXPECT_NEAR(oracle, 2.7530, 5e-4);
  // A discrete order grid can only overestimate the continuous minimum.
  EXPECT_GE(result.epsilon, oracle);
  EXPECT_LE(result.epsilon, oracle * 1.005);
  EXPECT_TRUE(result.order == 11.0 || result.order == 12.0);
}

TEST(PrivacyAccountant, EpsilonMonotoneInDeltaAndSteps) {
  const auto l = compose(make_ledger(), 0.01, 1.0, 2000);
  EXPECT_GE(to_epsilon(l, 1e-8).epsilon, to_epsilon(l, 1e-6).epsilon);
  EXPECT_GE(to_epsilon(l, 1e-6).epsilon, to_epsilon(l, 1e-3).epsilon);
  EXPECT_LE(to_epsilon(compose(make_ledger(), 0.01, 1.0, 100), 1e-6).epsilon,
            to_epsilon(l, 1e-6).epsilon);
  // As delta approaches 1 the bound approaches the smallest RDP value.
  const auto near_one = to_epsilon(l, 1 - 1e-12).epsilon;
  EXPECT_NEAR(near_one, *std::min_element(l.rdp.begin(), l.rdp.end()), 1e-6);
}

TEST(PrivacyAccountant, CalibrationInvertsEpsilon) {
  const double sigma = calibrate_sigma(1.0, 1, 2.73, 1e-6);
  EXPECT_NEAR(sigma, 2.0, 0.05);
  struct Case {
    double q;
    std::size_t steps;
    double epsilon;
  };
  for (const Case& c : {Case{0.01, 1000, 1.0}, Case{0.004, 5000, 5.0}, Case{0.1, 200, 3.0},
                        Case{1.0, 10, 8.0}}) {
    const double s = calibrate_sigma(c.q, c.steps, c.epsilon, 1e-6);
    const double eps = epsilon_for(c.q, s, c.steps, 1e-6);
    EXPECT_LE(eps, c.epsilon);
    EXPECT_GE(eps, c.epsilon * (1 - 1e-3));
  }
  double previous = INFINITY;
  for (double target : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double s = calibrate_sigma(0.01, 1000, target, 1e-6);
    EXPECT_LT(s, previous);
    previous = s;
  }
  EXPECT_THROW(calibrate_sigma(1.0, 100000, 1e-4, 1e-6), NumericError);
}

TEST(PrivacyAccountant, BatchDoubling) {
  const std::size_t n = 20000;
  const auto choice = choose_batch(n, 2000, 5.0, 1e-6, 16);
  EXPECT_TRUE(choice.sigma > 2 || choice.batch == n);
  double previous = 0;
  for (std::size_t b = 16; b <= choice.batch; b *= 2) {
    const double s = calibrate_sigma(static_cast<double>(b) / n, 2000, 5.0, 1e-6);
    EXPECT_GT(s, previous);
    previous = s;
    if (b < choice.batch) EXPECT_LE(s, 2.0);
  }
  EXPECT_NEAR(previous, choice.sigma, 1e-12);

  const auto small = choose_batch(50, 100, 5.0, 1e-6, 16);
  EXPECT_TRUE(small.sigma > 2 || small.batch == 50u);
  const auto already = choose_batch(n, 2000, 0.5, 1e-6, 512);
  if (calibrate_sigma(512.0 / n, 2000, 0.5, 1e-6) > 2) EXPECT_EQ(already.batch, 512u);
}

TEST(PrivacyAccountant, TanScalingPreservesRatio) {
  EXPECT_EQ(tan_scale(1024, 3.0, 1024), 3.0);
  EXPECT_EQ(tan_scale(1024, 3.0, 512), 1.5);
  const double n = 32561;
  const double s2 = tan_scale(4096, 5.3, 128);
  EXPECT_NEAR(s2 / (128 / n), 5.3 / (4096 / n), 1e-12 * (5.3 / (4096 / n)));
  EXPECT_THROW(tan_scale(10, 1, 11), NumericError);
  EXPECT_THROW(tan_scale(10, 1, 0), NumericError);
}

TEST(PrivacyAccountant, LedgerSerializationRoundTrip) {
  const auto l = compose(compose(make_ledger(), 0.01, 1.0, 300), 0.02, 1.5, 40);
  const auto back = ledger_from_json(nlohmann::json::parse(to_json(l, 1e-6).dump()));
  EXPECT_EQ(back.orders, l.orders);
  EXPECT_EQ(back.rdp, l.rdp);
  EXPECT_EQ(back.steps, l.steps);
  ASSERT_EQ(back.history.size(), 2u);
  EXPECT_EQ(back.history[1].sigma, 1.5);
  EXPECT_EQ(to_epsilon(back, 1e-6).epsilon, to_epsilon(l, 1e-6).epsilon);
}
