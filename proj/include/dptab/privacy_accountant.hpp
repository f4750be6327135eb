#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "dptab/common.hpp"

namespace dptab {

/// Accumulated Renyi-DP of a run of Poisson-subsampled Gaussian steps.
struct PrivacyLedger {
  struct Segment {
    double q = 0;
    double sigma = 0;
    std::size_t steps = 0;
  };

  std::vector<double> orders;
  std::vector<double> rdp;  // aligned with orders
  std::size_t steps = 0;
  std::vector<Segment> history;
};

/// Integers 2..256 plus 1.25, 1.5, 1.75.
std::vector<double> default_orders();

PrivacyLedger make_ledger(std::vector<double> orders = default_orders());

/// RDP at order `alpha` of one step with sampling rate q and noise multiplier
/// sigma (sensitivity 1). Integer orders use the exact binomial expansion;
/// fractional orders integrate the moment numerically.
double rdp_step(double q, double sigma, double alpha);

/// log E_{z ~ N(0, sigma^2)} [((1-q) + q exp((2z-1) / (2 sigma^2)))^alpha],
/// evaluated by quadrature. Valid for any real alpha > 1.
double log_moment_quadrature(double q, double sigma, double alpha);

PrivacyLedger compose(PrivacyLedger ledger, double q, double sigma, std::size_t steps);

/// Per-order RDP of one step, precomputed for repeated composition.
struct StepCost {
  double q = 0;
  double sigma = 0;
  std::vector<double> rdp;
};

StepCost step_cost(const PrivacyLedger& ledger, double q, double sigma);
PrivacyLedger compose(PrivacyLedger ledger, const StepCost& cost, std::size_t steps);

struct EpsilonResult {
  double epsilon = 0;
  double order = 0;
};

/// Converts accumulated RDP to (epsilon, delta):
/// epsilon = min_alpha RDP(alpha) + ln(1/delta) / (alpha - 1).
EpsilonResult to_epsilon(const PrivacyLedger& ledger, double delta);

/// Epsilon after `steps` steps at (q, sigma) on the default order grid.
double epsilon_for(double q, double sigma, std::size_t steps, double delta);

/// Smallest-found sigma in [0.3, 1000] whose epsilon lies in
/// [target * (1 - 1e-3), target]. Throws NumericError if even sigma = 1000
/// overshoots the target.
double calibrate_sigma(double q, std::size_t steps, double epsilon, double delta);

struct BatchChoice {
  std::size_t batch = 0;
  double sigma = 0;
};

/// Doubles the expected batch size from `initial_batch`, recalibrating sigma
/// each time, until sigma > 2 or the batch reaches n.
BatchChoice choose_batch(std::size_t n, std::size_t steps, double epsilon, double delta,
                         std::size_t initial_batch);

/// Noise multiplier at a reduced batch that keeps sigma / q fixed.
double tan_scale(double batch, double sigma, double reduced_batch);

nlohmann::json to_json(const PrivacyLedger& ledger, double delta);
PrivacyLedger ledger_from_json(const nlohmann::json& doc);

}  // namespace dptab
