#include "dptab/privacy_accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dptab/common.hpp"

namespace dptab {
namespace {

constexpr double kSigmaLow = 0.3;
constexpr double kSigmaHigh = 1e3;

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_binomial(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

// Exact for integer alpha: sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp((k^2-k)/(2 sigma^2)).
double log_moment_integer(double q, double sigma, int alpha) {
  double acc = -std::numeric_limits<double>::infinity();
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  for (int k = 0; k <= alpha; ++k) {
    const double kd = k;
    const double term = log_binomial(alpha, kd) + (alpha - kd) * log_1mq + kd * log_q +
                        (kd * kd - kd) / (2 * sigma * sigma);
    acc = log_add(acc, term);
  }
  return acc;
}

void check_step_args(double q, double sigma, double alpha) {
  if (!(q > 0 && q <= 1)) throw NumericError("sampling rate must be in (0, 1]");
  if (!(sigma > 0)) throw NumericError("noise multiplier must be positive");
  if (!(alpha > 1)) throw NumericError("Renyi order must exceed 1");
}

}  // namespace

std::vector<double> default_orders() {
  std::vector<double> orders{1.25, 1.5, 1.75};
  for (int a = 2; a <= 256; ++a) orders.push_back(a);
  return orders;
}

PrivacyLedger make_ledger(std::vector<double> orders) {
  for (double a : orders) {
    if (!(a > 1)) throw NumericError("Renyi order must exceed 1");
  }
  PrivacyLedger ledger;
  ledger.rdp.assign(orders.size(), 0.0);
  ledger.orders = std::move(orders);
  return ledger;
}

double log_moment_quadrature(double q, double sigma, double alpha) {
  const double s2 = sigma * sigma;
  const double log_q = std::log(q);
  const double log_1mq = q < 1 ? std::log1p(-q) : -std::numeric_limits<double>::infinity();
  // Integrand mass sits near 0 (unsampled branch) and near alpha (sampled).
  const double pad = 20 * sigma + 10;
  const double lo = -pad;
  const double hi = std::max(alpha, 1.0) + pad;
  const double step = sigma / 64;
  const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / step));
  const double h = (hi - lo) / static_cast<double>(n);

  std::vector<double> log_f(n + 1);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= n; ++i) {
    const double z = lo + h * static_cast<double>(i);
    const double log_gauss = -z * z / (2 * s2) - 0.5 * std::log(2 * M_PI * s2);
    const double log_ratio = log_add(log_1mq, log_q + (2 * z - 1) / (2 * s2));
    log_f[i] = log_gauss + alpha * log_ratio;
    top = std::max(top, log_f[i]);
  }
  double sum = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double weight = (i == 0 || i == n) ? 0.5 : 1.0;
    sum += weight * std::exp(log_f[i] - top);
  }
  return top + std::log(sum * h);
}

double rdp_step(double q, double sigma, double alpha) {
  check_step_args(q, sigma, alpha);
  if (q == 1.0) return alpha / (2 * sigma * sigma);
  const double rounded = std::round(alpha);
  const double log_a = rounded == alpha ? log_moment_integer(q, sigma, static_cast<int>(rounded))
                                        : log_moment_quadrature(q, sigma, alpha);
  return std::max(0.0, log_a / (alpha - 1));
}

StepCost step_cost(const PrivacyLedger& ledger, double q, double sigma) {
  StepCost cost{q, sigma, {}};
  cost.rdp.reserve(ledger.orders.size());
  for (double alpha : ledger.orders) cost.rdp.push_back(rdp_step(q, sigma, alpha));
  return cost;
}

PrivacyLedger compose(PrivacyLedger ledger, double q, double sigma, std::size_t steps) {
  if (steps == 0) return ledger;
  const StepCost cost = step_cost(ledger, q, sigma);
  return compose(std::move(ledger), cost, steps);
}

PrivacyLedger compose(PrivacyLedger ledger, const StepCost& cost, std::size_t steps) {
  if (steps == 0) return ledger;
  if (cost.rdp.size() != ledger.orders.size()) throw NumericError("step cost does not match the ledger orders");
  const double q = cost.q;
  const double sigma = cost.sigma;
  for (std::size_t i = 0; i < ledger.orders.size(); ++i) {
    ledger.rdp[i] += static_cast<double>(steps) * cost.rdp[i];
  }
  ledger.steps += steps;
  if (!ledger.history.empty() && ledger.history.back().q == q && ledger.history.back().sigma == sigma) {
    ledger.history.back().steps += steps;
  } else {
    ledger.history.push_back({q, sigma, steps});
  }
  return ledger;
}

EpsilonResult to_epsilon(const PrivacyLedger& ledger, double delta) {
  if (!(delta > 0 && delta < 1)) throw NumericError("delta must be in (0, 1)");
  if (ledger.steps == 0 || ledger.orders.empty()) return {0.0, 0.0};
  EpsilonResult best{std::numeric_limits<double>::infinity(), 0.0};
  const double log_inv_delta = std::log(1 / delta);
  for (std::size_t i = 0; i < ledger.orders.size(); ++i) {
    const double eps = ledger.rdp[i] + log_inv_delta / (ledger.orders[i] - 1);
    if (eps < best.epsilon) best = {eps, ledger.orders[i]};
  }
  best.epsilon = std::max(0.0, best.epsilon);
  return best;
}

double epsilon_for(double q, double sigma, std::size_t steps, double delta) {
  return to_epsilon(compose(make_ledger(), q, sigma, steps), delta).epsilon;
}

double calibrate_sigma(double q, std::size_t steps, double epsilon, double delta) {
  if (!(epsilon > 0)) throw NumericError("target epsilon must be positive");
  if (steps == 0) return kSigmaLow;
  double lo = kSigmaLow;
  double hi = kSigmaHigh;
  double eps_lo = epsilon_for(q, lo, steps, delta);
  double eps_hi = epsilon_for(q, hi, steps, delta);
  if (eps_hi > epsilon) {
    throw NumericError("epsilon " + std::to_string(epsilon) + " is unreachable with sigma <= 1000");
  }
  if (eps_lo <= epsilon) return lo;
  const double floor = epsilon * (1 - 1e-3);
  for (int iter = 0; iter < 200 && eps_hi < floor; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double eps_mid = epsilon_for(q, mid, steps, delta);
    if (eps_mid > eps_lo * (1 + 1e-12) || eps_mid < eps_hi * (1 - 1e-12)) {
      throw NumericError("epsilon is not monotone in sigma");
    }
    if (eps_mid <= epsilon) {
      hi = mid;
      eps_hi = eps_mid;
    } else {
      lo = mid;
      eps_lo = eps_mid;
    }
  }
  return hi;
}

BatchChoice choose_batch(std::size_t n, std::size_t steps, double epsilon, double delta,
                         std::size_t initial_batch) {
  if (n == 0) throw NumericError("cannot choose a batch for an empty table");
  std::size_t batch = std::max<std::size_t>(1, initial_batch);
  while (true) {
    batch = std::min(batch, n);
    const double q = static_cast<double>(batch) / static_cast<double>(n);
    const double sigma = calibrate_sigma(q, steps, epsilon, delta);
    if (sigma > 2 || batch == n) return {batch, sigma};
    batch *= 2;
  }
}

double tan_scale(double batch, double sigma, double reduced_batch) {
  if (!(reduced_batch > 0 && reduced_batch <= batch)) {
    throw NumericError("reduced batch must be in (0, batch]");
  }
  return sigma * reduced_batch / batch;
}

nlohmann::json to_json(const PrivacyLedger& ledger, double delta) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& s : ledger.history) {
    history.push_back({{"q", s.q}, {"sigma", s.sigma}, {"steps", s.steps}});
  }
  const EpsilonResult eps = to_epsilon(ledger, delta);
  return {{"accountant", "rdp-poisson-subsampled-gaussian"},
          {"orders", ledger.orders},
          {"rdp", ledger.rdp},
          {"steps", ledger.steps},
          {"history", std::move(history)},
          {"delta", delta},
          {"epsilon", eps.epsilon},
          {"optimal_order", eps.order}};
}

PrivacyLedger ledger_from_json(const nlohmann::json& doc) {
  try {
    PrivacyLedger ledger;
    ledger.orders = doc.at("orders").get<std::vector<double>>();
    // Non-finite RDP values serialize as null.
    for (const auto& v : doc.at("rdp")) {
      ledger.rdp.push_back(v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>());
    }
    ledger.steps = doc.at("steps").get<std::size_t>();
    for (const auto& s : doc.at("history")) {
      ledger.history.push_back(
          {s.at("q").get<double>(), s.at("sigma").get<double>(), s.at("steps").get<std::size_t>()});
    }
    if (ledger.orders.size() != ledger.rdp.size()) throw ConfigError("ledger: orders/rdp mismatch");
    return ledger;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed privacy ledger: ") + e.what());
  }
}

}  // namespace dptab
