#pragma once

// Forward-process noise schedule and the derived posterior quantities.
//
// Arrays are indexed t = 1..T with sentinel values at index 0 (beta 0,
// alpha_bar 1, one_minus_alpha_bar 0). one_minus_alpha_bar is NOT stored as
// 1 - alpha_bar: it uses the algebraically equivalent recurrence
//   om[t] = om[t-1] + alpha_bar[t-1] * beta[t]
// which makes om[1] == beta[1] bitwise. That in turn makes the t=1 posterior
// coefficients exact: the reconstruction weight is exactly 1.0 and the
// posterior variance exactly 0, so the last reverse step is deterministic by
// construction rather than up to rounding.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "t2diff/tensor.hpp"

namespace t2diff {

enum class BetaKind { exponential, linear, logarithmic };

inline const char* beta_kind_name(BetaKind k) {
  switch (k) {
    case BetaKind::exponential: return "exp";
    case BetaKind::linear: return "linear";
    case BetaKind::logarithmic: return "log";
  }
  return "?";
}

inline BetaKind beta_kind_from(const std::string& s) {
  if (s == "exp" || s == "exponential") return BetaKind::exponential;
  if (s == "linear") return BetaKind::linear;
  if (s == "log" || s == "logarithmic") return BetaKind::logarithmic;
  throw config_error("unknown beta schedule '" + s + "' (want exp, linear or log)");
}

class NoiseSchedule {
 public:
  // beta_t = a * exp(b * t); linear and logarithmic variants interpolate
  // between the same two endpoints beta_1 and beta_T, so schedule-shape
  // comparisons hold the endpoints fixed.
  static NoiseSchedule build(double a, double b, int steps,
                             BetaKind kind = BetaKind::exponential) {
    if (steps < 1)
      throw schedule_error("schedule: steps must be >= 1, got " + std::to_string(steps));
    if (!(a > 0.0) || !std::isfinite(a) || !std::isfinite(b))
      throw schedule_error("schedule: need finite b and a > 0, got a=" + std::to_string(a) +
                           " b=" + std::to_string(b));
    NoiseSchedule s;
    s.steps_ = steps;
    s.a_ = a;
    s.b_ = b;
    s.kind_ = kind;
    const int n = steps + 1;
    s.beta_.assign((std::size_t)n, 0.0);
    s.alpha_.assign((std::size_t)n, 1.0);
    s.alpha_bar_.assign((std::size_t)n, 1.0);
    s.om_.assign((std::size_t)n, 0.0);
    s.beta_tilde_.assign((std::size_t)n, 0.0);

    const double b1 = a * std::exp(b);
    const double bT = a * std::exp(b * steps);
    for (int t = 1; t <= steps; ++t) {
      double bt = 0.0;
      switch (kind) {
        case BetaKind::exponential:
          bt = a * std::exp(b * t);
          break;
        case BetaKind::linear: {
          // two-weight blend so both endpoints are hit bitwise
          const double w = steps == 1 ? 1.0 : (double)(t - 1) / (double)(steps - 1);
          bt = b1 * (1.0 - w) + bT * w;
          break;
        }
        case BetaKind::logarithmic: {
          const double w = steps == 1 ? 1.0 : std::log((double)t) / std::log((double)steps);
          bt = b1 * (1.0 - w) + bT * w;
          break;
        }
      }
      if (!(bt > 0.0 && bt < 1.0))
        throw schedule_error("schedule: beta=" + std::to_string(bt) + " outside (0,1) at t=" +
                             std::to_string(t) + " (a=" + std::to_string(a) +
                             ", b=" + std::to_string(b) + ")");
      s.beta_[(std::size_t)t] = bt;
      s.alpha_[(std::size_t)t] = 1.0 - bt;
      s.alpha_bar_[(std::size_t)t] = s.alpha_bar_[(std::size_t)t - 1] * s.alpha_[(std::size_t)t];
      s.om_[(std::size_t)t] = s.om_[(std::size_t)t - 1] + s.alpha_bar_[(std::size_t)t - 1] * bt;
      s.beta_tilde_[(std::size_t)t] =
          s.om_[(std::size_t)t - 1] / s.om_[(std::size_t)t] * bt;
    }
    return s;
  }

  int steps() const { return steps_; }
  double a() const { return a_; }
  double b() const { return b_; }
  BetaKind kind() const { return kind_; }

  double beta(int t) const { return at(beta_, t); }
  double alpha(int t) const { return at(alpha_, t); }
  double alpha_bar(int t) const { return at0(alpha_bar_, t); }
  double one_minus_alpha_bar(int t) const { return at0(om_, t); }
  double posterior_var(int t) const { return at(beta_tilde_, t); }

  // posterior mean = coef_recon(t) * z0_hat + coef_current(t) * z_t;
  // at t=1 these are exactly 1 and 0
  double coef_recon(int t) const {
    check_t(t);
    return std::sqrt(alpha_bar_[(std::size_t)(t - 1)]) * beta_[(std::size_t)t] /
           om_[(std::size_t)t];
  }
  double coef_current(int t) const {
    check_t(t);
    return std::sqrt(alpha_[(std::size_t)t]) * om_[(std::size_t)(t - 1)] / om_[(std::size_t)t];
  }

  void write_csv(std::ostream& os) const {
    os << "t,beta,alpha_bar,beta_tilde\n";
    os.precision(17);
    for (int t = 1; t <= steps_; ++t)
      os << t << ',' << beta(t) << ',' << alpha_bar(t) << ',' << posterior_var(t) << '\n';
  }

 private:
  void check_t(int t) const {
    if (t < 1 || t > steps_)
      throw schedule_error("schedule: step " + std::to_string(t) + " outside 1.." +
                           std::to_string(steps_));
  }
  double at(const std::vector<double>& v, int t) const {
    check_t(t);
    return v[(std::size_t)t];
  }
  double at0(const std::vector<double>& v, int t) const {  // t=0 sentinel allowed
    if (t != 0) check_t(t);
    return v[(std::size_t)t];
  }

  int steps_ = 0;
  double a_ = 0.0, b_ = 0.0;
  BetaKind kind_ = BetaKind::exponential;
  std::vector<double> beta_, alpha_, alpha_bar_, om_, beta_tilde_;
};

// Default exponential rate: endpoints 1e-4 .. 0.02 over the default 50 steps.
inline double default_schedule_b(double a = 1e-4, double beta_end = 0.02, int steps = 50) {
  return std::log(beta_end / a) / steps;
}

}  // namespace t2diff
