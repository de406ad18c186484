#pragma once

// Vaccine efficacy from trial counts. Conditioning on the total case count
// removes the incidence scale, leaving a binomial in the vaccinated-arm
// share; trial efficacies share a Beta prior whose hyperparameters are
// fitted by maximizing the quadrature marginal likelihood.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sero/catalog.hpp"
#include "sero/corpus.hpp"
#include "sero/error.hpp"
#include "sero/mcmc.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"

namespace sero {

enum class EfficacyGroupKind { Partial, Full };

inline std::string to_string(EfficacyGroupKind g) { return g == EfficacyGroupKind::Full ? "full" : "partial"; }

struct TrialReduction {
  std::int64_t n_total = 0;
  std::int64_t n_v = 0;
  double r = 1.0;  // vaccinated-to-placebo arm size ratio

  /// Probability that a case is in the vaccinated arm.
  double g(double e) const {
    const double a = (1.0 - e) * r;
    return a / (1.0 + a);
  }
};

inline TrialReduction reduce_trial(const ClinicalTrial& t) {
  return {t.cases_vaccinated + t.cases_placebo, t.cases_vaccinated,
          static_cast<double>(t.n_vaccinated) / static_cast<double>(t.n_placebo)};
}

inline double crude_efficacy(const ClinicalTrial& t) {
  return 1.0 - (static_cast<double>(t.cases_vaccinated) / static_cast<double>(t.n_vaccinated)) /
                   (static_cast<double>(t.cases_placebo) / static_cast<double>(t.n_placebo));
}

/// Fixed quadrature on E in (0,1): composite 5-point Gauss-Legendre in u with
/// E = (1 - cos(pi u)) / 2, which clusters nodes toward both ends.
class EfficacyGrid {
 public:
  explicit EfficacyGrid(std::size_t panels = 400) {
    static constexpr std::array<double, 5> x = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                                0.9061798459386640};
    static constexpr std::array<double, 5> w = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                                0.4786286704993665, 0.2369268850561891};
    const double h = 1.0 / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double mid = (static_cast<double>(p) + 0.5) * h;
      for (std::size_t q = 0; q < 5; ++q) {
        const double u = mid + 0.5 * h * x[q];
        const double e = 0.5 * (1.0 - std::cos(std::numbers::pi * u));
        const double jac = 0.5 * std::numbers::pi * std::sin(std::numbers::pi * u);
        e_.push_back(e);
        log_weight_.push_back(std::log(0.5 * h * w[q] * jac));
      }
    }
  }

  std::size_t size() const noexcept { return e_.size(); }
  const std::vector<double>& nodes() const noexcept { return e_; }
  const std::vector<double>& log_weights() const noexcept { return log_weight_; }

 private:
  std::vector<double> e_;
  std::vector<double> log_weight_;
};

/// Trial log-likelihood evaluated once on the grid.
struct TrialGrid {
  TrialReduction reduced;
  std::vector<double> loglik;

  TrialGrid(const ClinicalTrial& trial, const EfficacyGrid& grid) : reduced(reduce_trial(trial)) {
    for (double e : grid.nodes()) loglik.push_back(stats::log_binomial_pmf(reduced.n_v, reduced.n_total, reduced.g(e)));
  }
};

inline std::vector<double> log_beta_on_grid(const EfficacyGrid& grid, double alpha, double beta) {
  std::vector<double> out;
  out.reserve(grid.size());
  for (double e : grid.nodes()) out.push_back(stats::log_beta_pdf(e, alpha, beta));
  return out;
}

inline double marginal_loglik(std::span<const TrialGrid> trials, const EfficacyGrid& grid, double alpha, double beta) {
  if (trials.empty()) return 0.0;
  const auto prior = log_beta_on_grid(grid, alpha, beta);
  double total = 0.0;
  std::vector<double> terms(grid.size());
  for (const auto& t : trials) {
    for (std::size_t n = 0; n < grid.size(); ++n) terms[n] = grid.log_weights()[n] + t.loglik[n] + prior[n];
    const double v = stats::log_sum_exp(terms);
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteIntegrand, "marginal likelihood integrand is not finite");
    total += v;
  }
  return total;
}

inline double marginal_loglik(std::span<const ClinicalTrial> trials, double alpha, double beta,
                              const EfficacyGrid& grid = EfficacyGrid()) {
  std::vector<TrialGrid> tg;
  for (const auto& t : trials) tg.emplace_back(t, grid);
  return marginal_loglik(tg, grid, alpha, beta);
}

struct OptimizerStart {
  double log_alpha0 = 0.0, log_beta0 = 0.0;
  double log_alpha = 0.0, log_beta = 0.0;
  double value = 0.0;  // marginal log-likelihood at the end point
  double initial_value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct HyperFit {
  double alpha = 1.0;
  double beta = 1.0;
  double loglik = 0.0;
  std::vector<OptimizerStart> trace;
};

inline constexpr double kLogHyperLo = -4.605170185988091;  // log 1e-2
inline constexpr double kLogHyperHi = 9.210340371976184;   // log 1e4

namespace detail {

struct HyperObjective {
  std::span<const TrialGrid> trials;
  const EfficacyGrid* grid;
};

inline double hyper_objective(const gsl_vector* v, void* params) {
  const auto* obj = static_cast<const HyperObjective*>(params);
  double la = gsl_vector_get(v, 0), lb = gsl_vector_get(v, 1);
  double penalty = 0.0;
  for (double* c : {&la, &lb}) {
    const double clamped = std::clamp(*c, kLogHyperLo, kLogHyperHi);
    penalty += 1e3 * (*c - clamped) * (*c - clamped);
    *c = clamped;
  }
  const double ll = marginal_loglik(obj->trials, *obj->grid, std::exp(la), std::exp(lb));
  return std::isfinite(ll) ? -ll + penalty : GSL_POSINF;
}

}  // namespace detail

/// Empirical-Bayes hyperparameters: Nelder-Mead over (log alpha, log beta)
/// from a 3x3 grid of starts; the best end point wins.
inline HyperFit fit_hyperparams(std::span<const TrialGrid> trials, const EfficacyGrid& grid) {
  if (trials.size() < 2)
    throw Error(ErrorCode::OptimizationFailed, "hyperparameter fit needs at least two trials in the group");
  gsl_set_error_handler_off();
  detail::HyperObjective obj{trials, &grid};
  gsl_multimin_function fn{&detail::hyper_objective, 2, &obj};
  HyperFit fit;
  std::optional<std::size_t> best;
  const std::array<double, 3> starts = {0.0, std::log(10.0), std::log(100.0)};
  for (double la0 : starts) {
    for (double lb0 : starts) {
      OptimizerStart s{la0, lb0};
      gsl_vector* x = gsl_vector_alloc(2);
      gsl_vector* step = gsl_vector_alloc(2);
      gsl_vector_set(x, 0, la0);
      gsl_vector_set(x, 1, lb0);
      gsl_vector_set_all(step, 0.5);
      s.initial_value = -detail::hyper_objective(x, &obj);
      gsl_multimin_fminimizer* m = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2);
      gsl_multimin_fminimizer_set(m, &fn, x, step);
      int status = GSL_CONTINUE;
      while (status == GSL_CONTINUE && s.iterations < 2000) {
        ++s.iterations;
        if (gsl_multimin_fminimizer_iterate(m) != GSL_SUCCESS) break;
        status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(m), 1e-8);
      }
      s.converged = status == GSL_SUCCESS;
      s.log_alpha = std::clamp(gsl_vector_get(m->x, 0), kLogHyperLo, kLogHyperHi);
      s.log_beta = std::clamp(gsl_vector_get(m->x, 1), kLogHyperLo, kLogHyperHi);
      s.value = -m->fval;
      gsl_multimin_fminimizer_free(m);
      gsl_vector_free(x);
      gsl_vector_free(step);
      const bool improved = std::isfinite(s.value) && s.value >= s.initial_value;
      if (improved && (!best || s.value > fit.trace[*best].value)) best = fit.trace.size();
      fit.trace.push_back(s);
    }
  }
  if (!best) throw Error(ErrorCode::OptimizationFailed, "no optimizer start improved the marginal likelihood");
  const auto& b = fit.trace[*best];
  fit.alpha = std::exp(b.log_alpha);
  fit.beta = std::exp(b.log_beta);
  fit.loglik = b.value;
  return fit;
}

/// Posterior of one trial's efficacy on the quadrature grid. Node masses are
/// spread uniformly over cells bounded by midpoints between nodes.
class EfficacyPosterior {
 public:
  EfficacyPosterior(const TrialGrid& trial, const EfficacyGrid& grid, double alpha, double beta) {
    const auto prior = log_beta_on_grid(grid, alpha, beta);
    std::vector<double> logm(grid.size());
    for (std::size_t n = 0; n < grid.size(); ++n) logm[n] = grid.log_weights()[n] + trial.loglik[n] + prior[n];
    const double norm = stats::log_sum_exp(logm);
    if (!std::isfinite(norm)) throw Error(ErrorCode::NonFiniteIntegrand, "efficacy posterior is not normalizable");
    const auto& e = grid.nodes();
    bounds_.push_back(0.0);
    for (std::size_t n = 0; n + 1 < e.size(); ++n) bounds_.push_back(0.5 * (e[n] + e[n + 1]));
    bounds_.push_back(1.0);
    double acc = 0.0;
    cdf_.push_back(0.0);
    for (std::size_t n = 0; n < e.size(); ++n) {
      const double m = std::exp(logm[n] - norm);
      mean_ += m * e[n];
      acc += m;
      cdf_.push_back(acc);
    }
    for (double& c : cdf_) c /= acc;
    mean_ /= acc;
  }

  double mean() const noexcept { return mean_; }

  double quantile(double p) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), p);
    const std::size_t cell = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - cdf_.begin(), 1), cdf_.size() - 1) - 1;
    const double lo = cdf_[cell], hi = cdf_[cell + 1];
    const double frac = hi > lo ? (p - lo) / (hi - lo) : 0.5;
    const double e = bounds_[cell] + std::clamp(frac, 0.0, 1.0) * (bounds_[cell + 1] - bounds_[cell]);
    return std::clamp(e, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
  }

  double cdf(double e) const {
    const auto it = std::upper_bound(bounds_.begin(), bounds_.end(), e);
    if (it == bounds_.begin()) return 0.0;
    if (it == bounds_.end()) return 1.0;
    const std::size_t cell = static_cast<std::size_t>(it - bounds_.begin()) - 1;
    const double frac = (e - bounds_[cell]) / (bounds_[cell + 1] - bounds_[cell]);
    return cdf_[cell] + frac * (cdf_[cell + 1] - cdf_[cell]);
  }

  template <class Rng>
  double sample(Rng& rng) const {
    return quantile(rng.uniform());
  }

 private:
  std::vector<double> bounds_;
  std::vector<double> cdf_;
  double mean_ = 0.0;
};

/// Efficacy distribution for one vaccine at one vaccination stage: a trial
/// posterior when the vaccine has trial data, else the group's fitted Beta.
class EfficacyDistribution {
 public:
  EfficacyDistribution(double alpha, double beta) : alpha_(alpha), beta_(beta) {}
  EfficacyDistribution(EfficacyPosterior posterior, double alpha, double beta)
      : posterior_(std::move(posterior)), alpha_(alpha), beta_(beta) {}

  bool from_trial() const noexcept { return posterior_.has_value(); }
  double mean() const { return posterior_ ? posterior_->mean() : alpha_ / (alpha_ + beta_); }

  template <class Rng>
  double sample(Rng& rng) const {
    return posterior_ ? posterior_->sample(rng) : beta_variate(rng, alpha_, beta_);
  }

 private:
  std::optional<EfficacyPosterior> posterior_;
  double alpha_ = 1.0;
  double beta_ = 1.0;
};

inline EfficacyGroupKind group_of(const ClinicalTrial& trial, const Catalog& catalog) {
  if (auto k = catalog.find(trial.manufacturer))
    return trial.dose_stage >= catalog.doses(*k) ? EfficacyGroupKind::Full : EfficacyGroupKind::Partial;
  return trial.dose_stage >= 2 ? EfficacyGroupKind::Full : EfficacyGroupKind::Partial;
}

struct TrialSummary {
  std::string manufacturer;
  int dose_stage = 1;
  EfficacyGroupKind group = EfficacyGroupKind::Full;
  double crude = 0.0;
  double mean = 0.0;
  double lo = 0.0;  // 2.5%
  double hi = 0.0;  // 97.5%
};

struct EfficacyFit {
  HyperFit full;
  HyperFit partial;
  std::vector<TrialSummary> trials;
  std::vector<EfficacyDistribution> full_by_vaccine;     // per catalog vaccine
  std::vector<EfficacyDistribution> partial_by_vaccine;  // per catalog vaccine

  nlohmann::json to_json() const {
    auto trials_json = nlohmann::json::array();
    for (const auto& t : trials)
      trials_json.push_back({{"manufacturer", t.manufacturer},
                             {"dose", t.dose_stage},
                             {"group", to_string(t.group)},
                             {"crude", t.crude},
                             {"mean", t.mean},
                             {"q025", t.lo},
                             {"q975", t.hi}});
    auto group_json = [](const HyperFit& h) {
      auto starts = nlohmann::json::array();
      for (const auto& s : h.trace)
        starts.push_back({{"start", {s.log_alpha0, s.log_beta0}},
                          {"end", {s.log_alpha, s.log_beta}},
                          {"loglik", s.value},
                          {"iterations", s.iterations},
                          {"converged", s.converged}});
      return nlohmann::json{{"alpha", h.alpha}, {"beta", h.beta}, {"marginal_loglik", h.loglik}, {"starts", starts}};
    };
    return {{"trials", trials_json},
            {"groups", {{"full", group_json(full)}, {"partial", group_json(partial)}}},
            {"hyperparameters", "empirical Bayes plug-in; hyperparameter uncertainty is not propagated"}};
  }
};

inline EfficacyFit fit_efficacy(const std::vector<ClinicalTrial>& trials, const Catalog& catalog,
                                const EfficacyGrid& grid = EfficacyGrid()) {
  std::vector<TrialGrid> full, partial;
  std::vector<EfficacyGroupKind> kinds;
  for (const auto& t : trials) {
    kinds.push_back(group_of(t, catalog));
    (kinds.back() == EfficacyGroupKind::Full ? full : partial).emplace_back(t, grid);
  }
  EfficacyFit fit;
  fit.full = fit_hyperparams(full, grid);
  fit.partial = fit_hyperparams(partial, grid);
  for (std::size_t k = 0; k < catalog.size(); ++k) {
    fit.full_by_vaccine.emplace_back(fit.full.alpha, fit.full.beta);
    fit.partial_by_vaccine.emplace_back(fit.partial.alpha, fit.partial.beta);
  }
  for (std::size_t n = 0; n < trials.size(); ++n) {
    const auto& t = trials[n];
    const HyperFit& h = kinds[n] == EfficacyGroupKind::Full ? fit.full : fit.partial;
    EfficacyPosterior post(TrialGrid(t, grid), grid, h.alpha, h.beta);
    fit.trials.push_back({t.manufacturer, t.dose_stage, kinds[n], crude_efficacy(t), post.mean(), post.quantile(0.025),
                          post.quantile(0.975)});
    if (auto k = catalog.find(t.manufacturer)) {
      auto& slot = kinds[n] == EfficacyGroupKind::Full ? fit.full_by_vaccine : fit.partial_by_vaccine;
      slot[*k] = EfficacyDistribution(std::move(post), h.alpha, h.beta);
    }
  }
  return fit;
}

/// The unreduced two-Poisson trial model with an explicit prior on the
/// combined case rate; used to check that the efficacy posterior does not
/// depend on that prior.
class TrialPoissonModel final : public mcmc::Model {
 public:
  TrialPoissonModel(const ClinicalTrial& trial, double alpha, double beta, double lambda_shape, double lambda_rate)
      : trial_(trial), alpha_(alpha), beta_(beta), shape_(lambda_shape), rate_(lambda_rate) {}

  std::vector<mcmc::Node> nodes() const override {
    return {{"E", mcmc::Support::UnitInterval}, {"lambda", mcmc::Support::Positive}};
  }
  std::vector<mcmc::Block> blocks() const override { return {{{0, 1}}}; }

  double log_density(std::span<const double> s) const override {
    const double e = s[0], lambda = s[1];
    const double r = static_cast<double>(trial_.n_vaccinated) / static_cast<double>(trial_.n_placebo);
    const double mu_p = lambda / (1.0 + (1.0 - e) * r);
    const double mu_v = lambda - mu_p;
    return stats::log_poisson_pmf(trial_.cases_vaccinated, mu_v) + stats::log_poisson_pmf(trial_.cases_placebo, mu_p) +
           stats::log_beta_pdf(e, alpha_, beta_) + stats::log_gamma_pdf(lambda, shape_, rate_);
  }

  void initialize(std::span<double> s, CounterRng& rng) const override {
    s[0] = std::clamp(crude_efficacy(trial_), 0.05, 0.95);
    s[1] = static_cast<double>(trial_.cases_vaccinated + trial_.cases_placebo) * (1.0 + 0.05 * rng.normal());
  }

 private:
  ClinicalTrial trial_;
  double alpha_, beta_, shape_, rate_;
};

}  // namespace sero
