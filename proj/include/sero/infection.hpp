#pragma once

// Infection seroprevalence. Survey positives are binomial in the apparent
// prevalence of the combined (infection or vaccination) seroprevalence; the
// log ratio of infection prevalence to the confirmed ratio follows a normal
// truncated to (0, -log confirmed ratio), with country random effects and
// covariates.
//
// Internally each survey country carries m_c = beta_c + b1 PD_c + b2 G_c, the
// country mean of its log ratios, in place of beta_c. The map is a unit-
// Jacobian shift, so the target is unchanged; it lets the regression block
// (mu0, b1, b2) move without dragging every survey likelihood along. beta_c
// is reported as a derived quantity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sero/corpus.hpp"
#include "sero/error.hpp"
#include "sero/mcmc.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"

namespace sero {

inline double apparent_prevalence(double theta, double p_plus, double p_minus) {
  return p_plus * theta + (1.0 - p_minus) * (1.0 - theta);
}

inline double combine_seroprevalence(double theta_v, double theta_i) { return 1.0 - (1.0 - theta_v) * (1.0 - theta_i); }

inline double ratio_bound(double theta_c) {
  if (theta_c >= 1.0) throw Error(ErrorCode::NonpositiveBound, "confirmed ratio >= 1 leaves no room for infection");
  return -std::log(theta_c);
}

/// Log density of the log ratio log(theta_I / theta_C) given its linear predictor.
inline double ratio_logdensity(double log_ratio, double mean, double tau, double theta_c) {
  return stats::truncated_normal_logpdf(log_ratio, mean, tau, 0.0, ratio_bound(theta_c));
}

inline constexpr double kDefaultAccuracyConcentration = 200.0;

/// Prior on a test's sensitivity or specificity.
struct AccuracyPrior {
  std::optional<double> fixed;  // exact value, no parameter
  double a = 1.0;
  double b = 1.0;

  double mean() const { return fixed ? *fixed : a / (a + b); }

  static AccuracyPrior from(const AccuracyEvidence& ev, double concentration, bool exact_fixed = false) {
    if (ev.hits && ev.misses)
      return {std::nullopt, static_cast<double>(*ev.hits) + 1.0, static_cast<double>(*ev.misses) + 1.0};
    if (ev.fixed) {
      const double v = *ev.fixed;
      if (exact_fixed || v <= 0.0 || v >= 1.0) return {v, 0.0, 0.0};
      return {std::nullopt, concentration * v, concentration * (1.0 - v)};
    }
    return {};
  }
};

struct SurveyInput {
  std::size_t survey = 0;   // index into corpus.surveys
  std::size_t country = 0;  // corpus index
  Day date = 0;
  std::int64_t n = 0;
  std::int64_t x = 0;
  double theta_c = 0.0;
  AccuracyPrior sens;
  AccuracyPrior spec;
  std::vector<double> theta_v_pool;  // prior draws of theta_V at the survey date; empty means 0
};

struct InfectionOptions {
  bool collapse_hierarchy = false;  // flat prior on theta_I over (theta_C, 1), no regression
  bool joint = false;               // theta_V updated against the survey likelihood instead of redrawn from its prior
  double accuracy_concentration = kDefaultAccuracyConcentration;
  bool exact_fixed_accuracy = false;
  double tau_max = 50.0;            // further capped at the widest truncation window
};

struct InfectionData {
  std::vector<SurveyInput> surveys;
  std::vector<std::size_t> excluded;     // surveys with no confirmed cases by their date
  std::vector<std::size_t> countries;    // corpus indices of survey countries, ascending
  std::vector<double> pd, g;             // standardized covariates, per survey country
};

/// Collects surveys and their inputs. `theta_v_pools[s]` holds prior draws of
/// theta_V for corpus survey s (may be empty).
inline InfectionData infection_data(const Corpus& corpus, const Covariates& cov,
                                    const std::vector<std::vector<double>>& theta_v_pools,
                                    const InfectionOptions& options = {}) {
  if (corpus.surveys.empty()) throw Error(ErrorCode::NoSurveys, "no serosurveys to fit");
  InfectionData out;
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t s = 0; s < corpus.surveys.size(); ++s) {
    const auto& sv = corpus.surveys[s];
    const double tc = corpus.confirmed_ratio(sv.country, sv.end_date);
    if (!(tc > 0.0)) {
      out.excluded.push_back(s);
      continue;
    }
    ratio_bound(tc);
    SurveyInput in;
    in.survey = s;
    in.country = sv.country;
    in.date = sv.end_date;
    in.n = sv.n_samples;
    in.x = sv.n_positive;
    in.theta_c = tc;
    in.sens = AccuracyPrior::from(sv.sensitivity, options.accuracy_concentration, options.exact_fixed_accuracy);
    in.spec = AccuracyPrior::from(sv.specificity, options.accuracy_concentration, options.exact_fixed_accuracy);
    if (s < theta_v_pools.size()) {
      const auto& pool = theta_v_pools[s];
      if (std::any_of(pool.begin(), pool.end(), [](double v) { return v > 0.0; })) in.theta_v_pool = pool;
    }
    slot.emplace(sv.country, 0);
    out.surveys.push_back(std::move(in));
  }
  if (out.surveys.empty()) throw Error(ErrorCode::NoSurveys, "no serosurvey has a positive confirmed ratio");
  for (auto& [country, idx] : slot) {
    idx = out.countries.size();
    out.countries.push_back(country);
    out.pd.push_back(cov.pop_density.values[country]);
    out.g.push_back(cov.gdp.values[country]);
  }
  return out;
}

class InfectionModel final : public mcmc::Model {
 public:
  InfectionModel(InfectionData data, const std::vector<std::string>& country_codes, InfectionOptions options = {})
      : data_(std::move(data)), options_(options) {
    const std::size_t L = data_.surveys.size();
    for (std::size_t l = 0; l < L; ++l) {
      const auto& s = data_.surveys[l];
      survey_country_.push_back(static_cast<std::size_t>(
          std::lower_bound(data_.countries.begin(), data_.countries.end(), s.country) - data_.countries.begin()));
      bound_.push_back(ratio_bound(s.theta_c));
    }
    by_country_.resize(data_.countries.size());
    for (std::size_t l = 0; l < L; ++l) by_country_[survey_country_[l]].push_back(l);

    auto add = [&](mcmc::Node n) {
      nodes_.push_back(std::move(n));
      return nodes_.size() - 1;
    };
    for (std::size_t l = 0; l < L; ++l)
      r_node_.push_back(add({"log_ratio." + std::to_string(l), mcmc::Support::Interval, 1, 0.0, bound_[l]}));
    if (!options_.collapse_hierarchy) {
      for (std::size_t c = 0; c < data_.countries.size(); ++c)
        m_node_.push_back(add({"country_mean." + country_codes.at(data_.countries[c]), mcmc::Support::Real, 1, 0, 1, false}));
      mu0_ = add({"mu0", mcmc::Support::Real});
      b1_ = add({"beta1_i", mcmc::Support::Real});
      b2_ = add({"beta2_i", mcmc::Support::Real});
      sigma_ = add({"sigma", mcmc::Support::Positive});
      // Past the window width the truncated normal is close to uniform and
      // tau stops being identified.
      tau_cap_ = std::min(options_.tau_max, *std::max_element(bound_.begin(), bound_.end()));
      tau_ = add({"tau", mcmc::Support::Interval, 1, 0.0, tau_cap_});
      for (std::size_t c = 0; c < data_.countries.size(); ++c)
        derived_names_.push_back("beta." + country_codes.at(data_.countries[c]));
    }
    for (std::size_t l = 0; l < L; ++l) {
      const auto& s = data_.surveys[l];
      sens_node_.push_back(s.sens.fixed ? kNone : add({"sensitivity." + std::to_string(l), mcmc::Support::UnitInterval}));
      spec_node_.push_back(s.spec.fixed ? kNone : add({"specificity." + std::to_string(l), mcmc::Support::UnitInterval}));
      tv_node_.push_back(s.theta_v_pool.empty() ? kNone
                                                 : add({"theta_v." + std::to_string(l), mcmc::Support::Latent}));
    }
    offsets_ = mcmc::Layout(nodes_);

    // A survey's log ratio and test accuracies trade off against each other
    // in its likelihood, so they move together.
    for (std::size_t l = 0; l < L; ++l) {
      mcmc::Block blk{{r_node_[l]}};
      if (sens_node_[l] != kNone) blk.nodes.push_back(sens_node_[l]);
      if (spec_node_[l] != kNone) blk.nodes.push_back(spec_node_[l]);
      blocks_.push_back({BlockKind::Ratio, l, blk});
    }
    if (!options_.collapse_hierarchy) {
      for (std::size_t c = 0; c < m_node_.size(); ++c) blocks_.push_back({BlockKind::CountryMean, c, {{m_node_[c]}}});
      blocks_.push_back({BlockKind::Regression, 0, {{mu0_, b1_, b2_}, true}});
      blocks_.push_back({BlockKind::Sigma, 0, {{sigma_}, true}});
      blocks_.push_back({BlockKind::Tau, 0, {{tau_}}});
      blocks_.push_back({BlockKind::Rescale, 0, {{}, true}});
    }
    std::vector<std::size_t> latent;
    for (std::size_t l = 0; l < L; ++l)
      if (tv_node_[l] != kNone) latent.push_back(tv_node_[l]);
    if (!latent.empty()) blocks_.push_back({BlockKind::ThetaV, 0, {latent}});
  }

  const InfectionData& data() const noexcept { return data_; }
  const InfectionOptions& options() const noexcept { return options_; }
  double tau_cap() const noexcept { return tau_cap_; }

  std::vector<mcmc::Node> nodes() const override { return nodes_; }
  std::vector<mcmc::Block> blocks() const override {
    std::vector<mcmc::Block> out;
    for (const auto& b : blocks_) out.push_back(b.block);
    return out;
  }

  double log_density(std::span<const double> s) const override {
    double total = 0.0;
    for (std::size_t l = 0; l < data_.surveys.size(); ++l) total += survey_loglik(s, l) + ratio_term(s, l);
    if (!options_.collapse_hierarchy) total += hierarchy_term(s);
    for (std::size_t l = 0; l < data_.surveys.size(); ++l) total += accuracy_prior(s, l);
    return total;
  }

  double block_log_density(std::size_t b, std::span<const double> s) const override {
    const auto& blk = blocks_.at(b);
    switch (blk.kind) {
      case BlockKind::Ratio:
        return survey_loglik(s, blk.index) + ratio_term(s, blk.index) + accuracy_prior(s, blk.index);
      case BlockKind::CountryMean: {
        double total = country_term(s, blk.index);
        for (auto l : by_country_[blk.index]) total += ratio_term(s, l);
        return total;
      }
      case BlockKind::Regression:
      case BlockKind::Sigma:
        return hierarchy_term(s);
      case BlockKind::Tau: {
        double total = 0.0;
        for (std::size_t l = 0; l < data_.surveys.size(); ++l) total += ratio_term(s, l);
        return total;
      }
      case BlockKind::ThetaV:
      case BlockKind::Rescale:
        return 0.0;
    }
    return 0.0;
  }

  void draw_latent(std::size_t b, std::span<double> s, CounterRng& rng) const override {
    switch (blocks_.at(b).kind) {
      case BlockKind::Regression: return draw_regression(s, rng);
      case BlockKind::Sigma: return draw_sigma(s, rng);
      case BlockKind::Rescale: return rescale_move(s, rng);
      case BlockKind::ThetaV: break;
      default: throw Error(ErrorCode::Internal, "no conditional draw for block " + std::to_string(b));
    }
    for (std::size_t l = 0; l < data_.surveys.size(); ++l) {
      if (tv_node_[l] == kNone) continue;
      const auto& pool = data_.surveys[l].theta_v_pool;
      const double proposal = pool[static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size())) % pool.size()];
      double& slot = s[offsets_.offset(tv_node_[l])];
      if (!options_.joint) {
        slot = proposal;
        continue;
      }
      // Independence proposal from the prior: accept on the likelihood ratio.
      const double current_ll = survey_loglik(s, l);
      const double old = slot;
      slot = proposal;
      const double ll = survey_loglik(s, l);
      if (!(std::log(rng.uniform()) < ll - current_ll)) slot = old;
    }
  }

  void initialize(std::span<double> s, CounterRng& rng) const override {
    const std::size_t L = data_.surveys.size();
    std::vector<double> r(L);
    for (std::size_t l = 0; l < L; ++l) {
      const auto& sv = data_.surveys[l];
      const double pp = sv.sens.mean(), pm = sv.spec.mean();
      if (sens_node_[l] != kNone) s[offsets_.offset(sens_node_[l])] = std::clamp(pp, 0.01, 0.99);
      if (spec_node_[l] != kNone) s[offsets_.offset(spec_node_[l])] = std::clamp(pm, 0.01, 0.99);
      double tv = 0.0;
      if (tv_node_[l] != kNone) {
        tv = sv.theta_v_pool[static_cast<std::size_t>(rng.uniform() * static_cast<double>(sv.theta_v_pool.size())) %
                             sv.theta_v_pool.size()];
        s[offsets_.offset(tv_node_[l])] = tv;
      }
      const double denom = pp + pm - 1.0;
      double theta = denom > 0.05 ? (static_cast<double>(sv.x) / static_cast<double>(sv.n) - (1.0 - pm)) / denom : 0.1;
      double ti = (theta - tv) / std::max(1.0 - tv, 1e-6);
      const double b = bound_[l];
      double rl = std::log(std::max(ti, 1e-300) / sv.theta_c);
      rl = std::clamp(rl, 0.05 * b, 0.95 * b);
      rl = std::clamp(rl + 0.05 * b * rng.normal(), 0.02 * b, 0.98 * b);
      r[l] = rl;
      s[offsets_.offset(r_node_[l])] = rl;
    }
    if (options_.collapse_hierarchy) return;
    double grand = 0.0;
    std::vector<double> m(m_node_.size());
    for (std::size_t c = 0; c < m.size(); ++c) {
      double acc = 0.0;
      for (auto l : by_country_[c]) acc += r[l];
      m[c] = acc / static_cast<double>(by_country_[c].size());
      s[offsets_.offset(m_node_[c])] = m[c];
      grand += m[c];
    }
    grand /= static_cast<double>(m.size());
    double spread = 0.0;
    for (double v : m) spread += (v - grand) * (v - grand);
    spread = m.size() > 1 ? std::sqrt(spread / static_cast<double>(m.size() - 1)) : 0.5;
    s[offsets_.offset(mu0_)] = grand + 0.1 * rng.normal();
    s[offsets_.offset(b1_)] = 0.1 * rng.normal();
    s[offsets_.offset(b2_)] = 0.1 * rng.normal();
    s[offsets_.offset(sigma_)] = std::max(spread, 0.1) * std::exp(0.2 * rng.normal());
    s[offsets_.offset(tau_)] = std::min(0.3 * std::exp(0.2 * rng.normal()), 0.5 * tau_cap_);
  }

  std::optional<std::string> propriety_violation() const override {
    if (options_.collapse_hierarchy) return std::nullopt;
    // Flat priors on the intercept and two slopes absorb three country
    // effects; the flat scale prior needs at least two more.
    if (data_.countries.size() < 5)
      return "hierarchical fit needs at least 5 survey countries under flat priors, have " +
             std::to_string(data_.countries.size());
    return std::nullopt;
  }

  std::vector<std::string> derived_names() const override { return derived_names_; }

  void derived(std::span<const double> s, std::span<double> out) const override {
    if (options_.collapse_hierarchy) return;
    const double b1 = s[offsets_.offset(b1_)], b2 = s[offsets_.offset(b2_)];
    for (std::size_t c = 0; c < m_node_.size(); ++c)
      out[c] = s[offsets_.offset(m_node_[c])] - b1 * data_.pd[c] - b2 * data_.g[c];
  }

  /// theta_I at survey l for a given state.
  double theta_i(std::span<const double> s, std::size_t l) const {
    return data_.surveys[l].theta_c * std::exp(s[offsets_.offset(r_node_[l])]);
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  enum class BlockKind { Ratio, CountryMean, Regression, Sigma, Tau, Rescale, ThetaV };
  struct BlockInfo {
    BlockKind kind;
    std::size_t index;
    mcmc::Block block;
  };

  double value(std::span<const double> s, std::size_t node) const { return s[offsets_.offset(node)]; }

  double survey_loglik(std::span<const double> s, std::size_t l) const {
    const auto& sv = data_.surveys[l];
    const double ti = std::min(1.0, theta_i(s, l));
    const double tv = tv_node_[l] == kNone ? 0.0 : value(s, tv_node_[l]);
    const double pp = sens_node_[l] == kNone ? *sv.sens.fixed : value(s, sens_node_[l]);
    const double pm = spec_node_[l] == kNone ? *sv.spec.fixed : value(s, spec_node_[l]);
    const double p = std::clamp(apparent_prevalence(combine_seroprevalence(tv, ti), pp, pm), 0.0, 1.0);
    return stats::log_binomial_pmf(sv.x, sv.n, p);
  }

  double ratio_term(std::span<const double> s, std::size_t l) const {
    const double r = value(s, r_node_[l]);
    if (options_.collapse_hierarchy) return r;  // flat on theta_I = theta_C e^r
    const double mean = value(s, m_node_[survey_country_[l]]);
    return stats::truncated_normal_logpdf(r, mean, value(s, tau_), 0.0, bound_[l]);
  }

  double country_term(std::span<const double> s, std::size_t c) const {
    const double pred = value(s, mu0_) + value(s, b1_) * data_.pd[c] + value(s, b2_) * data_.g[c];
    return stats::log_normal_pdf(value(s, m_node_[c]), pred, value(s, sigma_));
  }

  // Flat priors make (mu0, beta1, beta2) | country means, sigma a normal
  // regression posterior, and sigma^2 | rest inverse gamma with shape (J - 1) / 2.
  void draw_regression(std::span<double> s, CounterRng& rng) const {
    const std::size_t J = m_node_.size();
    double xtx[9] = {}, xty[3] = {};
    for (std::size_t c = 0; c < J; ++c) {
      const double row[3] = {1.0, data_.pd[c], data_.g[c]};
      const double y = value(s, m_node_[c]);
      for (int i = 0; i < 3; ++i) {
        xty[i] += row[i] * y;
        for (int k = 0; k < 3; ++k) xtx[i * 3 + k] += row[i] * row[k];
      }
    }
    std::vector<double> chol(xtx, xtx + 9);
    if (!mcmc::detail::cholesky(chol, 3))
      throw Error(ErrorCode::ProprietyViolation, "survey-country covariates are collinear with the intercept");
    // Solve L L' beta_hat = X'y, then beta = beta_hat + sigma L'^{-1} z.
    double w[3], bhat[3], z[3], e[3];
    for (int i = 0; i < 3; ++i) {
      double t = xty[i];
      for (int k = 0; k < i; ++k) t -= chol[i * 3 + k] * w[k];
      w[i] = t / chol[i * 3 + i];
    }
    for (int i = 0; i < 3; ++i) z[i] = rng.normal();
    for (int i = 2; i >= 0; --i) {
      double t = w[i], u = z[i];
      for (int k = i + 1; k < 3; ++k) {
        t -= chol[k * 3 + i] * bhat[k];
        u -= chol[k * 3 + i] * e[k];
      }
      bhat[i] = t / chol[i * 3 + i];
      e[i] = u / chol[i * 3 + i];
    }
    const double sigma = value(s, sigma_);
    s[offsets_.offset(mu0_)] = bhat[0] + sigma * e[0];
    s[offsets_.offset(b1_)] = bhat[1] + sigma * e[1];
    s[offsets_.offset(b2_)] = bhat[2] + sigma * e[2];
  }

  // Joint Metropolis move along the ridge that links tau to the spread of the
  // hierarchy: tau -> tau e^eps while country means, regression coefficients
  // and sigma stretch by k = e^{2 eps} about the country-average log ratios.
  // The map for -eps inverts the map for eps, so the acceptance ratio only
  // needs the Jacobian e^eps k^(J + 4).
  void rescale_move(std::span<double> s, CounterRng& rng) const {
    const std::size_t J = m_node_.size();
    const double eps = rng.normal();
    const double tau_new = value(s, tau_) * std::exp(eps);
    const double u = rng.uniform();
    if (!(tau_new < tau_cap_)) return;
    const double k = std::exp(2.0 * eps);

    std::vector<double> a(J, 0.0);
    for (std::size_t c = 0; c < J; ++c) {
      for (auto l : by_country_[c]) a[c] += value(s, r_node_[l]);
      a[c] /= static_cast<double>(by_country_[c].size());
    }
    double xtx[9] = {}, xty[3] = {};
    for (std::size_t c = 0; c < J; ++c) {
      const double row[3] = {1.0, data_.pd[c], data_.g[c]};
      for (int i = 0; i < 3; ++i) {
        xty[i] += row[i] * a[c];
        for (int j = 0; j < 3; ++j) xtx[i * 3 + j] += row[i] * row[j];
      }
    }
    double ahat[3];
    if (!solve3(xtx, xty, ahat)) return;

    std::vector<double> t(s.begin(), s.end());
    auto at = [&](std::size_t node) -> double& { return t[offsets_.offset(node)]; };
    at(tau_) = tau_new;
    for (std::size_t c = 0; c < J; ++c) at(m_node_[c]) = a[c] + k * (value(s, m_node_[c]) - a[c]);
    const std::size_t coef[3] = {mu0_, b1_, b2_};
    for (int i = 0; i < 3; ++i) at(coef[i]) = ahat[i] + k * (value(s, coef[i]) - ahat[i]);
    at(sigma_) = k * value(s, sigma_);

    auto target = [&](std::span<const double> x) {
      double total = hierarchy_term(x);
      for (std::size_t l = 0; l < data_.surveys.size(); ++l) total += ratio_term(x, l);
      return total;
    };
    const double log_jac = eps + 2.0 * eps * (static_cast<double>(J) + 4.0);
    const double log_alpha = target(t) - target(s) + log_jac;
    if (std::log(u) < log_alpha) std::copy(t.begin(), t.end(), s.begin());
  }

  static bool solve3(const double* m, const double* y, double* out) {
    std::vector<double> chol(m, m + 9);
    if (!mcmc::detail::cholesky(chol, 3)) return false;
    double w[3];
    for (int i = 0; i < 3; ++i) {
      double t = y[i];
      for (int k = 0; k < i; ++k) t -= chol[i * 3 + k] * w[k];
      w[i] = t / chol[i * 3 + i];
    }
    for (int i = 2; i >= 0; --i) {
      double t = w[i];
      for (int k = i + 1; k < 3; ++k) t -= chol[k * 3 + i] * out[k];
      out[i] = t / chol[i * 3 + i];
    }
    return true;
  }

  void draw_sigma(std::span<double> s, CounterRng& rng) const {
    const std::size_t J = m_node_.size();
    double rss = 0.0;
    for (std::size_t c = 0; c < J; ++c) {
      const double pred = value(s, mu0_) + value(s, b1_) * data_.pd[c] + value(s, b2_) * data_.g[c];
      const double d = value(s, m_node_[c]) - pred;
      rss += d * d;
    }
    const double g = gamma_variate(rng, 0.5 * (static_cast<double>(J) - 1.0));
    s[offsets_.offset(sigma_)] = std::sqrt(0.5 * rss / std::max(g, std::numeric_limits<double>::min()));
  }

  double hierarchy_term(std::span<const double> s) const {
    double total = 0.0;
    for (std::size_t c = 0; c < m_node_.size(); ++c) total += country_term(s, c);
    return total;
  }

  double accuracy_prior(std::span<const double> s, std::size_t l) const {
    const auto& sv = data_.surveys[l];
    double total = 0.0;
    if (sens_node_[l] != kNone) total += stats::log_beta_pdf(value(s, sens_node_[l]), sv.sens.a, sv.sens.b);
    if (spec_node_[l] != kNone) total += stats::log_beta_pdf(value(s, spec_node_[l]), sv.spec.a, sv.spec.b);
    return total;
  }

  InfectionData data_;
  InfectionOptions options_;
  std::vector<std::size_t> survey_country_;
  std::vector<double> bound_;
  std::vector<std::vector<std::size_t>> by_country_;
  std::vector<mcmc::Node> nodes_;
  mcmc::Layout offsets_;
  std::vector<std::size_t> r_node_, m_node_, sens_node_, spec_node_, tv_node_;
  double tau_cap_ = 0.0;
  std::size_t mu0_ = kNone, b1_ = kNone, b2_ = kNone, sigma_ = kNone, tau_ = kNone;
  std::vector<std::string> derived_names_;
  std::vector<BlockInfo> blocks_;
};

/// Regression parameters of one posterior draw, as prediction needs them.
struct InfectionDraw {
  double mu0 = 0.0, sigma = 1.0, tau = 1.0, beta1 = 0.0, beta2 = 0.0;
  std::map<std::size_t, double> beta;  // corpus country index -> random effect, survey countries
};

inline std::vector<InfectionDraw> infection_draws(const mcmc::PosteriorStore& store, const InfectionData& data,
                                                  const std::vector<std::string>& country_codes) {
  std::vector<InfectionDraw> out(store.total_draws());
  const auto& mu0 = store.pooled("mu0");
  const auto& sigma = store.pooled("sigma");
  const auto& tau = store.pooled("tau");
  const auto& b1 = store.pooled("beta1_i");
  const auto& b2 = store.pooled("beta2_i");
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = {mu0[d], sigma[d], tau[d], b1[d], b2[d], {}};
  for (auto country : data.countries) {
    const auto& col = store.pooled("beta." + country_codes.at(country));
    for (std::size_t d = 0; d < out.size(); ++d) out[d].beta[country] = col[d];
  }
  return out;
}

/// theta_I trajectory for one country and posterior draw over `days`: a
/// single log ratio truncated at the horizon's bound scales the confirmed
/// ratio at every day.
template <class Rng>
std::vector<double> predict_theta_i(const Corpus& corpus, const Covariates& cov, std::size_t country,
                                    std::span<const Day> days, const InfectionDraw& draw, Day horizon, Rng& rng) {
  for (Day t : days)
    if (t > horizon) throw Error(ErrorCode::DateOutOfRange, "prediction day after the horizon");
  const double tc_h = corpus.confirmed_ratio(country, horizon);
  std::vector<double> out(days.size(), 0.0);
  if (!(tc_h > 0.0)) return out;
  auto it = draw.beta.find(country);
  const double beta = it != draw.beta.end() ? it->second : draw.mu0 + draw.sigma * rng.normal();
  const double mean = beta + draw.beta1 * cov.pop_density.values[country] + draw.beta2 * cov.gdp.values[country];
  const double r = stats::truncated_normal(rng, mean, draw.tau, 0.0, ratio_bound(tc_h));
  for (std::size_t n = 0; n < days.size(); ++n)
    out[n] = std::min(1.0, corpus.confirmed_ratio(country, days[n]) * std::exp(r));
  return out;
}

}  // namespace sero
