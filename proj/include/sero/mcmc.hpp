#pragma once

// Adaptive random-walk Metropolis-within-Gibbs.
//
// A model declares named nodes with supports and groups them into update
// blocks. Bounded nodes are proposed on an unconstrained scale (log, logit,
// scaled logit, additive log-ratio) and the log-Jacobian is added to the
// target. Latent blocks are refreshed by the model's own conditional draw.
//
// Step sizes adapt during burn-in toward 0.44 acceptance for scalar blocks
// and 0.234 for multivariate blocks (which also learn a proposal covariance);
// adaptation is frozen afterwards. Every variate is keyed by
// (seed, chain, iteration, block), so a run is bit-reproducible regardless of
// how chains are scheduled on threads.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sero/error.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"

namespace sero::mcmc {

enum class Support { Real, Positive, UnitInterval, Interval, Simplex, Latent };

struct Node {
  std::string name;
  Support support = Support::Real;
  std::size_t size = 1;
  double lower = 0.0;  // Interval only
  double upper = 1.0;
  bool reported = true;
};

struct Block {
  std::vector<std::size_t> nodes;
  // Refreshed by Model::draw_latent (an exact conditional draw or a
  // self-contained Metropolis move). A conditional block may own no nodes.
  bool conditional = false;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual std::vector<Node> nodes() const = 0;

  /// Update-group partition; default is one block per node.
  virtual std::vector<Block> blocks() const {
    std::vector<Block> out;
    for (std::size_t n = 0; n < nodes().size(); ++n) out.push_back({{n}});
    return out;
  }

  /// Log target on the natural (constrained) scale, up to a constant.
  virtual double log_density(std::span<const double> state) const = 0;

  /// Terms of the log target that involve `block`. Differences of this
  /// function must equal differences of log_density when only `block` moves.
  virtual double block_log_density(std::size_t /*block*/, std::span<const double> state) const {
    return log_density(state);
  }

  virtual void initialize(std::span<double> state, CounterRng& rng) const = 0;

  virtual void draw_latent(std::size_t block, std::span<double> /*state*/, CounterRng& /*rng*/) const {
    throw Error(ErrorCode::Internal, "model has latent block " + std::to_string(block) + " but no conditional draw");
  }

  /// Non-empty when a flat-prior posterior would be improper for this data.
  virtual std::optional<std::string> propriety_violation() const { return std::nullopt; }

  /// Quantities recorded alongside the state (e.g. parameters of a
  /// sampler-internal reparameterization mapped back to model names).
  virtual std::vector<std::string> derived_names() const { return {}; }
  virtual void derived(std::span<const double> /*state*/, std::span<double> /*out*/) const {}
};

/// Node offsets into the flat state vector.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
    for (const auto& n : nodes_) {
      offsets_.push_back(dim_);
      dim_ += n.size;
    }
  }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t offset(std::size_t node) const { return offsets_.at(node); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  std::vector<std::string> flat_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
      if (n.size == 1) {
        out.push_back(n.name);
      } else {
        for (std::size_t i = 0; i < n.size; ++i) out.push_back(n.name + "[" + std::to_string(i) + "]");
      }
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::size_t> offsets_;
  std::size_t dim_ = 0;
};

struct ChainConfig {
  int n_chains = 4;
  int n_iter = 4000;
  int n_burnin = 2000;
  std::uint64_t seed = 20210731;
  int adapt_window = 50;
  bool parallel = true;

  void validate() const {
    if (n_chains < 1) throw Error(ErrorCode::Config, "n_chains must be >= 1");
    if (n_burnin < 0 || n_burnin >= n_iter) throw Error(ErrorCode::Config, "need 0 <= n_burnin < n_iter");
    if (adapt_window < 1) throw Error(ErrorCode::Config, "adapt_window must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"chains", n_chains}, {"iters", n_iter}, {"burnin", n_burnin}, {"seed", seed}, {"adapt_window", adapt_window}};
  }
};

// ---------------------------------------------------------------------------
// Diagnostics.

using ChainViews = std::vector<std::span<const double>>;

/// Split-chain potential scale reduction. Floored at 1.
inline double rhat(const ChainViews& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::InsufficientDraws, "R-hat needs at least two chains");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw Error(ErrorCode::InsufficientDraws, "R-hat needs at least four draws per chain");
  const std::size_t half = n / 2;
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    for (std::size_t part = 0; part < 2; ++part) {
      auto seg = c.subspan(part == 0 ? 0 : n - half, half);
      means.push_back(stats::mean(seg));
      vars.push_back(stats::variance(seg));
    }
  }
  const double w = stats::mean(vars);
  const double b = static_cast<double>(half) * stats::variance(means);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double hn = static_cast<double>(half);
  const double var_plus = (hn - 1.0) / hn * w + b / hn;
  return std::max(1.0, std::sqrt(var_plus / w));
}

struct EssResult {
  double value = 0.0;
  bool degenerate = false;  // zero variance: no information about mixing
};

/// Multi-chain effective sample size from autocorrelations truncated by
/// Geyer's initial monotone positive sequence.
inline EssResult ess(const ChainViews& chains) {
  if (chains.empty()) throw Error(ErrorCode::InsufficientDraws, "ESS needs at least one chain");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw Error(ErrorCode::InsufficientDraws, "ESS needs at least four draws per chain");
  const std::size_t m = chains.size();
  const double nd = static_cast<double>(n);
  bool constant = true;
  for (const auto& c : chains)
    for (std::size_t t = 0; t < n && constant; ++t) constant = c[t] == chains.front()[0];
  if (constant) return {0.0, true};
  std::vector<double> means(m);
  std::vector<std::vector<double>> centered(m, std::vector<double>(n));
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = stats::mean(chains[c].first(n));
    for (std::size_t t = 0; t < n; ++t) centered[c][t] = chains[c][t] - means[c];
  }
  auto acov = [&](std::size_t lag) {
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t + lag < n; ++t) s += centered[c][t] * centered[c][t + lag];
      total += s / nd;
    }
    return total / static_cast<double>(m);
  };
  const double acov0 = acov(0);
  const double mean_var = acov0 * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += stats::variance(means);
  if (!(var_plus > 0.0)) return {0.0, true};
  auto rho = [&](std::size_t lag) { return 1.0 - (mean_var - acov(lag)) / var_plus; };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  const double total = nd * static_cast<double>(m);
  tau = std::max(tau, 1.0 / std::log10(total + 10.0));
  return {std::min(total, total / tau), false};
}

// ---------------------------------------------------------------------------
// Posterior store.

struct ParameterDiagnostics {
  double rhat = 1.0;
  double ess = 0.0;
  bool degenerate = false;
};

class PosteriorStore {
 public:
  std::size_t n_chains = 0;
  std::size_t n_draws = 0;  // per chain, post-burn-in
  std::vector<std::string> names;
  std::vector<bool> reported;
  std::vector<std::vector<double>> columns;  // [param][chain * n_draws + t]
  nlohmann::json info = nlohmann::json::object();

  std::size_t total_draws() const noexcept { return n_chains * n_draws; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t p = 0; p < names.size(); ++p)
      if (names[p] == name) return p;
    return std::nullopt;
  }

  std::size_t index(const std::string& name) const {
    auto p = find(name);
    if (!p) throw Error(ErrorCode::Internal, "no parameter '" + name + "' in posterior store");
    return *p;
  }

  std::span<const double> chain(std::size_t param, std::size_t c) const {
    return std::span<const double>(columns.at(param)).subspan(c * n_draws, n_draws);
  }

  /// Pooled draws, chain-major.
  const std::vector<double>& pooled(const std::string& name) const { return columns.at(index(name)); }

  ChainViews chains(std::size_t param) const {
    ChainViews out;
    for (std::size_t c = 0; c < n_chains; ++c) out.push_back(chain(param, c));
    return out;
  }

  ParameterDiagnostics diagnostics(std::size_t param) const {
    ParameterDiagnostics d;
    auto views = chains(param);
    auto e = ess(views);
    d.ess = e.value;
    d.degenerate = e.degenerate;
    d.rhat = n_chains >= 2 ? rhat(views) : std::numeric_limits<double>::quiet_NaN();
    return d;
  }

  /// Writes manifest.json plus one little-endian float64 file per parameter,
  /// iteration-major: value (chain c, iteration t) at byte 8 * (t * n_chains + c).
  void save(const std::filesystem::path& dir) const {
    static_assert(std::endian::native == std::endian::little, "column files assume a little-endian host");
    std::filesystem::create_directories(dir);
    auto params = nlohmann::json::array();
    for (std::size_t p = 0; p < names.size(); ++p) {
      const std::string file = "param_" + std::to_string(p) + ".f64";
      std::ofstream out(dir / file, std::ios::binary);
      if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / file).string());
      for (std::size_t t = 0; t < n_draws; ++t)
        for (std::size_t c = 0; c < n_chains; ++c) {
          const double v = columns[p][c * n_draws + t];
          out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
      nlohmann::json entry = {{"name", names[p]}, {"file", file}, {"reported", static_cast<bool>(reported[p])}};
      if (reported[p] && n_draws >= 4) {
        auto d = diagnostics(p);
        entry["ess"] = d.ess;
        if (n_chains >= 2) entry["rhat"] = d.rhat;
        if (d.degenerate) entry["degenerate"] = true;
      }
      params.push_back(entry);
    }
    nlohmann::json manifest = {{"format", "sero-posterior-v1"},
                               {"layout", "float64 little-endian, iteration-major (t * n_chains + c)"},
                               {"n_chains", n_chains},
                               {"n_draws", n_draws},
                               {"parameters", params},
                               {"info", info}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  }

  static PosteriorStore load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error(ErrorCode::Io, "missing posterior manifest in " + dir.string());
    const auto manifest = nlohmann::json::parse(in);
    PosteriorStore s;
    s.n_chains = manifest.at("n_chains").get<std::size_t>();
    s.n_draws = manifest.at("n_draws").get<std::size_t>();
    s.info = manifest.value("info", nlohmann::json::object());
    for (const auto& entry : manifest.at("parameters")) {
      s.names.push_back(entry.at("name").get<std::string>());
      s.reported.push_back(entry.value("reported", true));
      std::vector<double> col(s.total_draws());
      std::ifstream bin(dir / entry.at("file").get<std::string>(), std::ios::binary);
      for (std::size_t t = 0; t < s.n_draws; ++t)
        for (std::size_t c = 0; c < s.n_chains; ++c) {
          double v = 0.0;
          bin.read(reinterpret_cast<char*>(&v), sizeof v);
          col[c * s.n_draws + t] = v;
        }
      if (!bin) throw Error(ErrorCode::Io, "truncated column file for " + s.names.back());
      s.columns.push_back(std::move(col));
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// Transforms.

namespace detail {

inline std::size_t free_dim(const Node& n) { return n.support == Support::Simplex ? n.size - 1 : n.size; }

// Writes unconstrained coordinates of `n` (stored at x) into u.
inline void to_unconstrained(const Node& n, const double* x, double* u) {
  switch (n.support) {
    case Support::Real:
    case Support::Latent:
      for (std::size_t i = 0; i < n.size; ++i) u[i] = x[i];
      break;
    case Support::Positive:
      for (std::size_t i = 0; i < n.size; ++i) u[i] = std::log(x[i]);
      break;
    case Support::UnitInterval:
      for (std::size_t i = 0; i < n.size; ++i) u[i] = stats::logit(x[i]);
      break;
    case Support::Interval:
      for (std::size_t i = 0; i < n.size; ++i) u[i] = stats::logit((x[i] - n.lower) / (n.upper - n.lower));
      break;
    case Support::Simplex:
      for (std::size_t i = 0; i + 1 < n.size; ++i) u[i] = std::log(x[i]) - std::log(x[n.size - 1]);
      break;
  }
}

// Inverse transform; returns the log-Jacobian |dx/du|, or nullopt when the
// image lands on the boundary of the support in floating point.
inline std::optional<double> from_unconstrained(const Node& n, const double* u, double* x) {
  double logj = 0.0;
  switch (n.support) {
    case Support::Real:
    case Support::Latent:
      for (std::size_t i = 0; i < n.size; ++i) x[i] = u[i];
      return 0.0;
    case Support::Positive:
      for (std::size_t i = 0; i < n.size; ++i) {
        x[i] = std::exp(u[i]);
        if (!(x[i] > 0.0) || !std::isfinite(x[i])) return std::nullopt;
        logj += u[i];
      }
      return logj;
    case Support::UnitInterval:
    case Support::Interval: {
      const double lo = n.support == Support::Interval ? n.lower : 0.0;
      const double width = n.support == Support::Interval ? n.upper - n.lower : 1.0;
      for (std::size_t i = 0; i < n.size; ++i) {
        const double s = stats::logistic(u[i]);
        x[i] = lo + width * s;
        if (!(s > 0.0 && s < 1.0) || !(x[i] > lo && x[i] < lo + width)) return std::nullopt;
        logj += std::log(width) - stats::log1p_exp(-u[i]) - stats::log1p_exp(u[i]);
      }
      return logj;
    }
    case Support::Simplex: {
      double hi = 0.0;
      for (std::size_t i = 0; i + 1 < n.size; ++i) hi = std::max(hi, u[i]);
      double norm = std::exp(-hi);
      for (std::size_t i = 0; i + 1 < n.size; ++i) norm += std::exp(u[i] - hi);
      for (std::size_t i = 0; i + 1 < n.size; ++i) x[i] = std::exp(u[i] - hi) / norm;
      x[n.size - 1] = std::exp(-hi) / norm;
      for (std::size_t i = 0; i < n.size; ++i) {
        if (!(x[i] > 0.0)) return std::nullopt;
        logj += std::log(x[i]);
      }
      return logj;
    }
  }
  return std::nullopt;
}

struct BlockPlan {
  std::vector<std::size_t> nodes;
  bool latent = false;
  std::size_t dim = 0;  // unconstrained dimension
};

// Lower-triangular Cholesky of a small dense SPD matrix (row-major); false if not SPD.
inline bool cholesky(std::vector<double>& a, std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double s = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
    if (!(s > 0.0)) return false;
    a[j * d + j] = std::sqrt(s);
    for (std::size_t i = j + 1; i < d; ++i) {
      double t = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = t / a[j * d + j];
    }
    for (std::size_t k = j + 1; k < d; ++k) a[j * d + k] = 0.0;
  }
  return true;
}

struct Adapter {
  double log_step = 0.0;
  double target = 0.44;
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  // Multivariate blocks: running moments of the unconstrained coordinates.
  std::size_t n_seen = 0;
  std::vector<double> mean, m2;   // m2 is d x d
  std::vector<double> chol;       // proposal Cholesky factor, d x d
  bool learned = false;           // chol estimated from draws rather than identity
};

struct ChainOutput {
  std::vector<double> draws;  // [t][dim + derived]
  std::vector<double> acceptance;
  std::vector<double> step;
};

inline std::string dump_state(const Layout& layout, std::span<const double> x) {
  std::ostringstream os;
  const auto names = layout.flat_names();
  for (std::size_t i = 0; i < names.size(); ++i) os << (i ? ", " : "") << names[i] << "=" << x[i];
  return os.str();
}

inline ChainOutput run_chain(const Model& model, const Layout& layout, const std::vector<BlockPlan>& plan,
                             const ChainConfig& cfg, std::size_t chain) {
  const std::size_t dim = layout.dim();
  const auto derived_names = model.derived_names();
  const std::size_t width = dim + derived_names.size();
  std::vector<double> x(dim, 0.0);

  constexpr std::uint64_t kInitTag = 0xfeedULL;
  bool ok = false;
  for (std::uint64_t attempt = 0; attempt < 100 && !ok; ++attempt) {
    CounterRng rng(cfg.seed, {chain, kInitTag, attempt});
    model.initialize(x, rng);
    ok = std::isfinite(model.log_density(x));
  }
  if (!ok)
    throw Error(ErrorCode::InitializationFailed,
                "chain " + std::to_string(chain) + ": no finite starting point after 100 attempts");

  std::vector<Adapter> adapt(plan.size());
  for (std::size_t b = 0; b < plan.size(); ++b) {
    const auto d = plan[b].dim;
    adapt[b].target = d == 1 ? 0.44 : 0.234;
    adapt[b].log_step = d == 1 ? std::log(0.5) : std::log(2.38 / std::sqrt(static_cast<double>(d)) * 0.1);
    if (d > 1) {
      adapt[b].mean.assign(d, 0.0);
      adapt[b].m2.assign(d * d, 0.0);
      adapt[b].chol.assign(d * d, 0.0);
      for (std::size_t i = 0; i < d; ++i) adapt[b].chol[i * d + i] = 1.0;
    }
  }

  ChainOutput out;
  const auto kept = static_cast<std::size_t>(cfg.n_iter - cfg.n_burnin);
  out.draws.reserve(kept * width);
  std::vector<double> u, u_new, x_new(dim), z;
  std::vector<double> derived_buf(derived_names.size());

  for (int t = 0; t < cfg.n_iter; ++t) {
    const bool burning = t < cfg.n_burnin;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      CounterRng rng(cfg.seed, {chain, static_cast<std::uint64_t>(t), b});
      const auto& bp = plan[b];
      if (bp.latent) {
        model.draw_latent(b, x, rng);
        continue;
      }
      auto& ad = adapt[b];
      const std::size_t d = bp.dim;
      u.assign(d, 0.0);
      {
        std::size_t pos = 0;
        for (auto nidx : bp.nodes) {
          const auto& node = layout.nodes()[nidx];
          to_unconstrained(node, &x[layout.offset(nidx)], &u[pos]);
          pos += free_dim(node);
        }
      }
      // Current target including the Jacobian of the current point.
      double cur = model.block_log_density(b, x);
      {
        std::size_t pos = 0;
        for (auto nidx : bp.nodes) {
          const auto& node = layout.nodes()[nidx];
          std::vector<double> tmp(node.size);
          cur += *from_unconstrained(node, &u[pos], tmp.data());
          pos += free_dim(node);
        }
      }
      z.resize(d);
      for (auto& v : z) v = rng.normal();
      u_new = u;
      const double step = std::exp(ad.log_step);
      if (d == 1) {
        u_new[0] += step * z[0];
      } else {
        for (std::size_t i = 0; i < d; ++i) {
          double s = 0.0;
          for (std::size_t k = 0; k <= i; ++k) s += ad.chol[i * d + k] * z[k];
          u_new[i] += step * s;
        }
      }
      x_new = x;
      double prop = 0.0;
      bool inside = true;
      {
        std::size_t pos = 0;
        for (auto nidx : bp.nodes) {
          const auto& node = layout.nodes()[nidx];
          auto lj = from_unconstrained(node, &u_new[pos], &x_new[layout.offset(nidx)]);
          if (!lj) {
            inside = false;
            break;
          }
          prop += *lj;
          pos += free_dim(node);
        }
      }
      double accept_prob = 0.0;
      if (inside) {
        const double ld = model.block_log_density(b, x_new);
        if (std::isnan(ld) || ld == std::numeric_limits<double>::infinity())
          throw Error(ErrorCode::NonFiniteLogdensity, "chain " + std::to_string(chain) + " iteration " +
                                                          std::to_string(t) + " block " + std::to_string(b) +
                                                          "; proposed state: " + dump_state(layout, x_new));
        prop += ld;
        const double log_alpha = prop - cur;
        accept_prob = log_alpha >= 0.0 ? 1.0 : std::exp(log_alpha);
        if (std::log(rng.uniform()) < log_alpha) {
          x = x_new;
          ++ad.accepted;
          u = u_new;
        }
      }
      ++ad.proposals;

      if (burning) {
        const double gain = std::pow(1.0 + static_cast<double>(t) / cfg.adapt_window, -0.6);
        ad.log_step += gain * (accept_prob - ad.target);
        ad.log_step = std::clamp(ad.log_step, -30.0, 10.0);
        if (d > 1) {
          // Forget the transient: covariance learning restarts halfway through burn-in.
          if (t == cfg.n_burnin / 2 && ad.n_seen >= 20 * d) {
            ad.n_seen = 0;
            std::fill(ad.mean.begin(), ad.mean.end(), 0.0);
            std::fill(ad.m2.begin(), ad.m2.end(), 0.0);
          }
          ++ad.n_seen;
          const double nn = static_cast<double>(ad.n_seen);
          std::vector<double> delta(d);
          for (std::size_t i = 0; i < d; ++i) {
            delta[i] = u[i] - ad.mean[i];
            ad.mean[i] += delta[i] / nn;
          }
          for (std::size_t i = 0; i < d; ++i)
            for (std::size_t k = 0; k < d; ++k) ad.m2[i * d + k] += delta[i] * (u[k] - ad.mean[k]);
          if (ad.n_seen >= 20 * d && (t + 1) % cfg.adapt_window == 0) {
            std::vector<double> cov(d * d);
            for (std::size_t i = 0; i < d * d; ++i) cov[i] = ad.m2[i] / (nn - 1.0);
            double trace = 0.0;
            for (std::size_t i = 0; i < d; ++i) trace += cov[i * d + i];
            for (std::size_t i = 0; i < d; ++i) cov[i * d + i] += 1e-10 * (trace / static_cast<double>(d) + 1e-12);
            if (cholesky(cov, d)) {
              // Re-base the step: the new factor already carries the posterior scale.
              if (!ad.learned) ad.log_step = std::log(2.38 / std::sqrt(static_cast<double>(d)));
              ad.learned = true;
              ad.chol = std::move(cov);
            }
          }
        }
      }
    }
    if (!burning) {
      out.draws.insert(out.draws.end(), x.begin(), x.end());
      if (!derived_names.empty()) {
        model.derived(x, derived_buf);
        out.draws.insert(out.draws.end(), derived_buf.begin(), derived_buf.end());
      }
    }
  }
  for (const auto& ad : adapt) {
    out.acceptance.push_back(ad.proposals ? static_cast<double>(ad.accepted) / static_cast<double>(ad.proposals) : 0.0);
    out.step.push_back(std::exp(ad.log_step));
  }
  return out;
}

}  // namespace detail

/// Runs `cfg.n_chains` independent chains and assembles the post-burn-in draws.
inline PosteriorStore run_chains(const Model& model, const ChainConfig& cfg) {
  cfg.validate();
  if (auto why = model.propriety_violation())
    throw Error(ErrorCode::ProprietyViolation, "refusing to sample an improper posterior: " + *why);

  const Layout layout(model.nodes());
  std::vector<detail::BlockPlan> plan;
  std::vector<int> owner(layout.nodes().size(), -1);
  for (const auto& blk : model.blocks()) {
    detail::BlockPlan bp;
    bp.nodes = blk.nodes;
    if (blk.nodes.empty() && !blk.conditional) throw Error(ErrorCode::Internal, "empty update block");
    std::size_t latent = 0;
    for (auto n : blk.nodes) {
      if (n >= owner.size()) throw Error(ErrorCode::Internal, "block references unknown node");
      if (owner[n] != -1) throw Error(ErrorCode::Internal, "node '" + layout.nodes()[n].name + "' in two blocks");
      owner[n] = static_cast<int>(plan.size());
      const auto& node = layout.nodes()[n];
      latent += node.support == Support::Latent;
      bp.dim += detail::free_dim(node);
    }
    if (latent != 0 && latent != blk.nodes.size()) throw Error(ErrorCode::Internal, "block mixes latent and free nodes");
    bp.latent = latent != 0 || blk.conditional;
    plan.push_back(std::move(bp));
  }
  for (std::size_t n = 0; n < owner.size(); ++n)
    if (owner[n] == -1) throw Error(ErrorCode::Internal, "node '" + layout.nodes()[n].name + "' in no block");

  const auto n_chains = static_cast<std::size_t>(cfg.n_chains);
  std::vector<detail::ChainOutput> outputs(n_chains);
  std::vector<std::exception_ptr> errors(n_chains);
  auto work = [&](std::size_t c) {
    try {
      outputs[c] = detail::run_chain(model, layout, plan, cfg, c);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (cfg.parallel && n_chains > 1) {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < n_chains; ++c) threads.emplace_back(work, c);
    for (auto& th : threads) th.join();
  } else {
    for (std::size_t c = 0; c < n_chains; ++c) work(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  PosteriorStore store;
  store.n_chains = n_chains;
  store.n_draws = static_cast<std::size_t>(cfg.n_iter - cfg.n_burnin);
  store.names = layout.flat_names();
  for (const auto& node : layout.nodes())
    for (std::size_t i = 0; i < node.size; ++i) store.reported.push_back(node.reported && node.support != Support::Latent);
  for (const auto& name : model.derived_names()) {
    store.names.push_back(name);
    store.reported.push_back(true);
  }
  const std::size_t width = store.names.size();
  store.columns.assign(width, std::vector<double>(store.total_draws()));
  for (std::size_t c = 0; c < n_chains; ++c)
    for (std::size_t t = 0; t < store.n_draws; ++t)
      for (std::size_t p = 0; p < width; ++p) store.columns[p][c * store.n_draws + t] = outputs[c].draws[t * width + p];

  store.info["config"] = cfg.to_json();
  auto acc = nlohmann::json::array();
  for (std::size_t c = 0; c < n_chains; ++c) acc.push_back(outputs[c].acceptance);
  store.info["acceptance"] = acc;
  return store;
}

}  // namespace sero::mcmc
