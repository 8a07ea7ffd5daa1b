#include "refinery/thresholdopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace refinery {

ObjectiveReport objective_j(std::span<const Embedding> embeddings, double delta, double lambda,
                            Linkage linkage) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractViolation("objective_j: lambda outside [0,1]");
  const auto clusters = agglomerate(embeddings, delta, linkage);
  std::vector<std::size_t> medoids;
  medoids.reserve(clusters.size());
  double tightness = 0.0;
  for (const auto& members : clusters) {
    const auto m = medoid(members, embeddings);
    medoids.push_back(m);
    double sum = 0.0;
    for (auto idx : members) sum += cosine_similarity(embeddings[idx], embeddings[m]);
    tightness += sum / static_cast<double>(members.size());
  }
  tightness /= static_cast<double>(clusters.size());

  double diversity = 0.0;
  if (medoids.size() >= 2) {
    double sum = 0.0;
    for (std::size_t a = 0; a < medoids.size(); ++a) {
      for (std::size_t b = a + 1; b < medoids.size(); ++b) {
        sum += 1.0 - cosine_similarity(embeddings[medoids[a]], embeddings[medoids[b]]);
      }
    }
    const double pairs = static_cast<double>(medoids.size() * (medoids.size() - 1)) / 2.0;
    diversity = sum / pairs;
  }

  ObjectiveReport r;
  r.delta = delta;
  r.lambda = lambda;
  r.cluster_count = clusters.size();
  r.diversity_term = diversity;
  r.tightness_term = tightness;
  r.j_value = lambda * diversity + (1.0 - lambda) * tightness;
  return r;
}

Json search_trace_to_json(const SearchTrace& t) {
  Json j;
  j["seed"] = t.seed;
  j["budget"] = t.budget;
  j["lo"] = t.lo;
  j["hi"] = t.hi;
  Json evals = Json::array();
  for (const auto& e : t.evaluations) {
    Json row{{"delta", e.delta}};
    if (e.failed) {
      row["value"] = nullptr;
      row["failed"] = true;
    } else {
      row["value"] = e.value;
    }
    if (e.cluster_count) row["cluster_count"] = *e.cluster_count;
    evals.push_back(std::move(row));
  }
  j["evaluations"] = std::move(evals);
  if (t.best_delta) {
    j["best_delta"] = *t.best_delta;
    j["best_value"] = t.best_value;
  } else {
    j["best_delta"] = nullptr;
    j["best_value"] = nullptr;
  }
  return j;
}

namespace {

// Lower-triangular Cholesky factor in place; false if not positive definite.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    a[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / d;
    }
  }
  return true;
}

// Solves L z = b.
std::vector<double> forward(const std::vector<double>& l, std::size_t n, std::vector<double> b) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l[i * n + k] * b[k];
    b[i] /= l[i * n + i];
  }
  return b;
}

// Solves L^T z = b.
std::vector<double> backward(const std::vector<double>& l, std::size_t n, std::vector<double> b) {
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) b[ii] -= l[k * n + ii] * b[k];
    b[ii] /= l[ii * n + ii];
  }
  return b;
}

double sq_exp(double a, double b, double ell) {
  const double d = a - b;
  return std::exp(-0.5 * d * d / (ell * ell));
}

struct Gp {
  std::vector<double> x;
  std::vector<double> chol;
  std::vector<double> alpha;
  double ell = 0.1;
};

std::optional<Gp> fit(const std::vector<double>& x, const std::vector<double>& y, double ell,
                      double noise, double* log_ml) {
  const std::size_t n = x.size();
  Gp gp;
  gp.x = x;
  gp.ell = ell;
  gp.chol.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      gp.chol[i * n + j] = sq_exp(x[i], x[j], ell) + (i == j ? noise : 0.0);
    }
  }
  if (!cholesky(gp.chol, n)) return std::nullopt;
  const auto z = forward(gp.chol, n, y);
  gp.alpha = backward(gp.chol, n, z);
  if (log_ml) {
    double fit_term = 0.0, log_det = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      fit_term += z[i] * z[i];
      log_det += std::log(gp.chol[i * n + i]);
    }
    *log_ml = -0.5 * fit_term - log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  }
  return gp;
}

void predict(const Gp& gp, double at, double& mean, double& sd) {
  const std::size_t n = gp.x.size();
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = sq_exp(at, gp.x[i], gp.ell);
  mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += k[i] * gp.alpha[i];
  const auto v = forward(gp.chol, n, k);
  double var = 1.0;
  for (double vi : v) var -= vi * vi;
  sd = std::sqrt(std::max(var, 0.0));
}

double expected_improvement(double mean, double sd, double best) {
  if (sd < 1e-12) return std::max(mean - best, 0.0);
  const double z = (mean - best) / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return (mean - best) * cdf + sd * pdf;
}

}  // namespace

SearchTrace optimize_delta(const std::function<double(double)>& objective, double lo, double hi,
                           std::size_t budget, std::uint64_t seed, const SearchOptions& options) {
  if (!(lo < hi)) throw ContractViolation("optimize_delta: lo must be below hi");
  if (budget < options.initial_points) {
    throw ContractViolation("optimize_delta: budget smaller than the initial design");
  }
  SearchTrace trace;
  trace.budget = budget;
  trace.seed = seed;
  trace.lo = lo;
  trace.hi = hi;

  std::mt19937_64 rng(seed);
  const double span = hi - lo;
  std::vector<double> xs, ys;  // successful evaluations, normalized x
  std::vector<bool> grid_used(options.grid_points, false);
  auto grid_x = [&](std::size_t g) {
    return options.grid_points == 1 ? 0.5
                                    : static_cast<double>(g) / static_cast<double>(options.grid_points - 1);
  };

  auto evaluate = [&](double u) {
    u = std::clamp(u, 0.0, 1.0);
    const double delta = lo + u * span;
    SearchEvaluation e;
    e.delta = delta;
    double v = std::numeric_limits<double>::quiet_NaN();
    try {
      v = objective(delta);
    } catch (const ContractViolation&) {
    }
    if (std::isfinite(v)) {
      e.value = v;
      xs.push_back(u);
      ys.push_back(v);
      if (!trace.best_delta || v > trace.best_value) {
        trace.best_delta = delta;
        trace.best_value = v;
      }
    } else {
      e.value = std::numeric_limits<double>::quiet_NaN();
      e.failed = true;
    }
    trace.evaluations.push_back(e);
  };

  const auto n0 = options.initial_points;
  for (std::size_t k = 0; k < n0; ++k) {
    const double u = (static_cast<double>(k) + unit_double(rng())) / static_cast<double>(n0);
    evaluate(u);
  }

  std::vector<double> ell_grid;
  for (int i = 0; i < 24; ++i) ell_grid.push_back(0.01 * std::pow(100.0, i / 23.0));

  while (trace.evaluations.size() < budget) {
    std::optional<Gp> gp;
    double best_std = 0.0;
    if (!xs.empty()) {
      double mean = 0.0;
      for (double y : ys) mean += y;
      mean /= static_cast<double>(ys.size());
      double var = 0.0;
      for (double y : ys) var += (y - mean) * (y - mean);
      double sd = std::sqrt(var / static_cast<double>(ys.size()));
      if (!(sd > 0.0)) sd = 1.0;
      std::vector<double> ystd(ys.size());
      for (std::size_t i = 0; i < ys.size(); ++i) ystd[i] = (ys[i] - mean) / sd;
      best_std = *std::max_element(ystd.begin(), ystd.end());

      double best_ml = -std::numeric_limits<double>::infinity();
      for (double ell : ell_grid) {
        double ml = 0.0;
        auto cand = fit(xs, ystd, ell, options.noise, &ml);
        if (cand && ml > best_ml) {
          best_ml = ml;
          gp = std::move(cand);
        }
      }
    }

    std::optional<std::size_t> pick;
    if (gp) {
      double best_ei = -1.0, best_sd = -1.0;
      std::optional<std::size_t> widest;
      for (std::size_t g = 0; g < options.grid_points; ++g) {
        const double u = grid_x(g);
        const bool seen = grid_used[g] || std::any_of(xs.begin(), xs.end(), [&](double x) {
                            return std::abs(x - u) < 1e-12;
                          });
        if (seen) continue;
        double m = 0.0, s = 0.0;
        predict(*gp, u, m, s);
        const double ei = expected_improvement(m, s, best_std);
        if (ei > best_ei) {
          best_ei = ei;
          pick = g;
        }
        if (s > best_sd) {
          best_sd = s;
          widest = g;
        }
      }
      // A flat surrogate yields no improvement anywhere; explore instead.
      if (pick && !(best_ei > 0.0)) pick = widest;
    }

    if (pick) {
      grid_used[*pick] = true;
      evaluate(grid_x(*pick));
    } else {
      evaluate(unit_double(rng()));
    }
  }
  return trace;
}

SearchTrace optimize_delta(std::span<const Embedding> embeddings, double lo, double hi,
                           std::size_t budget, std::uint64_t seed, double lambda, Linkage linkage,
                           const SearchOptions& options) {
  std::vector<std::size_t> counts;
  auto trace = optimize_delta(
      [&](double delta) {
        const auto r = objective_j(embeddings, delta, lambda, linkage);
        counts.push_back(r.cluster_count);
        return r.j_value;
      },
      lo, hi, budget, seed, options);
  // Every successful call pushed a count; failures threw before doing so.
  std::size_t c = 0;
  for (auto& e : trace.evaluations) {
    if (!e.failed && c < counts.size()) e.cluster_count = counts[c++];
  }
  return trace;
}

}  // namespace refinery
