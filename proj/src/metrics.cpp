#include "refinery/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "refinery/judge.hpp"
#include "refinery/textsim.hpp"

namespace refinery {

bool SeenPrincipleSet::contains(std::string_view label) const {
  return labels_.count(normalize_label(label)) > 0;
}

void SeenPrincipleSet::commit(std::span<const Trajectory> trajectories) {
  for (const auto& t : trajectories) labels_.insert(normalize_label(t.principle_label));
}

Json SeenPrincipleSet::to_json() const { return Json(labels_); }

SeenPrincipleSet SeenPrincipleSet::from_json(const Json& j) {
  SeenPrincipleSet s;
  for (const auto& v : j) s.labels_.insert(normalize_label(v.get<std::string>()));
  return s;
}

double principle_discovery_rate(std::span<const Trajectory> trajectories,
                                const SeenPrincipleSet& seen) {
  if (trajectories.empty()) return 0.0;
  std::size_t unseen = 0;
  for (const auto& t : trajectories) {
    if (!seen.contains(t.principle_label)) ++unseen;
  }
  return static_cast<double>(unseen) / static_cast<double>(trajectories.size());
}

double refinement_rate(const EstepStats& stats) {
  if (stats.total == 0) return 0.0;
  return static_cast<double>(stats.refined) / static_cast<double>(stats.total);
}

CopyReport copy_precision_report(std::span<const Trajectory> trajectories, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ContractViolation("copy_precision_report: threshold outside [0,1]");
  }
  CopyReport r;
  r.threshold = threshold;
  for (const auto& t : trajectories) {
    const auto refined = tokenize(t.refined);
    double best = 0.0;
    for (const auto& g : t.golds) {
      best = std::max(best, rouge_l_tokens(refined, tokenize(g)).precision);
    }
    if (best > threshold) ++r.count;
  }
  if (!trajectories.empty()) {
    r.fraction = static_cast<double>(r.count) / static_cast<double>(trajectories.size());
  }
  return r;
}

AdvantageStats advantage_stats(std::span<const Trajectory> trajectories) {
  AdvantageStats s;
  s.count = trajectories.size();
  if (trajectories.empty()) return s;
  s.min = s.max = trajectories.front().advantage;
  double sum = 0.0;
  for (const auto& t : trajectories) {
    const double a = t.advantage;
    sum += a;
    s.min = std::min(s.min, a);
    s.max = std::max(s.max, a);
    auto bin = static_cast<long>(std::ceil(a * 10.0)) - 1;
    s.histogram[static_cast<std::size_t>(std::clamp(bin, 0L, 9L))]++;
  }
  s.mean = sum / static_cast<double>(trajectories.size());
  return s;
}

WinrateResult winrate(std::span<const WinrateItem> items, Gateway& judge, std::uint64_t seed,
                      std::size_t workers) {
  std::vector<std::optional<bool>> verdicts(items.size());  // true: A won
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      const auto& it = items[i];
      CallContext ctx{"winrate:" + it.id, 0};
      try {
        const auto v = judge_pairwise(judge, it.prompt, it.principle, it.response_a,
                                      it.response_b, mix_seed(seed, it.id), ctx);
        verdicts[i] = v.winner == Preference::kA;
      } catch (const JudgeError&) {
        // skipped
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(items.size());
        return;
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  WinrateResult r;
  std::size_t wins = 0;
  for (const auto& v : verdicts) {
    if (!v) {
      ++r.skipped;
      continue;
    }
    ++r.n;
    if (*v) ++wins;
  }
  if (r.n > 0) r.fraction = static_cast<double>(wins) / static_cast<double>(r.n);
  return r;
}

Json iteration_metrics_to_json(const IterationMetrics& m) {
  Json j;
  j["iteration"] = m.iteration;
  j["refinement_rate"] = m.refinement_rate;
  j["principle_discovery_rate"] = m.principle_discovery_rate;
  j["principle_discovery_rate_replaced"] = m.principle_discovery_rate_replaced;
  j["constitution_size"] = m.constitution_size;
  j["copy"] = {{"threshold", m.copy.threshold}, {"count", m.copy.count}, {"fraction", m.copy.fraction}};
  j["advantage"] = {{"count", m.advantage.count},
                    {"mean", m.advantage.mean},
                    {"min", m.advantage.min},
                    {"max", m.advantage.max},
                    {"histogram", m.advantage.histogram}};
  Json w = Json::object();
  for (const auto& [name, r] : m.winrates) {
    w[name] = {{"fraction", r.fraction}, {"n", r.n}, {"skipped", r.skipped}};
  }
  j["winrates"] = std::move(w);
  return j;
}

IterationMetrics iteration_metrics_from_json(const Json& j) {
  IterationMetrics m;
  m.iteration = j.at("iteration").get<int>();
  m.refinement_rate = j.at("refinement_rate").get<double>();
  m.principle_discovery_rate = j.at("principle_discovery_rate").get<double>();
  m.principle_discovery_rate_replaced = j.at("principle_discovery_rate_replaced").get<double>();
  m.constitution_size = j.at("constitution_size").get<std::size_t>();
  const auto& c = j.at("copy");
  m.copy = {c.at("count").get<std::size_t>(), c.at("fraction").get<double>(),
            c.at("threshold").get<double>()};
  const auto& a = j.at("advantage");
  m.advantage.count = a.at("count").get<std::size_t>();
  m.advantage.mean = a.at("mean").get<double>();
  m.advantage.min = a.at("min").get<double>();
  m.advantage.max = a.at("max").get<double>();
  m.advantage.histogram = a.at("histogram").get<std::array<std::size_t, 10>>();
  for (const auto& [name, r] : j.at("winrates").items()) {
    m.winrates[name] = {r.at("fraction").get<double>(), r.at("n").get<std::size_t>(),
                        r.at("skipped").get<std::size_t>()};
  }
  return m;
}

std::string metrics_csv(std::span<const IterationMetrics> series) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,refinement_rate,principle_discovery_rate,principle_discovery_rate_replaced,"
         "constitution_size,copy_count,copy_fraction,advantage_mean,advantage_min,advantage_max\n";
  for (const auto& m : series) {
    out << m.iteration << ',' << m.refinement_rate << ',' << m.principle_discovery_rate << ','
        << m.principle_discovery_rate_replaced << ',' << m.constitution_size << ',' << m.copy.count
        << ',' << m.copy.fraction << ',' << m.advantage.mean << ',' << m.advantage.min << ','
        << m.advantage.max << '\n';
  }
  return out.str();
}

}  // namespace refinery
