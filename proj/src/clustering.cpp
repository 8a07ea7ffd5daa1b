#include "refinery/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "refinery/common.hpp"

namespace refinery {

Linkage parse_linkage(std::string_view name) {
  if (name == "ward") return Linkage::kWard;
  if (name == "complete") return Linkage::kComplete;
  if (name == "average") return Linkage::kAverage;
  throw ValidationError("unknown linkage '" + std::string(name) + "'");
}

std::string_view linkage_name(Linkage l) {
  switch (l) {
    case Linkage::kWard: return "ward";
    case Linkage::kComplete: return "complete";
    case Linkage::kAverage: return "average";
  }
  return "ward";
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

void check_embeddings(std::span<const Embedding> embeddings) {
  for (const auto& e : embeddings) {
    if (e.size() != embeddings.front().size()) {
      throw ContractViolation("embedding dimension mismatch");
    }
    for (double v : e) {
      if (!std::isfinite(v)) throw ContractViolation("non-finite embedding component");
    }
  }
}

// Identical vectors grouped; groups ordered by their first member index.
struct Groups {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> representative;  // index of first member
};

Groups group_identical(std::span<const Embedding> embeddings,
                       std::span<const std::size_t> indices) {
  Groups g;
  std::map<Embedding, std::size_t> slot;
  for (auto idx : indices) {
    auto [it, inserted] = slot.try_emplace(embeddings[idx], g.members.size());
    if (inserted) {
      g.members.emplace_back();
      g.representative.push_back(idx);
    }
    g.members[it->second].push_back(idx);
  }
  return g;
}

// Condensed upper-triangular distance storage over positions 0..m-1.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(std::size_t m) : m_(m), d_(m > 1 ? m * (m - 1) / 2 : 0) {}
  double& at(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return d_[offset(i) + (j - i - 1)];
  }

 private:
  std::size_t offset(std::size_t i) const { return i * (2 * m_ - i - 1) / 2; }
  std::size_t m_;
  std::vector<double> d_;
};

}  // namespace

std::vector<std::vector<std::size_t>> agglomerate(std::span<const Embedding> embeddings,
                                                  double delta, Linkage linkage) {
  if (embeddings.empty()) throw ContractViolation("agglomerate: no embeddings");
  if (!(delta > 0.0)) throw ContractViolation("agglomerate: delta must be positive");
  check_embeddings(embeddings);

  std::vector<std::size_t> all(embeddings.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Groups groups = group_identical(embeddings, all);
  const std::size_t m = groups.members.size();

  std::vector<double> size(m);
  for (std::size_t i = 0; i < m; ++i) size[i] = static_cast<double>(groups.members[i].size());

  DistanceMatrix dist(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      double d = euclidean_distance(embeddings[groups.representative[i]],
                                    embeddings[groups.representative[j]]);
      if (linkage == Linkage::kWard) d *= std::sqrt(2.0 * size[i] * size[j] / (size[i] + size[j]));
      dist.at(i, j) = d;
    }
  }

  // Positions stay ordered by cluster id (smallest member), since a merge
  // keeps the lower position.
  std::vector<bool> active(m, true);
  std::vector<std::size_t> nn(m, 0);
  std::vector<double> nnd(m, std::numeric_limits<double>::infinity());
  auto rescan = [&](std::size_t i) {
    nnd[i] = std::numeric_limits<double>::infinity();
    nn[i] = i;
    for (std::size_t k = i + 1; k < m; ++k) {
      if (!active[k]) continue;
      const double d = dist.at(i, k);
      if (d < nnd[i]) {
        nnd[i] = d;
        nn[i] = k;
      }
    }
  };
  for (std::size_t i = 0; i < m; ++i) rescan(i);

  std::vector<std::vector<std::size_t>> members = std::move(groups.members);
  for (std::size_t remaining = m; remaining > 1; --remaining) {
    std::size_t a = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (active[i] && nn[i] != i && (a == m || nnd[i] < nnd[a])) a = i;
    }
    if (a == m || nnd[a] >= delta) break;
    const std::size_t b = nn[a];
    const double dab = nnd[a];

    for (std::size_t k = 0; k < m; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const double dka = dist.at(k, a), dkb = dist.at(k, b);
      double d = 0.0;
      switch (linkage) {
        case Linkage::kWard: {
          const double t = size[a] + size[b] + size[k];
          const double sq = ((size[a] + size[k]) * dka * dka + (size[b] + size[k]) * dkb * dkb -
                             size[k] * dab * dab) / t;
          d = std::sqrt(std::max(0.0, sq));
          break;
        }
        case Linkage::kComplete: d = std::max(dka, dkb); break;
        case Linkage::kAverage: d = (size[a] * dka + size[b] * dkb) / (size[a] + size[b]); break;
      }
      dist.at(k, a) = d;
    }
    active[b] = false;
    size[a] += size[b];
    members[a].insert(members[a].end(), members[b].begin(), members[b].end());
    members[b].clear();

    rescan(a);
    for (std::size_t k = 0; k < m; ++k) {
      if (!active[k] || k == a || k > b) continue;
      if (nn[k] == a || nn[k] == b) {
        rescan(k);
      } else if (k < a) {
        const double d = dist.at(k, a);
        if (d < nnd[k] || (d == nnd[k] && a < nn[k])) {
          nnd[k] = d;
          nn[k] = a;
        }
      }
    }
  }

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < m; ++i) {
    if (!active[i]) continue;
    std::sort(members[i].begin(), members[i].end());
    out.push_back(std::move(members[i]));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });
  return out;
}

std::size_t medoid(std::span<const std::size_t> members, std::span<const Embedding> embeddings) {
  if (members.empty()) throw ContractViolation("medoid: empty cluster");
  std::vector<std::size_t> sorted(members.begin(), members.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.size() == 1) return sorted.front();
  const Groups g = group_identical(embeddings, sorted);
  // Groups come out in first-member order, so strict < keeps the lowest index.
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.members.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < g.members.size(); ++j) {
      if (i == j) continue;
      sum += static_cast<double>(g.members[j].size()) *
             euclidean_distance(embeddings[g.representative[i]], embeddings[g.representative[j]]);
    }
    if (sum < best_sum) {
      best_sum = sum;
      best = i;
    }
  }
  return g.representative[best];
}

}  // namespace refinery
