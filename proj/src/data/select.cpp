#include "rollforge/data/select.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rollforge/core/errors.hpp"
#include "rollforge/core/hash.hpp"

namespace rollforge::data {

namespace {

double sq_dist(const Embedding& a, const Embedding& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace

Embedding MockEmbeddingBackend::embed(const DataSample& sample) {
  Embedding v(dim_, 0.0);
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const auto h = core::Fnv1a{}.add(seed_).add(word).digest();
    v[h % dim_] += (h >> 63) ? 1.0 : -1.0;
    word.clear();
  };
  for (char c : sample.instruction + " " + sample.response) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (norm > 0) for (auto& x : v) x /= norm;
  return v;
}

KMeansResult kmeans(const std::vector<Embedding>& points, std::size_t k, std::uint64_t seed, int max_iter, double tol) {
  const std::size_t n = points.size();
  if (k == 0) throw ValidationError("num_clusters", "must be positive");
  if (n == 0) return {};
  for (const auto& p : points) {
    if (p.size() != points[0].size()) throw ValidationError("embeddings", "inconsistent embedding dimensions");
  }
  k = std::min(k, n);
  std::mt19937_64 rng(seed);
  KMeansResult r;
  r.assignment.assign(n, 0);

  // k-means++ seeding
  r.centroids.push_back(points[rng() % n]);
  std::vector<double> d2(n);
  while (r.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::numeric_limits<double>::max();
      for (const auto& c : r.centroids) d2[i] = std::min(d2[i], sq_dist(points[i], c));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      std::discrete_distribution<std::size_t> dist(d2.begin(), d2.end());
      pick = dist(rng);
    } else {
      pick = rng() % n;
    }
    r.centroids.push_back(points[pick]);
  }

  double prev = std::numeric_limits<double>::max();
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    r.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(points[i], r.centroids[c]);
        if (d < best) {
          best = d;
          r.assignment[i] = c;
        }
      }
      r.inertia += best;
    }
    std::vector<Embedding> sums(k, Embedding(points[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      for (std::size_t d = 0; d < points[i].size(); ++d) sums[r.assignment[i]][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // keep the old centroid
      for (auto& x : sums[c]) x /= static_cast<double>(counts[c]);
      r.centroids[c] = std::move(sums[c]);
    }
    if (prev < std::numeric_limits<double>::max() &&
        (prev == 0.0 || std::abs(prev - r.inertia) / prev < tol)) {
      break;
    }
    prev = r.inertia;
  }
  r.iterations = std::min(r.iterations, max_iter);
  return r;
}

std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t k) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (k > total) {
    throw ValidationError("k", "selection of " + std::to_string(k) + " exceeds dataset size " + std::to_string(total));
  }
  std::vector<std::size_t> quota(sizes.size(), 0);
  if (k == 0) return quota;
  std::vector<double> remainder(sizes.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const double exact = static_cast<double>(k) * static_cast<double>(sizes[c]) / static_cast<double>(total);
    quota[c] = std::min(sizes[c], static_cast<std::size_t>(std::floor(exact)));
    remainder[c] = exact - std::floor(exact);
    assigned += quota[c];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return sizes[a] > sizes[b];
  });
  while (assigned < k) {
    for (auto c : order) {
      if (assigned == k) break;
      if (quota[c] < sizes[c]) {
        ++quota[c];
        ++assigned;
      }
    }
  }
  return quota;
}

Selection select_diverse(const std::vector<QualityScore>& scores, const std::vector<Embedding>& embeddings, std::size_t k,
                         std::size_t num_clusters, std::uint64_t seed) {
  if (scores.size() != embeddings.size()) {
    throw ValidationError("embeddings", "expected one embedding per scored sample");
  }
  if (k > scores.size()) {
    throw ValidationError("k", "selection of " + std::to_string(k) + " exceeds dataset size " +
                                   std::to_string(scores.size()));
  }
  Selection sel;
  if (scores.empty()) return sel;
  const auto km = kmeans(embeddings, num_clusters, seed);
  const std::size_t clusters = km.centroids.size();
  std::vector<std::vector<std::size_t>> members(clusters);
  for (std::size_t i = 0; i < scores.size(); ++i) members[km.assignment[i]].push_back(i);
  for (const auto& m : members) sel.cluster_sizes.push_back(m.size());
  sel.quotas = apportion(sel.cluster_sizes, k);
  for (std::size_t c = 0; c < clusters; ++c) {
    auto& m = members[c];
    std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a].fused != scores[b].fused) return scores[a].fused > scores[b].fused;
      return scores[a].sample_id < scores[b].sample_id;
    });
    for (std::size_t i = 0; i < sel.quotas[c]; ++i) {
      sel.sample_ids.push_back(scores[m[i]].sample_id);
      sel.cluster_of.push_back(c);
    }
  }
  return sel;
}

}  // namespace rollforge::data
