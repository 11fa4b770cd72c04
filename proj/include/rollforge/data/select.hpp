#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rollforge/data/dataset.hpp"
#include "rollforge/data/quality.hpp"

namespace rollforge::data {

using Embedding = std::vector<double>;

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual Embedding embed(const DataSample& sample) = 0;
  virtual std::size_t dim() const = 0;
};

// Hashed bag of words, L2-normalised.
class MockEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit MockEmbeddingBackend(std::size_t dim = 16, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  Embedding embed(const DataSample& sample) override;
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<Embedding> centroids;
  double inertia = 0.0;
  int iterations = 0;
};

// k-means++ seeding; stops after max_iter or when relative inertia change < tol.
KMeansResult kmeans(const std::vector<Embedding>& points, std::size_t k, std::uint64_t seed, int max_iter = 100,
                    double tol = 1e-4);

// Largest-remainder apportionment of k across sizes, capped at each size.
// Overflow moves to the next clusters in remainder order. Sum is exactly k.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t k);

struct Selection {
  std::vector<std::string> sample_ids;  // cluster order, then descending score
  std::vector<std::size_t> cluster_of;  // parallel to sample_ids
  std::vector<std::size_t> cluster_sizes;
  std::vector<std::size_t> quotas;
};

// scores and embeddings are parallel. Ties in fused score go to the smaller sample_id.
Selection select_diverse(const std::vector<QualityScore>& scores, const std::vector<Embedding>& embeddings, std::size_t k,
                         std::size_t num_clusters, std::uint64_t seed);

}  // namespace rollforge::data
