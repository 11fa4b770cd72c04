#pragma once

// Independent oracles for the data suite, shared with the acceptance binary.

#include <random>
#include <string>
#include <vector>

#include "rollforge/data/audit.hpp"
#include "rollforge/data/quality.hpp"

namespace rollforge::testing {

// O(n^2) average-rank percentile.
inline std::vector<double> brute_force_percentiles(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (v[j] < v[i]) less += 1;
      if (v[j] == v[i]) equal += 1;
    }
    out[i] = (less + (equal - 1) / 2) / static_cast<double>(n - 1);
  }
  return out;
}

// Luhn via the digit-sum table of 2*d, written out by hand.
inline bool luhn_oracle(const std::string& digits) {
  static constexpr int doubled[10] = {0, 2, 4, 6, 8, 1, 3, 5, 7, 9};
  int sum = 0;
  const std::size_t n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int d = digits[n - 1 - i] - '0';
    sum += (i % 2 == 1) ? doubled[d] : d;
  }
  return sum % 10 == 0;
}

// Every single-digit substitution of a valid number; returns how many were still accepted.
inline int luhn_single_digit_escapes(const std::string& valid) {
  int escapes = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    for (char c = '0'; c <= '9'; ++c) {
      if (c == valid[i]) continue;
      auto mutated = valid;
      mutated[i] = c;
      if (data::luhn_valid(mutated)) ++escapes;
    }
  }
  return escapes;
}

inline std::vector<data::QualityScore> random_scores(std::mt19937_64& rng, std::size_t n, int distinct_values) {
  std::uniform_int_distribution<int> pick(0, distinct_values - 1);
  std::vector<data::QualityScore> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].sample_id = "s" + std::to_string(i);
    out[i].raw[data::kIfd] = 0.1 * pick(rng);
    out[i].raw[data::kQuality] = 1.0 + 0.5 * pick(rng);
  }
  return out;
}

// Returns mismatch count between fuse_dataelf and the brute-force oracle (tolerance 1e-12).
inline int check_fusion(std::vector<data::QualityScore> scores) {
  std::vector<double> ifd, q;
  for (const auto& s : scores) {
    ifd.push_back(s.raw.at(data::kIfd));
    q.push_back(s.raw.at(data::kQuality));
  }
  const auto pi = brute_force_percentiles(ifd), pq = brute_force_percentiles(q);
  data::fuse_dataelf(scores);
  int bad = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    if (std::abs(s.percentiles.at(data::kIfd) - pi[i]) > 1e-12) ++bad;
    if (std::abs(s.percentiles.at(data::kQuality) - pq[i]) > 1e-12) ++bad;
    if (std::abs(s.fused - 0.5 * (pi[i] + pq[i])) > 1e-12) ++bad;
    if (s.fused < 0.0 || s.fused > 1.0) ++bad;
  }
  return bad;
}

inline data::Dataset clean_dataset(std::size_t n) {
  static const char* topics[] = {"gardening", "sorting algorithms", "baking bread", "the water cycle", "chess openings"};
  data::Dataset ds;
  ds.name = "clean";
  for (std::size_t i = 0; i < n; ++i) {
    data::DataSample s;
    s.id = "c" + std::to_string(i);
    s.instruction = std::string("Explain ") + topics[i % 5] + " in two sentences, variant " + std::to_string(i) + ".";
    s.response = std::string("Here is a short overview of ") + topics[i % 5] + ". Practice helps, item " +
                 std::to_string(i * 7) + ".";
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace rollforge::testing
