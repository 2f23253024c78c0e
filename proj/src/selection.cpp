#include "debflow/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace debflow {

std::vector<double> mixed_probabilities(std::span<const double> scores, double lambda, double alpha) {
  if (scores.empty()) throw std::invalid_argument("mixed_probabilities needs at least one score");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");

  const double n = static_cast<double>(scores.size());
  const double s_max = *std::max_element(scores.begin(), scores.end());
  std::vector<double> weights(scores.size());
  double total = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    weights[i] = std::exp(alpha * (scores[i] - s_max));
    total += weights[i];
  }
  std::vector<double> p(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = lambda / n + (1.0 - lambda) * (weights[i] / total);
  }
  return p;
}

double unit_draw(SelectionRng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

size_t sample_index(std::span<const double> probabilities, SelectionRng& rng) {
  if (probabilities.empty()) throw std::invalid_argument("cannot sample from an empty distribution");
  const double u = unit_draw(rng);
  double cumulative = 0.0;
  size_t last_positive = 0;
  for (size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] <= 0.0) continue;
    last_positive = i;
    cumulative += probabilities[i];
    if (u < cumulative) return i;
  }
  return last_positive;
}

size_t select_candidate(std::span<const double> scores, double lambda, double alpha, SelectionRng& rng) {
  auto p = mixed_probabilities(scores, lambda, alpha);
  return sample_index(p, rng);
}

}  // namespace debflow
