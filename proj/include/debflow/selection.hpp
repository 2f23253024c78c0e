#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace debflow {

/// P(i) = lambda / n + (1 - lambda) * softmax_i(alpha * (s_i - s_max)).
/// Throws std::invalid_argument for empty scores, lambda outside [0,1] or alpha <= 0.
std::vector<double> mixed_probabilities(std::span<const double> scores, double lambda, double alpha);

using SelectionRng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double unit_draw(SelectionRng& rng);

/// Inverse-CDF draw of an index from a probability vector.
size_t sample_index(std::span<const double> probabilities, SelectionRng& rng);

/// Draws a candidate index from the mixed distribution over `scores`.
size_t select_candidate(std::span<const double> scores, double lambda, double alpha, SelectionRng& rng);

}  // namespace debflow
