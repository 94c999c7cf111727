#pragma once

#include <cstdint>
#include <vector>

#include "nfmpc/common.hpp"

namespace nfmpc {

/// First n primes, the Halton bases for an n-dimensional sequence.
std::vector<int> first_primes(int n);

/// Base-b radical inverse of index (index >= 1), strictly inside (0, 1).
double radical_inverse(std::uint64_t index, int base);

/// Rows `first_index .. first_index+count-1` of the Halton sequence over the
/// given bases.
std::vector<Vec> halton_sequence(std::uint64_t first_index, std::size_t count,
                                 const std::vector<int>& bases);

/// Standard-normal quantile (inverse CDF) by rational approximation,
/// |error| well under 1e-9 on (0, 1).
double normal_quantile(double p);

double normal_cdf(double x);

/// Maps uniform rows through the quantile and an elementwise affine
/// transform: z = mean + sigma .* quantile(u). When include_mean is set the
/// mean itself is prepended as the first sample.
std::vector<Vec> gaussian_from_halton(const std::vector<Vec>& halton, ConstSpan mean,
                                      ConstSpan sigma, bool include_mean = true);

/// Stateful Halton stream; one controller owns one stream so that repeated
/// runs with the same configuration consume identical points.
class HaltonSampler {
 public:
  HaltonSampler(int dim, std::uint64_t start_index = 1);

  std::vector<Vec> draw(std::size_t count);
  std::uint64_t index() const { return index_; }
  int dim() const { return static_cast<int>(bases_.size()); }

 private:
  std::vector<int> bases_;
  std::uint64_t index_;
};

/// Least-squares fit of a clamped uniform B-spline (given degree and number
/// of control points) to the sequence, evaluated back on the same grid.
/// Endpoints are preserved exactly.
Vec bspline_smooth(ConstSpan sequence, int degree, int num_control_points);

}  // namespace nfmpc
