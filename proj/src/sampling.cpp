#include "nfmpc/sampling.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace nfmpc {

std::vector<int> first_primes(int n) {
  check_config(n >= 0, "prime count must be nonnegative");
  std::vector<int> primes;
  primes.reserve(n);
  for (int candidate = 2; static_cast<int>(primes.size()) < n; ++candidate) {
    bool is_prime = true;
    for (int p : primes) {
      if (p * p > candidate) break;
      if (candidate % p == 0) {
        is_prime = false;
        break;
      }
    }
    if (is_prime) primes.push_back(candidate);
  }
  return primes;
}

double radical_inverse(std::uint64_t index, int base) {
  check_config(index >= 1, "Halton index must be >= 1");
  check_config(base >= 2, "Halton base must be >= 2");
  double f = 1.0, r = 0.0;
  const double inv_base = 1.0 / base;
  while (index > 0) {
    f *= inv_base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

std::vector<Vec> halton_sequence(std::uint64_t first_index, std::size_t count,
                                 const std::vector<int>& bases) {
  std::vector<Vec> out(count, Vec(bases.size()));
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t d = 0; d < bases.size(); ++d)
      out[i][d] = radical_inverse(first_index + i, bases[d]);
  return out;
}

// Wichura's algorithm AS 241 (PPND16).
double normal_quantile(double p) {
  check_domain(p > 0.0 && p < 1.0, "normal quantile requires p in (0, 1)");
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
            1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return q < 0.0 ? -val : val;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double Rng::normal() { return normal_quantile(uniform()); }

std::vector<Vec> gaussian_from_halton(const std::vector<Vec>& halton, ConstSpan mean,
                                      ConstSpan sigma, bool include_mean) {
  check_dim(sigma.size() == mean.size(), "sigma/mean length mismatch");
  std::vector<Vec> out;
  out.reserve(halton.size() + (include_mean ? 1 : 0));
  if (include_mean) out.emplace_back(mean.begin(), mean.end());
  for (const Vec& row : halton) {
    check_dim(row.size() == mean.size(), "Halton row dimension mismatch");
    Vec z(mean.size());
    for (std::size_t d = 0; d < row.size(); ++d) {
      check_domain(row[d] > 0.0 && row[d] < 1.0, "Halton value outside (0, 1)");
      z[d] = mean[d] + sigma[d] * normal_quantile(row[d]);
    }
    out.push_back(std::move(z));
  }
  return out;
}

HaltonSampler::HaltonSampler(int dim, std::uint64_t start_index)
    : bases_(first_primes(dim)), index_(start_index) {
  check_config(start_index >= 1, "Halton start index must be >= 1");
}

std::vector<Vec> HaltonSampler::draw(std::size_t count) {
  auto rows = halton_sequence(index_, count, bases_);
  index_ += count;
  return rows;
}

namespace {

// Clamped uniform knot vector on [0, 1].
Vec clamped_knots(int num_ctrl, int degree) {
  const int m = num_ctrl + degree + 1;
  Vec knots(m);
  const int interior = num_ctrl - degree - 1;
  for (int i = 0; i < m; ++i) {
    if (i <= degree)
      knots[i] = 0.0;
    else if (i >= m - degree - 1)
      knots[i] = 1.0;
    else
      knots[i] = static_cast<double>(i - degree) / (interior + 1);
  }
  return knots;
}

// Cox-de Boor: all num_ctrl basis values at x.
Vec bspline_basis_row(double x, const Vec& knots, int num_ctrl, int degree) {
  Vec row(num_ctrl, 0.0);
  // locate the knot span, pinning x == 1 to the last nonempty span
  int span = degree;
  const int last = num_ctrl - 1;
  if (x >= 1.0) {
    span = last;
  } else {
    while (span < last && x >= knots[span + 1]) ++span;
  }
  Vec N(degree + 1, 0.0);
  N[0] = 1.0;
  Vec left(degree + 1), right(degree + 1);
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots[span + 1 - j];
    right[j] = knots[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  for (int j = 0; j <= degree; ++j) row[span - degree + j] = N[j];
  return row;
}

}  // namespace

Vec bspline_smooth(ConstSpan sequence, int degree, int num_control_points) {
  check_config(degree >= 1, "spline degree must be >= 1");
  check_config(num_control_points >= degree + 1,
               "spline needs at least degree+1 control points");
  const int H = static_cast<int>(sequence.size());
  if (H <= 2) return Vec(sequence.begin(), sequence.end());
  check_config(num_control_points <= H, "more control points than samples");

  const int n = num_control_points;
  const Vec knots = clamped_knots(n, degree);
  Eigen::MatrixXd A(H, n);
  for (int j = 0; j < H; ++j) {
    const double x = static_cast<double>(j) / (H - 1);
    Vec row = bspline_basis_row(x, knots, n, degree);
    for (int k = 0; k < n; ++k) A(j, k) = row[k];
  }

  // Endpoints pinned: c_0 = y_0, c_{n-1} = y_{H-1}; least squares on the rest.
  Eigen::VectorXd y(H);
  for (int j = 0; j < H; ++j) y(j) = sequence[j];
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  c(0) = y(0);
  c(n - 1) = y(H - 1);
  if (n > 2) {
    Eigen::MatrixXd Ai = A.middleCols(1, n - 2);
    Eigen::VectorXd rhs = y - A.col(0) * c(0) - A.col(n - 1) * c(n - 1);
    c.segment(1, n - 2) = (Ai.transpose() * Ai)
                              .ldlt()
                              .solve(Ai.transpose() * rhs);
  }
  Eigen::VectorXd fit = A * c;
  Vec out(H);
  for (int j = 0; j < H; ++j) out[j] = fit(j);
  out[0] = sequence[0];
  out[H - 1] = sequence[H - 1];
  return out;
}

}  // namespace nfmpc
