#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>

namespace par {

/// Counter-based deterministic PRNG (xoshiro256**), seeded through
/// splitmix64. Identical seeds give identical draw sequences on every
/// platform. Single-owner: hand each worker its own split() stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1), 53 bits of entropy.
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [0, n); n must be positive.
  std::int64_t uniform_int(std::int64_t n);

  /// Gaussian draw via Box-Muller (second value cached).
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Independent stream derived from this generator's seed and a stream
  /// index; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// seed XOR mixed stream index, for handing out worker rngs.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Matrix product with explicit shape checking. Throws std::invalid_argument
/// naming both shapes on an inner-dimension mismatch.
Eigen::MatrixXd matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Row-wise L2 normalization. Rows with norm < eps are divided by eps
/// instead, so dead rows stay finite (and zero rows stay zero).
Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& x, double eps = 1e-8);

/// Central finite differences (f(x+h e_i) - f(x-h e_i)) / (2h) per
/// coordinate. Throws std::runtime_error naming the coordinate if f
/// evaluates non-finite.
Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h = 1e-5);

/// Throws std::runtime_error("<what>: non-finite value") if any entry is
/// NaN or infinite.
void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what);

/// FNV-1a 64-bit over a byte range; used for config and checkpoint hashes.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Shortest decimal form that parses back to the identical double; the
/// number format of every CSV artifact.
std::string format_double(double v);

}  // namespace par
