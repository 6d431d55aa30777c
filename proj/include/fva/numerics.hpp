#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace fva {

// All arithmetic is double precision. Batches are stored with one sample per
// row.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// a.b / (|a| |b|). Throws on dimension mismatch or a zero-norm input.
double cosine(const Vector& a, const Vector& b);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);

// Central-difference gradient of f at p. Used as the test oracle for every
// analytic gradient in the project.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                        const Vector& p, double eps);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);
void require_finite(const Vector& v, const char* module, const std::string& what);
void require_finite(const Matrix& m, const char* module, const std::string& what);

Vector normalized(const Vector& v);

// Stacks vectors as rows.
Matrix stack_rows(const std::vector<Vector>& rows);

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t& state);
// Seed for an independent child stream; parallel workers must use this rather
// than share a stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// xoshiro256** seeded through splitmix64. Normals come from the Marsaglia
// polar method. The identifier is persisted next to every artifact that
// consumed randomness.
class RandomStream {
 public:
  static constexpr const char* kAlgorithm = "xoshiro256starstar-polar/v1";

  explicit RandomStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n);
  double normal();
  Vector normal_vector(Eigen::Index n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Runs fn(i) for i in [0, n) over at most `threads` workers in contiguous
// chunks. Callers write results into per-index slots so the outcome does not
// depend on scheduling.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn);

unsigned default_threads();

}  // namespace fva
