#include "fva/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "fva/error.hpp"

namespace fva {

const char* to_string(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::kIo: return "io error";
    case FormatErrorCode::kBadMagic: return "bad magic";
    case FormatErrorCode::kUnsupportedVersion: return "unsupported version";
    case FormatErrorCode::kBadModality: return "bad modality";
    case FormatErrorCode::kZeroDim: return "zero dimension";
    case FormatErrorCode::kTruncatedHeader: return "truncated header";
    case FormatErrorCode::kTruncatedRecord: return "truncated record";
    case FormatErrorCode::kEmptyId: return "empty id";
    case FormatErrorCode::kInvalidUtf8: return "invalid utf-8";
    case FormatErrorCode::kDuplicateId: return "duplicate id";
    case FormatErrorCode::kNonFiniteValue: return "non-finite value";
    case FormatErrorCode::kTrailingBytes: return "trailing bytes";
    case FormatErrorCode::kIdTooLong: return "id too long";
    case FormatErrorCode::kColumnCount: return "wrong column count";
    case FormatErrorCode::kBadLabel: return "bad label";
    case FormatErrorCode::kEmptyField: return "empty field";
    case FormatErrorCode::kMalformedDocument: return "malformed document";
    case FormatErrorCode::kFormatMismatch: return "format mismatch";
    case FormatErrorCode::kKindMismatch: return "kind mismatch";
    case FormatErrorCode::kVersionMismatch: return "version mismatch";
    case FormatErrorCode::kSchemaViolation: return "schema violation";
    case FormatErrorCode::kNonFiniteParameter: return "non-finite parameter";
  }
  return "unknown";
}

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw Error("numerics", "cosine: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw Error("numerics", "cosine: zero-norm input (degenerate embedding)");
  }
  return a.dot(b) / (na * nb);
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out(r, c) = std::exp(m(r, c) - mx);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                        const Vector& p, double eps) {
  if (!(eps > 0.0)) throw Error("numerics", "finite_diff_grad: eps must be > 0");
  Vector g(p.size());
  Vector probe = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    probe[i] = p[i] + eps;
    const double up = f(probe);
    probe[i] = p[i] - eps;
    const double down = f(probe);
    probe[i] = p[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("numerics", "finite_diff_grad: non-finite evaluation at coordinate " +
                                  std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Vector& v, const char* module, const std::string& what) {
  if (!v.allFinite()) throw Error(module, "non-finite values in " + what);
}

void require_finite(const Matrix& m, const char* module, const std::string& what) {
  if (!m.allFinite()) throw Error(module, "non-finite values in " + what);
}

Vector normalized(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw Error("numerics", "cannot normalize a zero vector");
  return v / n;
}

Matrix stack_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw Error("numerics", "stack_rows: ragged rows");
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t state = seed ^ (tag * 0xd1b54a32d192ed03ULL);
  splitmix64(state);
  return splitmix64(state);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return derive_seed(seed, fnv1a64(tag));
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

RandomStream::RandomStream(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& s : s_) s = splitmix64(state);
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  if (n == 0) throw Error("numerics", "RandomStream::below(0)");
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

Vector RandomStream::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace fva
