#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fva/corpus_io.hpp"
#include "fva/numerics.hpp"

namespace fva {

struct PcaModel {
  Vector mean;         // D
  Matrix basis;        // d x D, orthonormal rows, descending eigenvalue order
  Vector eigenvalues;  // d, positive, non-increasing
  double variance_retained = 0.0;
  double total_variance = 0.0;

  int source_dim() const { return static_cast<int>(mean.size()); }
  int components() const { return static_cast<int>(basis.rows()); }
  void validate() const;
};

// Keeps the smallest number of components whose cumulative eigenvalue
// fraction reaches variance_target. Throws on rank-0 data.
PcaModel fit_pca(const Matrix& x, double variance_target = 0.99);

enum class PcaDirection { kProject, kReconstruct };

Vector pca_map(const PcaModel& p, const Vector& x, PcaDirection direction);
inline Vector pca_project(const PcaModel& p, const Vector& x) {
  return pca_map(p, x, PcaDirection::kProject);
}
inline Vector pca_reconstruct(const PcaModel& p, const Vector& z) {
  return pca_map(p, z, PcaDirection::kReconstruct);
}
Matrix pca_project_rows(const PcaModel& p, const Matrix& x);

struct DiagGmm {
  Vector weights;     // K
  Matrix means;       // K x d
  Matrix variances;   // K x d

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
  void validate() const;
};

struct GmmFitConfig {
  int max_iters = 200;
  double tol = 1e-6;
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GmmFitResult {
  DiagGmm gmm;
  // Mean per-point log-likelihood after initialization and after every EM
  // iteration.
  std::vector<double> trace;
  int iterations = 0;
  int reseeds = 0;
  bool converged = false;
};

// k-means++ seeding then EM on diagonal Gaussians. Variances are floored in
// every M-step; a component that loses all responsibility is re-seeded at the
// worst explained point.
GmmFitResult fit_gmm(const Matrix& z, int k, const GmmFitConfig& cfg);

double gmm_loglik(const DiagGmm& g, const Vector& z);
double gmm_mean_loglik(const DiagGmm& g, const Matrix& z);

// Unconditional speaker-embedding prior: GMM over PCA coordinates.
struct SpeakerGenerator {
  PcaModel pca;
  DiagGmm gmm;
  int source_dim = 0;
  std::uint64_t seed = 0;
  std::string config_digest;

  void validate() const;
};

struct SpeakerGeneratorConfig {
  int components = 16;
  double variance_target = 0.99;
  GmmFitConfig gmm;
};

SpeakerGenerator fit_speaker_generator(const Matrix& x, const SpeakerGeneratorConfig& cfg);
// GMM fit in an existing PCA space.
SpeakerGenerator fit_speaker_generator(const Matrix& x, const PcaModel& pca,
                                       const SpeakerGeneratorConfig& cfg);

double speaker_loglik(const SpeakerGenerator& sg, const Vector& x);

// N draws, ids "cand-0000"..., voice modality.
EmbeddingTable sample_candidates(const SpeakerGenerator& sg, int n, std::uint64_t seed);

}  // namespace fva
