#include "fva/speaker_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "fva/error.hpp"

namespace fva {

namespace {
constexpr const char* kModule = "speaker_gen";
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}  // namespace

void PcaModel::validate() const {
  if (mean.size() == 0 || basis.cols() != mean.size() || eigenvalues.size() != basis.rows() ||
      basis.rows() == 0) {
    throw Error(kModule, "PCA model shapes are inconsistent");
  }
  if (!mean.allFinite() || !basis.allFinite() || !eigenvalues.allFinite()) {
    throw Error(kModule, "PCA model has non-finite values");
  }
}

PcaModel fit_pca(const Matrix& x, double variance_target) {
  if (x.rows() < 2) throw Error(kModule, "fit_pca needs at least 2 rows");
  if (!x.allFinite()) throw Error(kModule, "fit_pca: non-finite input");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw Error(kModule, "variance target must lie in (0, 1]");
  }
  PcaModel p;
  p.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - p.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(kModule, "eigendecomposition failed");

  const Eigen::Index dim = x.cols();
  Vector values = eig.eigenvalues().reverse();
  Matrix vectors = eig.eigenvectors().rowwise().reverse();
  const double largest = values[0];
  if (!(largest > 0.0)) throw Error(kModule, "fit_pca: rank-0 data (all rows identical)");
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (values[i] < largest * 1e-12) values[i] = 0.0;
  }
  p.total_variance = values.sum();

  Eigen::Index keep = 0;
  double cumulative = 0.0;
  while (keep < dim) {
    cumulative += values[keep];
    ++keep;
    if (cumulative / p.total_variance >= variance_target) break;
  }
  while (keep > 1 && values[keep - 1] <= 0.0) --keep;

  p.basis.resize(keep, dim);
  for (Eigen::Index c = 0; c < keep; ++c) {
    Vector v = vectors.col(c);
    // Sign convention: largest-magnitude entry positive, ties to lowest index.
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < dim; ++i) {
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    }
    if (v[arg] < 0.0) v = -v;
    p.basis.row(c) = v.transpose();
  }
  p.eigenvalues = values.head(keep);
  p.variance_retained = p.eigenvalues.sum() / p.total_variance;
  return p;
}

Vector pca_map(const PcaModel& p, const Vector& x, PcaDirection direction) {
  if (direction == PcaDirection::kProject) {
    if (x.size() != p.mean.size()) throw Error(kModule, "pca project: dimension mismatch");
    return p.basis * (x - p.mean);
  }
  if (x.size() != p.basis.rows()) throw Error(kModule, "pca reconstruct: dimension mismatch");
  return p.basis.transpose() * x + p.mean;
}

Matrix pca_project_rows(const PcaModel& p, const Matrix& x) {
  if (x.cols() != p.mean.size()) throw Error(kModule, "pca project: dimension mismatch");
  return (x.rowwise() - p.mean.transpose()) * p.basis.transpose();
}

// ---------------------------------------------------------------------------
// GMM

void DiagGmm::validate() const {
  const auto k = weights.size();
  if (k == 0 || means.rows() != k || variances.rows() != k || variances.cols() != means.cols()) {
    throw Error(kModule, "GMM shapes are inconsistent");
  }
  if (!weights.allFinite() || !means.allFinite() || !variances.allFinite()) {
    throw Error(kModule, "GMM has non-finite parameters");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-9 || (weights.array() < 0.0).any()) {
    throw Error(kModule, "GMM weights are not a distribution");
  }
  if ((variances.array() <= 0.0).any()) throw Error(kModule, "GMM variances must be positive");
}

namespace {

// Log of pi_k N(z; mu_k, diag v_k) for every component.
void component_logs(const DiagGmm& g, const Eigen::Ref<const Eigen::RowVectorXd>& z,
                    const Vector& log_norm, Eigen::Ref<Eigen::RowVectorXd> out) {
  for (Eigen::Index k = 0; k < g.weights.size(); ++k) {
    const auto diff = z - g.means.row(k);
    const double maha = (diff.array().square() / g.variances.row(k).array()).sum();
    out[k] = log_norm[k] - 0.5 * maha;
  }
}

Vector log_normalizers(const DiagGmm& g) {
  Vector out(g.weights.size());
  const double d = static_cast<double>(g.means.cols());
  for (Eigen::Index k = 0; k < g.weights.size(); ++k) {
    out[k] = std::log(g.weights[k]) - 0.5 * d * kLog2Pi -
             0.5 * g.variances.row(k).array().log().sum();
  }
  return out;
}

double lse(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

std::vector<Eigen::Index> kmeans_pp(const Matrix& z, int k, RandomStream& rng) {
  const Eigen::Index n = z.rows();
  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Vector dist = (z.rowwise() - z.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = dist.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist[i];
        if (acc > r && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining points coincide with a center; farthest is ambiguous,
      // take the lowest index.
      dist.maxCoeff(&pick);
    }
    centers.push_back(pick);
    dist = dist.cwiseMin((z.rowwise() - z.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

double gmm_loglik(const DiagGmm& g, const Vector& z) {
  if (z.size() != g.means.cols()) throw Error(kModule, "gmm_loglik: dimension mismatch");
  const Vector norms = log_normalizers(g);
  Eigen::RowVectorXd logs(g.weights.size());
  component_logs(g, z.transpose(), norms, logs);
  return lse(logs);
}

double gmm_mean_loglik(const DiagGmm& g, const Matrix& z) {
  if (z.cols() != g.means.cols()) throw Error(kModule, "gmm_loglik: dimension mismatch");
  const Vector norms = log_normalizers(g);
  Eigen::RowVectorXd logs(g.weights.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    component_logs(g, z.row(i), norms, logs);
    total += lse(logs);
  }
  return total / static_cast<double>(z.rows());
}

GmmFitResult fit_gmm(const Matrix& z, int k, const GmmFitConfig& cfg) {
  const Eigen::Index n = z.rows();
  const Eigen::Index d = z.cols();
  if (k < 1) throw Error(kModule, "fit_gmm: K must be >= 1");
  if (n < k) throw Error(kModule, "fit_gmm: fewer points (" + std::to_string(n) +
                                      ") than components (" + std::to_string(k) + ")");
  if (!z.allFinite()) throw Error(kModule, "fit_gmm: non-finite data");
  if (!(cfg.variance_floor > 0.0)) throw Error(kModule, "fit_gmm: variance floor must be > 0");

  const Eigen::RowVectorXd global_mean = z.colwise().mean();
  const Eigen::RowVectorXd global_var =
      ((z.rowwise() - global_mean).array().square().colwise().sum() / static_cast<double>(n))
          .max(cfg.variance_floor);

  RandomStream rng(derive_seed(cfg.seed, "fit_gmm/kmeans++"));
  const auto centers = kmeans_pp(z, k, rng);

  GmmFitResult result;
  DiagGmm& g = result.gmm;
  g.weights = Vector::Constant(k, 1.0 / k);
  g.means.resize(k, d);
  g.variances.resize(k, d);
  for (int c = 0; c < k; ++c) g.means.row(c) = z.row(centers[static_cast<std::size_t>(c)]);

  // Initial weights and variances from the hard nearest-center partition.
  {
    std::vector<int> assign(static_cast<std::size_t>(n));
    Vector counts = Vector::Zero(k);
    Matrix sq = Matrix::Zero(k, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      (g.means.rowwise() - z.row(i)).rowwise().squaredNorm().minCoeff(&best);
      assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
      counts[best] += 1.0;
      sq.row(best) += (z.row(i) - g.means.row(best)).array().square().matrix();
    }
    for (int c = 0; c < k; ++c) {
      g.weights[c] = counts[c] / static_cast<double>(n);
      if (counts[c] >= 2.0) {
        g.variances.row(c) = (sq.row(c) / counts[c]).array().max(cfg.variance_floor).matrix();
      } else {
        g.variances.row(c) = global_var;
      }
    }
  }

  Matrix resp(n, k);
  Vector point_ll(n);
  auto e_step = [&]() {
    const Vector norms = log_normalizers(g);
    Eigen::RowVectorXd logs(k);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      component_logs(g, z.row(i), norms, logs);
      const double l = lse(logs);
      point_ll[i] = l;
      total += l;
      resp.row(i) = (logs.array() - l).exp().matrix();
    }
    return total / static_cast<double>(n);
  };

  double ll = e_step();
  result.trace.push_back(ll);
  for (int it = 0; it < cfg.max_iters; ++it) {
    // M-step.
    const Vector nk = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      if (nk[c] < 1e-10) {
        Eigen::Index worst;
        point_ll.minCoeff(&worst);
        std::cerr << "[speaker_gen] component " << c << " lost all responsibility; re-seeded at point "
                  << worst << "\n";
        g.means.row(c) = z.row(worst);
        g.variances.row(c) = global_var;
        g.weights[c] = 1.0 / static_cast<double>(n);
        ++result.reseeds;
        continue;
      }
      g.weights[c] = nk[c] / static_cast<double>(n);
      const Eigen::RowVectorXd mu = (resp.col(c).transpose() * z) / nk[c];
      g.means.row(c) = mu;
      Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
      for (Eigen::Index i = 0; i < n; ++i) {
        var += resp(i, c) * (z.row(i) - mu).array().square().matrix();
      }
      g.variances.row(c) = (var / nk[c]).array().max(cfg.variance_floor).matrix();
    }
    g.weights /= g.weights.sum();

    const double next = e_step();
    result.trace.push_back(next);
    result.iterations = it + 1;
    const double gain = next - ll;
    ll = next;
    if (!std::isfinite(ll)) throw Error(kModule, "EM produced a non-finite log-likelihood");
    if (gain < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Generator

void SpeakerGenerator::validate() const {
  pca.validate();
  gmm.validate();
  if (gmm.dim() != pca.components()) {
    throw Error(kModule, "GMM dimension does not match PCA component count");
  }
  if (source_dim != pca.source_dim()) throw Error(kModule, "source dimension mismatch");
}

SpeakerGenerator fit_speaker_generator(const Matrix& x, const SpeakerGeneratorConfig& cfg) {
  return fit_speaker_generator(x, fit_pca(x, cfg.variance_target), cfg);
}

SpeakerGenerator fit_speaker_generator(const Matrix& x, const PcaModel& pca,
                                       const SpeakerGeneratorConfig& cfg) {
  SpeakerGenerator sg;
  sg.pca = pca;
  sg.source_dim = static_cast<int>(x.cols());
  sg.seed = cfg.gmm.seed;
  sg.gmm = fit_gmm(pca_project_rows(pca, x), cfg.components, cfg.gmm).gmm;
  return sg;
}

double speaker_loglik(const SpeakerGenerator& sg, const Vector& x) {
  return gmm_loglik(sg.gmm, pca_project(sg.pca, x));
}

EmbeddingTable sample_candidates(const SpeakerGenerator& sg, int n, std::uint64_t seed) {
  if (n < 1) throw Error(kModule, "sample_candidates: N must be >= 1");
  RandomStream rng(derive_seed(seed, "sample_candidates"));
  EmbeddingTable out(Modality::kVoice, sg.source_dim);
  int width = 4;
  for (int v = n - 1; v >= 10000; v /= 10) ++width;
  const int k = sg.gmm.components();
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    int c = k - 1;
    double acc = 0.0;
    for (int j = 0; j < k; ++j) {
      acc += sg.gmm.weights[j];
      if (u < acc) {
        c = j;
        break;
      }
    }
    Vector z(sg.gmm.dim());
    for (int j = 0; j < z.size(); ++j) {
      z[j] = sg.gmm.means(c, j) + std::sqrt(sg.gmm.variances(c, j)) * rng.normal();
    }
    std::string num = std::to_string(i);
    if (static_cast<int>(num.size()) < width) num.insert(0, static_cast<std::size_t>(width) - num.size(), '0');
    out.add("cand-" + num, pca_reconstruct(sg.pca, z));
  }
  return out;
}

}  // namespace fva
