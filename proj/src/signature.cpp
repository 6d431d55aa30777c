#include "fva/signature.hpp"

#include <cmath>
#include <cstdio>

#include "fva/error.hpp"
#include "fva/training.hpp"

namespace fva {

namespace {
constexpr const char* kModule = "signature";
}

void MockOracleConfig::validate(int dim) const {
  if (!(contraction >= 0.0 && contraction <= 1.0)) {
    throw Error(kModule, "mock oracle contraction must lie in [0, 1]");
  }
  if (!std::isfinite(angle) || !std::isfinite(noise) || noise < 0.0) {
    throw Error(kModule, "mock oracle angle/noise must be finite, noise >= 0");
  }
  if (attractor.size() != dim || !attractor.allFinite()) {
    throw Error(kModule, "mock oracle attractor must be a finite vector of the oracle dimension");
  }
}

MockOracle::MockOracle(MockOracleConfig cfg) : cfg_(std::move(cfg)) {
  const auto d = cfg_.attractor.size();
  if (d == 0) throw Error(kModule, "mock oracle needs an attractor to fix its dimension");
  cfg_.validate(static_cast<int>(d));
  RandomStream rng(derive_seed(cfg_.seed, "mock_oracle/rotation"));
  Matrix g(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix rr = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < d; ++c) {
    if (rr(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  Matrix block = Matrix::Identity(d, d);
  const double cs = std::cos(cfg_.angle);
  const double sn = std::sin(cfg_.angle);
  for (Eigen::Index p = 0; p + 1 < d; p += 2) {
    block(p, p) = cs;
    block(p, p + 1) = -sn;
    block(p + 1, p) = sn;
    block(p + 1, p + 1) = cs;
  }
  rotation_ = q * block * q.transpose();
}

Vector MockOracle::apply(const Vector& e, std::string_view key) const {
  if (e.size() != cfg_.attractor.size()) throw Error(kModule, "mock oracle: dimension mismatch");
  const double lambda = cfg_.contraction;
  Vector out = rotation_ * (lambda * e + (1.0 - lambda) * cfg_.attractor);
  if (cfg_.noise > 0.0) {
    RandomStream rng(derive_seed(cfg_.seed, fnv1a64(key)));
    out += cfg_.noise * rng.normal_vector(out.size());
  }
  const double n = out.norm();
  if (!(n > 0.0)) throw Error(kModule, "mock oracle produced a zero vector for '" + std::string(key) + "'");
  return out / n;
}

std::string MockOracle::descriptor() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "mock(contraction=%.17g,angle=%.17g,noise=%.17g,seed=%llu)",
                cfg_.contraction, cfg_.angle, cfg_.noise,
                static_cast<unsigned long long>(cfg_.seed));
  return buf;
}

Vector mock_oracle_apply(const MockOracle& oracle, const Vector& e, std::string_view key) {
  return oracle.apply(e, key);
}

ExternalOracle::ExternalOracle(EmbeddingTable reembedded, std::string source)
    : table_(std::move(reembedded)), source_(std::move(source)) {}

Vector ExternalOracle::apply(const Vector& e, std::string_view key) const {
  if (e.size() != table_.dim()) throw Error(kModule, "external oracle: dimension mismatch");
  auto idx = table_.find(std::string(key));
  if (!idx) {
    throw Error(kModule, "external oracle has no re-embedding for '" + std::string(key) + "'");
  }
  return table_.vector(*idx);
}

std::string ExternalOracle::descriptor() const { return "external(" + source_ + ")"; }

void write_oracle_request(const EmbeddingTable& embeddings, const std::string& path) {
  write_embeddings(embeddings, path);
}

double signature_loss_and_grads(const SignatureParams& p, const Matrix& inputs,
                                const Matrix& targets, SignatureParams* grad) {
  MlpTape tape;
  const Matrix out = mlp_forward_batch(p, inputs, grad ? &tape : nullptr);
  const Eigen::Index n = out.rows();
  const Vector on = out.rowwise().norm();
  const Vector tn = targets.rowwise().norm();
  double loss = 0.0;
  Matrix d_out(n, out.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(on[i] > 0.0) || !(tn[i] > 0.0)) {
      throw Error(kModule, "zero-norm signature output or target at row " + std::to_string(i));
    }
    const Eigen::RowVectorXd oh = out.row(i) / on[i];
    const Eigen::RowVectorXd th = targets.row(i) / tn[i];
    const double c = oh.dot(th);
    loss += 1.0 - c;
    // d(-cos)/d out
    d_out.row(i) = -(th - c * oh) / on[i] / static_cast<double>(n);
  }
  if (grad) mlp_backward(p, tape, d_out, *grad);
  return loss / static_cast<double>(n);
}

namespace {

double mean_cosine(const SignatureParams& p, const Matrix& inputs, const Matrix& targets) {
  if (inputs.rows() == 0) return 0.0;
  return 1.0 - signature_loss_and_grads(p, inputs, targets, nullptr);
}

bool identity_capable(const std::vector<int>& dims) {
  const int d = dims.front();
  if (dims.size() < 3 || dims.back() != d) return false;
  for (std::size_t i = 1; i + 1 < dims.size(); ++i)
    if (dims[i] < 2 * d) return false;
  return true;
}

// x = relu(x) - relu(-x): the first layer splits x into [x; -x], hidden layers
// pass both halves through, the last layer recombines them.
SignatureParams identity_mlp(const std::vector<int>& dims) {
  const int d = dims.front();
  SignatureParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{Matrix::Zero(dims[l + 1], dims[l]), Vector::Zero(dims[l + 1])};
    if (l == 0) {
      layer.weight.block(0, 0, d, d).setIdentity();
      layer.weight.block(d, 0, d, d) = -Matrix::Identity(d, d);
    } else if (l + 2 == dims.size()) {
      layer.weight.block(0, 0, d, d).setIdentity();
      layer.weight.block(0, d, d, d) = -Matrix::Identity(d, d);
    } else {
      layer.weight.block(0, 0, 2 * d, 2 * d).setIdentity();
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

}  // namespace

DistillResult distill_signature(const TtsOracle& oracle, const EmbeddingTable& embeddings,
                                const DistillConfig& cfg) {
  if (embeddings.empty()) throw Error(kModule, "distill_signature: no embeddings");
  if (oracle.dim() != embeddings.dim()) throw Error(kModule, "oracle/embedding dimension mismatch");
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.learning_rate >= 0.0)) {
    throw Error(kModule, "invalid distillation config");
  }
  const int d = embeddings.dim();
  const auto n = static_cast<Eigen::Index>(embeddings.size());

  Matrix inputs(n, d);
  Matrix targets(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    inputs.row(i) = embeddings.vector(idx).transpose();
    try {
      targets.row(i) = oracle.apply(embeddings.vector(idx), embeddings.id(idx)).transpose();
    } catch (const std::exception& e) {
      throw Error(kModule, "oracle failed on '" + embeddings.id(idx) + "': " + e.what());
    }
  }

  RandomStream rng(derive_seed(cfg.seed, "distill/split"));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  auto held = static_cast<Eigen::Index>(std::floor(cfg.heldout_fraction * static_cast<double>(n)));
  if (n >= 2 && cfg.heldout_fraction > 0.0) held = std::max<Eigen::Index>(held, 1);
  held = std::min(held, n - 1);
  const Eigen::Index ntrain = n - held;
  Matrix train_in(ntrain, d), train_out(ntrain, d), held_in(held, d), held_out(held, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r = order[static_cast<std::size_t>(i)];
    if (i < ntrain) {
      train_in.row(i) = inputs.row(r);
      train_out.row(i) = targets.row(r);
    } else {
      held_in.row(i - ntrain) = inputs.row(r);
      held_out.row(i - ntrain) = targets.row(r);
    }
  }

  std::vector<int> dims{d};
  if (cfg.hidden.empty()) {
    dims.push_back(2 * d);
    dims.push_back(2 * d);
  } else {
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  }
  dims.push_back(d);
  RandomStream init(derive_seed(cfg.seed, "distill/init"));

  DistillResult result;
  SignatureParams params = identity_capable(dims) ? identity_mlp(dims)
                                                  : make_mlp(dims, FinalLayerInit::kZeroWeights, init);
  AdamState adam;
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(ntrain));
  for (Eigen::Index i = 0; i < ntrain; ++i) rows[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(rows);
    double sum = 0.0;
    int batches = 0;
    for (Eigen::Index lo = 0; lo < ntrain; lo += batch) {
      const Eigen::Index hi = std::min(ntrain, lo + batch);
      Matrix bi(hi - lo, d), bo(hi - lo, d);
      for (Eigen::Index i = lo; i < hi; ++i) {
        bi.row(i - lo) = train_in.row(rows[static_cast<std::size_t>(i)]);
        bo.row(i - lo) = train_out.row(rows[static_cast<std::size_t>(i)]);
      }
      SignatureParams grad = zeros_like(params);
      sum += signature_loss_and_grads(params, bi, bo, &grad);
      ++batches;
      std::vector<std::span<double>> ps, gs;
      collect_spans(params, ps);
      collect_spans(grad, gs);
      adam_step(adam, ps, gs, cfg.learning_rate);
    }
    result.epoch_loss.push_back(sum / static_cast<double>(batches));
  }

  result.net.params = std::move(params);
  result.net.oracle_descriptor = oracle.descriptor();
  result.net.meta.epochs = cfg.epochs;
  result.net.meta.seed = cfg.seed;
  result.net.meta.train_cosine = mean_cosine(result.net.params, train_in, train_out);
  result.net.meta.heldout_cosine = mean_cosine(result.net.params, held_in, held_out);
  double base = 0.0;
  for (Eigen::Index i = 0; i < held; ++i) base += cosine(held_in.row(i).transpose(), held_out.row(i).transpose());
  result.net.meta.baseline_heldout_cosine = held > 0 ? base / static_cast<double>(held) : 0.0;
  return result;
}

Vector signature_forward(const SignatureNet& s, const Vector& e) {
  return signature_forward(s.params, e);
}

}  // namespace fva
