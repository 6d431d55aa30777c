#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fva/corpus_io.hpp"
#include "fva/error.hpp"
#include "fva/evaluation.hpp"
#include "fva/training.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace fva;

namespace {

// Symmetric CLIP loss written with explicit loops and logs.
double naive_clip(const Matrix& f, const Matrix& v, double t) {
  const Eigen::Index n = f.rows();
  std::vector<std::vector<double>> s(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      s[a][b] = v.row(a).dot(f.row(b)) / (v.row(a).norm() * f.row(b).norm()) / t;
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double row = 0.0, col = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      row += std::exp(s[a][b]);
      col += std::exp(s[b][a]);
    }
    total += s[a][a] - std::log(row);
    total += s[a][a] - std::log(col);
  }
  return -total / (2.0 * static_cast<double>(n));
}

}  // namespace

TEST_CASE("clip loss spot values") {
  const Matrix I = Matrix::Identity(2, 2);
  const double e = std::exp(1.0);
  const double expected = -std::log(e / (e + 1.0));
  CHECK(std::abs(clip_loss(I, I) - expected) <= 1e-12);
  Matrix swapped(2, 2);
  swapped << 0, 1, 1, 0;
  CHECK(std::abs(clip_loss(I, swapped) - (1.0 + expected)) <= 1e-12);
  CHECK(std::abs(clip_loss(3.0 * I, 3.0 * I) - expected) <= 1e-12);
}

TEST_CASE("clip loss matches the loop oracle") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const int n = 2 + static_cast<int>(s % 6);
    const Matrix f = test::random_matrix(n, 5, s);
    const Matrix v = test::random_matrix(n, 5, s + 100);
    const double t = s % 2 ? 1.0 : 0.3;
    CHECK(std::abs(clip_loss(f, v, t) - naive_clip(f, v, t)) <= 1e-12);
  }
}

TEST_CASE("clip loss invariants") {
  const Matrix f = test::random_matrix(6, 4, 1);
  const Matrix v = test::random_matrix(6, 4, 2);
  const double base = clip_loss(f, v);
  CHECK(base >= 0.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  CHECK(std::abs(clip_loss(perm * f, perm * v) - base) <= 1e-12);
  CHECK(std::abs(clip_loss(2.5 * f, 0.1 * v) - base) <= 1e-12);
  CHECK_THROWS_AS(clip_loss(f.topRows(1), v.topRows(1)), Error);
  Matrix z = f;
  z.row(2).setZero();
  CHECK_THROWS_AS(clip_loss(z, v), Error);
}

TEST_CASE("clip embedding gradients match finite differences") {
  const Matrix f = test::random_matrix(4, 5, 3);
  const Matrix v = test::random_matrix(4, 5, 4);
  const EmbeddingLoss l = clip_loss_with_grads(f, v, 0.7);
  CHECK(std::abs(l.loss - clip_loss(f, v, 0.7)) <= 1e-14);
  const Vector pf = Eigen::Map<const Vector>(f.data(), f.size());
  const Vector nf = finite_diff_grad(
      [&](const Vector& x) { return clip_loss(Eigen::Map<const Matrix>(x.data(), 4, 5), v, 0.7); }, pf,
      1e-6);
  const Vector af = Eigen::Map<const Vector>(l.d_faces.data(), l.d_faces.size());
  CHECK(test::compare_grads(af, nf, 1e-8).worst_rel <= 1e-5);
}

TEST_CASE("sge2e loss examples") {
  Sge2eParams p;
  p.scale = 10.0;
  p.bias = 0.0;
  // Two identities, perfectly clustered and orthogonal.
  Matrix e(4, 2);
  e << 1, 0, 1, 0, 0, 1, 0, 1;
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(sge2e_loss(e, e, labels, p) < 1e-4);
  // all identical -> log(#identities)
  const Matrix same = Matrix::Ones(6, 3);
  const std::vector<int> three{0, 0, 1, 1, 2, 2};
  CHECK(std::abs(sge2e_loss(same, same, three, p) - std::log(3.0)) <= 1e-12);
  // consistent relabeling
  const Matrix f = test::random_matrix(6, 3, 8), v = test::random_matrix(6, 3, 9);
  const std::vector<int> relabeled{7, 7, 2, 2, 5, 5};
  CHECK(std::abs(sge2e_loss(f, v, three, p) - sge2e_loss(f, v, relabeled, p)) <= 1e-12);
  CHECK_THROWS_AS(sge2e_loss(f, v, std::vector<int>(6, 0), p), Error);
}

TEST_CASE("sge2e with singleton identities matches a direct computation") {
  // One row per identity: no leave-one-out, centroids are the rows themselves.
  const Matrix f = test::random_matrix(3, 4, 21), v = test::random_matrix(3, 4, 22);
  Sge2eParams p;
  p.scale = 2.0;
  p.bias = 0.3;
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const Matrix& rows = dir == 0 ? f : v;
    const Matrix& cents = dir == 0 ? v : f;
    double sum = 0.0;
    for (int a = 0; a < 3; ++a) {
      double z = 0.0;
      for (int k = 0; k < 3; ++k)
        z += std::exp(p.scale * cosine(rows.row(a).transpose(), cents.row(k).transpose()) + p.bias);
      sum += -(p.scale * cosine(rows.row(a).transpose(), cents.row(a).transpose()) + p.bias - std::log(z));
    }
    total += sum / 3.0;
  }
  CHECK(std::abs(sge2e_loss(f, v, {0, 1, 2}, p) - total / 2.0) <= 1e-12);
}

TEST_CASE("sge2e embedding and scale gradients match finite differences") {
  const Matrix f = test::random_matrix(4, 3, 31), v = test::random_matrix(4, 3, 32);
  const std::vector<int> labels{0, 0, 1, 1};
  Sge2eParams p;
  p.scale = 4.0;
  p.bias = -2.0;
  const EmbeddingLoss l = sge2e_loss_with_grads(f, v, labels, p);
  const Vector pv = Eigen::Map<const Vector>(v.data(), v.size());
  const Vector nv = finite_diff_grad(
      [&](const Vector& x) { return sge2e_loss(f, Eigen::Map<const Matrix>(x.data(), 4, 3), labels, p); },
      pv, 1e-6);
  const Vector av = Eigen::Map<const Vector>(l.d_voices.data(), l.d_voices.size());
  CHECK(test::compare_grads(av, nv, 1e-8).worst_rel <= 1e-5);
  Vector wb(2);
  wb << p.scale, p.bias;
  const Vector nwb = finite_diff_grad(
      [&](const Vector& x) {
        Sge2eParams q;
        q.scale = x(0);
        q.bias = x(1);
        return sge2e_loss(f, v, labels, q);
      },
      wb, 1e-6);
  CHECK(test::rel_err(l.d_scale, nwb(0)) <= 1e-5);
  CHECK(std::abs(l.d_bias - nwb(1)) <= 1e-8);
}

TEST_CASE("model gradients match finite differences") {
  for (int dim : {4, 6}) {
    const VclipModel clip = test::generic_model(dim, LossKind::kClip, 40 + static_cast<std::uint64_t>(dim));
    const auto g1 = test::check_model_grads(clip, test::make_batch(3, dim, 50, false), 1e-5);
    CHECK(g1.pass(1e-4, 1e-9));
    const VclipModel sge = test::generic_model(dim, LossKind::kSge2e, 60 + static_cast<std::uint64_t>(dim));
    const auto g2 = test::check_model_grads(sge, test::make_batch(4, dim, 70, true), 1e-5);
    CHECK(g2.pass(1e-4, 1e-9));
  }
}

TEST_CASE("signature loss gradients match finite differences") {
  const auto g = test::check_signature_grads(4, 3, 5, 1e-5);
  CHECK(g.pass(1e-4, 1e-9));
  RandomStream rng(1);
  const SignatureParams p = make_mlp({3, 6, 3}, FinalLayerInit::kGaussian, rng);
  const Matrix x = test::random_matrix(5, 3, 2);
  const double l = signature_loss_and_grads(p, x, x, nullptr);
  CHECK(l >= 0.0);
  CHECK(l <= 2.0);
}

TEST_CASE("identity-initialized model has usable flow gradients") {
  const VclipModel m = init_vclip(6, {8}, 2, 3);
  const LossAndGrads lg = loss_and_grads(m, test::make_batch(4, 6, 9, false));
  VclipModel g = lg.grads;
  std::vector<std::span<double>> spans;
  collect_spans(g.voice_flow, spans);
  const Vector flat = flatten(spans);
  CHECK(all_finite(flat));
  CHECK(flat.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("duplicating a clip batch shifts the loss by log 2 and keeps gradients") {
  const VclipModel m = test::generic_model(5, LossKind::kClip, 3);
  const Batch b = test::make_batch(3, 5, 4, false);
  Batch d;
  d.faces.resize(6, 5);
  d.voices.resize(6, 5);
  d.faces << b.faces, b.faces;
  d.voices << b.voices, b.voices;
  const LossAndGrads l1 = loss_and_grads(m, b);
  const LossAndGrads l2 = loss_and_grads(m, d);
  CHECK(std::abs(l2.loss - l1.loss - std::log(2.0)) <= 1e-12);
  VclipModel g1 = l1.grads, g2 = l2.grads;
  const Vector a = flatten(trainable_spans(g1));
  const Vector c = flatten(trainable_spans(g2));
  CHECK((a - c).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()));
}

TEST_CASE("adam") {
  std::vector<double> p{1.0, -2.0, 3.0};
  std::vector<double> g{0.0, 0.0, 0.0};
  AdamState st;
  adam_step(st, {std::span<double>(p)}, {std::span<double>(g)}, 0.1);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});

  std::vector<double> q{0.0, 0.0, 0.0, 0.0};
  std::vector<double> h{0.5, -3.0, 1e-3, 0.0};
  AdamState s2;
  const double lr = 0.01;
  adam_step(s2, {std::span<double>(q)}, {std::span<double>(h)}, lr);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(q[i]) <= lr * (1 + 1e-6));
  // closed form first step: -lr * g / (|g| + eps)
  CHECK(std::abs(q[0] + lr * 0.5 / (0.5 + 1e-8)) < 1e-15);
  CHECK(q[3] == 0.0);
  CHECK(s2.step == 1);
  const double m_before = s2.m[0];
  std::vector<double> zero(4, 0.0);
  adam_step(s2, {std::span<double>(q)}, {std::span<double>(zero)}, lr);
  CHECK(std::abs(s2.m[0] - 0.9 * m_before) < 1e-15);

  std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(adam_step(s2, {std::span<double>(q)}, {std::span<double>(wrong)}, lr), Error);
}

namespace {

SyntheticCorpus small_corpus(std::uint64_t seed) {
  SyntheticCorpusConfig c;
  c.num_identities = 80;
  c.dev_identities = 20;
  c.test_identities = 20;
  c.eval_identities = 4;
  c.embed_dim = 16;
  c.latent_dim = 4;
  c.seed = seed;
  return generate_synthetic_corpus(c);
}

TrainConfig small_train(std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = 32;
  t.learning_rate = 3e-3;
  t.max_epochs = 6;
  t.patience = 10;
  t.mlp_hidden = {32};
  t.flow_layers = 2;
  t.seed = seed;
  return t;
}

}  // namespace

TEST_CASE("training improves dev AUC and is reproducible") {
  const SyntheticCorpus c = small_corpus(1);
  const TrainConfig cfg = small_train(2);
  const TrainResult a = train_vclip(c.faces, c.voices, c.train, c.dev, cfg);
  const TrainResult b = train_vclip(c.faces, c.voices, c.train, c.dev, cfg);
  CHECK(same_parameters(a.model, b.model));
  CHECK(a.history.epochs.size() == 6);
  for (const auto& e : a.history.epochs) CHECK(std::isfinite(e.loss));
  CHECK(a.model.meta.best_dev_auc > a.history.initial_dev_auc);
  CHECK(a.model.meta.best_dev_auc > 0.8);
  CHECK(std::abs(eval_auc(a.model, c.dev, c.faces, c.voices) - a.model.meta.best_dev_auc) < 1e-12);
  const std::string h = format_history(a.history);
  CHECK(h.rfind("# epoch\tloss\tdev_auc\n0\t-\t", 0) == 0);
}

TEST_CASE("early stopping with a frozen model stops at the first evaluation") {
  const SyntheticCorpus c = small_corpus(3);
  TrainConfig cfg = small_train(4);
  cfg.learning_rate = 0.0;
  cfg.patience = 1;
  const TrainResult r = train_vclip(c.faces, c.voices, c.train, c.dev, cfg);
  CHECK(r.history.epochs.size() == 1);
  CHECK(r.history.stopped_early);
  CHECK(r.history.best_epoch == 0);
}

TEST_CASE("sge2e training and frozen voice flow") {
  const SyntheticCorpus c = small_corpus(5);
  TrainConfig cfg = small_train(6);
  cfg.loss_kind = LossKind::kSge2e;
  cfg.train_voice_flow = false;
  cfg.max_epochs = 3;
  CHECK_THROWS_AS(train_vclip(c.faces, c.voices, c.train, c.dev, cfg), Error);
  const TrainResult r = train_vclip(c.faces, c.voices, c.train, c.dev, cfg, &c.labels);
  const Vector v = c.voices.vector(0);
  CHECK(project_voice(r.model, v) == v);
  CHECK(r.model.loss_kind == LossKind::kSge2e);
  CHECK(r.model.sge2e.scale > 1e-6);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.batch_size = 1;
  CHECK_THROWS_AS(t.validate(), Error);
  t = {};
  t.patience = 0;
  CHECK_THROWS_AS(t.validate(), Error);
  const SyntheticCorpus c = small_corpus(7);
  CHECK_THROWS_AS(train_vclip(c.faces, c.voices, TrialSet{}, c.dev, small_train(1)), Error);
}
