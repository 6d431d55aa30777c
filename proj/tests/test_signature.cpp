#include <doctest.h>

#include <cmath>

#include "fva/corpus_io.hpp"
#include "fva/error.hpp"
#include "fva/signature.hpp"
#include "helpers.hpp"

using namespace fva;

namespace {

class IdentityOracle final : public TtsOracle {
 public:
  explicit IdentityOracle(int d) : d_(d) {}
  Vector apply(const Vector& e, std::string_view) const override { return e; }
  std::string descriptor() const override { return "identity"; }
  int dim() const override { return d_; }

 private:
  int d_;
};

class FailingOracle final : public TtsOracle {
 public:
  Vector apply(const Vector&, std::string_view key) const override {
    if (key == "v2") throw Error("signature", "synthesis failed");
    return Vector::Ones(3);
  }
  std::string descriptor() const override { return "failing"; }
  int dim() const override { return 3; }
};

EmbeddingTable unit_voices(int n, int dim, std::uint64_t seed) {
  EmbeddingTable t(Modality::kVoice, dim);
  for (int i = 0; i < n; ++i)
    t.add("v" + std::to_string(i), normalized(test::random_vector(dim, seed + static_cast<std::uint64_t>(i))));
  return t;
}

EmbeddingTable corpus_voices(int identities) {
  SyntheticCorpusConfig c;
  c.num_identities = identities;
  c.dev_identities = 2;
  c.test_identities = 2;
  c.eval_identities = 2;
  c.embed_dim = 16;
  c.latent_dim = 4;
  const SyntheticCorpus sc = generate_synthetic_corpus(c);
  EmbeddingTable out(Modality::kVoice, 16);
  for (const auto& t : sc.train)
    if (t.label) out.add(t.voice_id, sc.voices.at(t.voice_id));
  return out;
}

MockOracleConfig config(int dim, double lambda, double angle, double noise, const Vector& mu) {
  MockOracleConfig c;
  c.contraction = lambda;
  c.angle = angle;
  c.noise = noise;
  c.attractor = mu;
  c.seed = 3;
  (void)dim;
  return c;
}

}  // namespace

TEST_CASE("mock oracle identity configuration") {
  const MockOracle o(config(6, 1.0, 0.0, 0.0, test::random_vector(6, 1)));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector e = normalized(test::random_vector(6, 10 + s));
    CHECK((o.apply(e, "k") - e).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("mock oracle full contraction is constant") {
  const Vector mu = test::random_vector(6, 2);
  const MockOracle o(config(6, 0.0, 0.0, 0.0, mu));
  for (std::uint64_t s = 0; s < 5; ++s)
    CHECK((o.apply(test::random_vector(6, 20 + s), "k") - normalized(mu)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("mock oracle rotation is orthogonal and rotates by the angle") {
  const MockOracle o(config(8, 1.0, 0.1, 0.0, Vector::Zero(8)));
  const Matrix& R = o.rotation();
  CHECK((R * R.transpose() - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector e = normalized(test::random_vector(8, 30 + s));
    CHECK(std::abs(cosine(o.apply(e, "x"), e) - std::cos(0.1)) < 1e-12);
  }
}

TEST_CASE("mock oracle cosine is monotone in lambda") {
  const Vector mu = normalized(test::random_vector(6, 5));
  const Vector e = normalized(test::random_vector(6, 6));
  double prev = -2.0;
  double at0 = 0, at1 = 0;
  for (int i = 0; i <= 10; ++i) {
    const double lambda = i / 10.0;
    const MockOracle o(config(6, lambda, 0.0, 0.0, mu));
    const double c = cosine(o.apply(e, "k"), e);
    CHECK(c >= prev - 1e-15);
    prev = c;
    if (i == 0) at0 = c;
    if (i == 10) at1 = c;
  }
  const MockOracle mid(config(6, 0.8, 0.1, 0.0, mu));
  const double c = cosine(mid.apply(e, "k"), e);
  CHECK(c > at0);
  CHECK(c < at1);
}

TEST_CASE("mock oracle noise is keyed and reproducible") {
  const MockOracle o(config(6, 0.8, 0.1, 0.05, Vector::Zero(6)));
  const Vector e = normalized(test::random_vector(6, 7));
  CHECK(o.apply(e, "a") == o.apply(e, "a"));
  CHECK(o.apply(e, "a") != o.apply(e, "b"));
  CHECK(std::abs(o.apply(e, "a").norm() - 1.0) < 1e-14);
  const MockOracle quiet(config(6, 0.8, 0.1, 0.0, Vector::Zero(6)));
  CHECK(quiet.apply(e, "a") == quiet.apply(e, "b"));
  CHECK(mock_oracle_apply(quiet, e, "a") == quiet.apply(e, "a"));
}

TEST_CASE("mock oracle config validation") {
  CHECK_THROWS_AS(MockOracle(config(3, 1.5, 0.1, 0.0, Vector::Zero(3))), Error);
  CHECK_THROWS_AS(MockOracle(config(3, 0.5, 0.1, -1.0, Vector::Zero(3))), Error);
  MockOracleConfig empty;
  CHECK_THROWS_AS(MockOracle{empty}, Error);
}

TEST_CASE("external oracle is a lookup") {
  EmbeddingTable t(Modality::kVoice, 2);
  t.add("a", Vector::Ones(2));
  const ExternalOracle o(t, "answers.emb1");
  CHECK(o.apply(Vector::Zero(2), "a") == Vector::Ones(2));
  CHECK(o.descriptor() == "external(answers.emb1)");
  try {
    o.apply(Vector::Zero(2), "missing-id");
    FAIL("expected a failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("missing-id") != std::string::npos);
  }
}

TEST_CASE("distillation with an identity oracle") {
  const EmbeddingTable v = unit_voices(300, 8, 1);
  DistillConfig cfg;
  cfg.epochs = 5;
  const DistillResult r = distill_signature(IdentityOracle(8), v, cfg);
  CHECK(r.net.meta.heldout_cosine >= 0.99);
  CHECK(r.net.dim() == 8);
  CHECK(r.net.oracle_descriptor == "identity");
}

TEST_CASE("distillation with a constant oracle") {
  const EmbeddingTable v = unit_voices(2000, 8, 2);
  const MockOracle o(config(8, 0.0, 0.0, 0.0, test::random_vector(8, 3)));
  DistillConfig cfg;
  cfg.epochs = 100;
  const DistillResult r = distill_signature(o, v, cfg);
  CHECK(r.net.meta.heldout_cosine >= 0.999);
}

TEST_CASE("distillation beats the identity map under the default mock oracle") {
  const EmbeddingTable v = corpus_voices(300);
  Vector mu = v.as_matrix().colwise().mean().transpose();
  MockOracleConfig oc;
  oc.attractor = mu;
  oc.seed = 4;
  const MockOracle o(oc);
  DistillConfig cfg;
  cfg.seed = 5;
  const DistillResult r = distill_signature(o, v, cfg);
  CHECK(r.net.meta.heldout_cosine > r.net.meta.baseline_heldout_cosine);
  CHECK(std::abs(r.net.meta.heldout_cosine - r.net.meta.train_cosine) <= 0.05);
  REQUIRE(r.epoch_loss.size() == static_cast<std::size_t>(cfg.epochs));
  for (std::size_t i = 1; i < 3; ++i) CHECK(r.epoch_loss[i] <= r.epoch_loss[i - 1] + 1e-3);
  for (double l : r.epoch_loss) {
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
  // deterministic
  const DistillResult again = distill_signature(o, v, cfg);
  CHECK(again.net.params.layers.back().weight == r.net.params.layers.back().weight);
  // signature forward on a net equals forward on its params
  const Vector e = v.vector(0);
  CHECK(signature_forward(r.net, e) == signature_forward(r.net.params, e));
}

TEST_CASE("distillation errors") {
  EmbeddingTable v(Modality::kVoice, 3);
  for (int i = 0; i < 4; ++i) v.add("v" + std::to_string(i), Vector::Ones(3) * (i + 1));
  try {
    distill_signature(FailingOracle(), v, DistillConfig{});
    FAIL("expected a failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'v2'") != std::string::npos);
  }
  CHECK_THROWS_AS(distill_signature(IdentityOracle(3), EmbeddingTable(Modality::kVoice, 3), DistillConfig{}),
                  Error);
  CHECK_THROWS_AS(distill_signature(IdentityOracle(4), v, DistillConfig{}), Error);
}
