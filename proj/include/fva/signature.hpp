#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fva/corpus_io.hpp"
#include "fva/numerics.hpp"
#include "fva/projections.hpp"

namespace fva {

// Stands for f_v o tts(.): input speaker embedding -> embedding re-extracted
// from synthesized speech. `key` identifies the embedding (its table id) and
// makes per-utterance noise reproducible.
class TtsOracle {
 public:
  virtual ~TtsOracle() = default;
  virtual Vector apply(const Vector& e, std::string_view key) const = 0;
  virtual std::string descriptor() const = 0;
  virtual int dim() const = 0;
};

struct MockOracleConfig {
  double contraction = 0.8;  // lambda in [0, 1]
  double angle = 0.1;        // radians, per rotation plane
  double noise = 0.01;       // sigma
  Vector attractor;          // mu; defaults to the known-speaker mean
  std::uint64_t seed = 0;

  void validate(int dim) const;
};

// normalize(R (lambda e + (1 - lambda) mu) + sigma eta). R rotates by `angle`
// in floor(D/2) orthogonal planes of a seed-fixed random basis; eta is drawn
// from a stream derived from (seed, key).
class MockOracle final : public TtsOracle {
 public:
  explicit MockOracle(MockOracleConfig cfg);

  Vector apply(const Vector& e, std::string_view key) const override;
  std::string descriptor() const override;
  int dim() const override { return static_cast<int>(cfg_.attractor.size()); }

  const Matrix& rotation() const { return rotation_; }
  const MockOracleConfig& config() const { return cfg_; }

 private:
  MockOracleConfig cfg_;
  Matrix rotation_;
};

Vector mock_oracle_apply(const MockOracle& oracle, const Vector& e, std::string_view key);

// File-exchange oracle: the toolkit writes the embeddings it needs
// re-embedded as EMB1, a user pipeline answers with an EMB1 holding the same
// ids. apply() is a lookup by key.
class ExternalOracle final : public TtsOracle {
 public:
  ExternalOracle(EmbeddingTable reembedded, std::string source);

  Vector apply(const Vector& e, std::string_view key) const override;
  std::string descriptor() const override;
  int dim() const override { return table_.dim(); }

 private:
  EmbeddingTable table_;
  std::string source_;
};

// Writes the request file for an external oracle.
void write_oracle_request(const EmbeddingTable& embeddings, const std::string& path);

struct DistillMeta {
  double train_cosine = 0.0;
  double heldout_cosine = 0.0;
  double baseline_heldout_cosine = 0.0;  // cos(e, oracle(e)) on held-out rows
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

struct SignatureNet {
  SignatureParams params;
  std::string oracle_descriptor;
  DistillMeta meta;

  int dim() const { return params.in_dim(); }
};

struct DistillConfig {
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 128;
  double heldout_fraction = 0.1;
  std::vector<int> hidden;  // empty: two layers of width 2D
  std::uint64_t seed = 0;
};

struct DistillResult {
  SignatureNet net;
  std::vector<double> epoch_loss;  // mean (1 - cos) per epoch on the train split
};

// Mean of (1 - cos(s(e_i), target_i)) over rows, with parameter gradients
// accumulated into `grad`.
double signature_loss_and_grads(const SignatureParams& p, const Matrix& inputs,
                                const Matrix& targets, SignatureParams* grad);

// Queries the oracle once per embedding (the oracle is treated as
// deterministic) and fits s(.) by minimizing 1 - cos(s(e), oracle(e)).
DistillResult distill_signature(const TtsOracle& oracle, const EmbeddingTable& embeddings,
                                const DistillConfig& cfg);

Vector signature_forward(const SignatureNet& s, const Vector& e);

}  // namespace fva
