#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fva/corpus_io.hpp"
#include "fva/numerics.hpp"
#include "fva/projections.hpp"

namespace fva {

// Loss value plus gradients with respect to the projected embeddings.
struct EmbeddingLoss {
  double loss = 0.0;
  Matrix d_faces;
  Matrix d_voices;
  double d_scale = 0.0;  // SGE2E only
  double d_bias = 0.0;   // SGE2E only
};

// Symmetric CLIP loss over the cosine similarity matrix
// S[a][b] = cos(voice_a, face_b) / temperature:
//   -1/(2N) * (sum_a log softmax_row(S)[a][a] + sum_b log softmax_col(S)[b][b]).
// Rows of both matrices are paired by index. Requires N >= 2.
double clip_loss(const Matrix& faces, const Matrix& voices, double temperature = 1.0);
EmbeddingLoss clip_loss_with_grads(const Matrix& faces, const Matrix& voices,
                                   double temperature = 1.0);

// Supervised centroid softmax loss. Face rows are scored against voice
// identity centroids and voice rows against face identity centroids with
// score = w * cos + b; each direction is a mean cross-entropy and the two are
// averaged. The own-identity centroid leaves out the row's co-occurring
// partner when the identity has more than one row in the batch.
double sge2e_loss(const Matrix& faces, const Matrix& voices, const std::vector<int>& labels,
                  const Sge2eParams& p);
EmbeddingLoss sge2e_loss_with_grads(const Matrix& faces, const Matrix& voices,
                                    const std::vector<int>& labels, const Sge2eParams& p);

struct Batch {
  Matrix faces;   // raw face features, one row per pair
  Matrix voices;  // raw voice features
  std::vector<int> labels;  // identity per pair, needed for SGE2E
};

struct LossAndGrads {
  double loss = 0.0;
  VclipModel grads;  // same shape as the model
};

// Forward through both projections, the model's loss, and reverse-mode
// gradients for every trainable parameter.
LossAndGrads loss_and_grads(const VclipModel& model, const Batch& batch);
double batch_loss(const VclipModel& model, const Batch& batch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

// Bias-corrected Adam update in place. Moments are allocated on first use.
void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<double>>& grads, double lr);

struct TrainConfig {
  int batch_size = 256;
  double learning_rate = 1e-3;
  AdamConfig adam;
  int max_epochs = 100;
  int patience = 3;
  int eval_every = 1;
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::kClip;
  double temperature = 1.0;
  // false keeps phi_v at its identity initialization, so phi_i learns to map
  // straight into the voice embedding space (feature-mapping baseline).
  bool train_voice_flow = true;
  std::vector<int> mlp_hidden{512, 512};
  int flow_layers = 4;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double dev_auc = std::numeric_limits<double>::quiet_NaN();  // NaN: not evaluated
};

struct TrainHistory {
  double initial_dev_auc = 0.0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
};

struct TrainResult {
  VclipModel model;
  TrainHistory history;
};

// Shuffled minibatch training on the positive (co-occurring) pairs of
// `train_pairs`, with dev AUC early stopping. Returns the best snapshot.
// `labels` maps face ids to identities and is required for SGE2E.
TrainResult train_vclip(const EmbeddingTable& faces, const EmbeddingTable& voices,
                        const TrialSet& train_pairs, const TrialSet& dev,
                        const TrainConfig& cfg, const IdentityLabels* labels = nullptr);

std::string format_history(const TrainHistory& h);

}  // namespace fva
