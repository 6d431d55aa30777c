#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fva/numerics.hpp"

namespace fva {

// weight is out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

// Rectifier on hidden layers, linear output layer.
struct MlpParams {
  std::vector<DenseLayer> layers;

  int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  void validate(const char* what) const;
};

// Activations recorded by a batched forward pass for the backward pass.
struct MlpTape {
  std::vector<Matrix> inputs;  // input of every layer
  std::vector<Matrix> pre;     // pre-activation of every layer
};

enum class FinalLayerInit {
  kZero,         // weights and bias zero
  kZeroWeights,  // weights zero, bias ~ N(0, 1e-3^2)
  kGaussian,     // same rule as hidden layers
};

// dims = {in, hidden..., out}. Hidden weights ~ N(0, 1/fan_in), hidden bias 0.
MlpParams make_mlp(const std::vector<int>& dims, FinalLayerInit final_init, RandomStream& rng);
MlpParams zeros_like(const MlpParams& p);

Vector mlp_forward(const MlpParams& p, const Vector& x);
Matrix mlp_forward_batch(const MlpParams& p, const Matrix& x, MlpTape* tape = nullptr);
// Accumulates parameter gradients into `grad`, returns d loss / d input.
Matrix mlp_backward(const MlpParams& p, const MlpTape& tape, const Matrix& grad_out,
                    MlpParams& grad);

// Affine coupling layer: coordinates with mask 1 pass through, the rest are
// mapped u -> u * exp(s) + t where s = bound * tanh(s_net(x * mask)) and
// t = t_net(x * mask).
struct CouplingLayer {
  Vector mask;
  MlpParams s_net;
  MlpParams t_net;
  double bound = 1.0;
};

struct FlowParams {
  int dim = 0;
  std::vector<CouplingLayer> layers;

  void validate() const;
};

struct FlowResult {
  Vector y;
  double logdet = 0.0;
  std::vector<double> layer_logdets;
};

struct FlowTape {
  struct Layer {
    Matrix input;
    Matrix tanh_s;  // tanh of the raw s-net output
    Matrix scale;   // exp(s), masked coordinates are 1
    MlpTape s_tape;
    MlpTape t_tape;
  };
  std::vector<Layer> layers;
};

// Alternating half-split mask: even layers keep the first floor(D/2)
// coordinates, odd layers keep the rest.
Vector coupling_mask(int dim, int layer_index);

// Flow whose s/t subnets have hidden width `hidden` and zero final layers, so
// the flow starts as the identity.
FlowParams make_flow(int dim, int num_layers, int hidden, RandomStream& rng);
FlowParams zeros_like(const FlowParams& p);

FlowResult flow_forward(const FlowParams& p, const Vector& x);
Vector flow_inverse(const FlowParams& p, const Vector& y);
Matrix flow_forward_batch(const FlowParams& p, const Matrix& x, FlowTape* tape = nullptr,
                          Vector* logdet = nullptr);
Matrix flow_backward(const FlowParams& p, const FlowTape& tape, const Matrix& grad_out,
                     FlowParams& grad);

// s(.) approximating the TTS input->output speaker mapping. D -> D.
using SignatureParams = MlpParams;

Vector signature_forward(const SignatureParams& p, const Vector& e);

enum class LossKind { kClip, kSge2e };

const char* to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct Sge2eParams {
  double scale = 10.0;  // w, clamped > 1e-6
  double bias = -5.0;   // b
};

struct TrainingMeta {
  int epochs_run = 0;
  double best_dev_auc = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

// Face projection (MLP) and voice projection (flow) into a shared D-dim space.
struct VclipModel {
  int dim = 0;
  MlpParams face_proj;
  FlowParams voice_flow;
  LossKind loss_kind = LossKind::kClip;
  Sge2eParams sge2e;
  double temperature = 1.0;
  TrainingMeta meta;

  void validate() const;
};

// Hidden weights ~ N(0, 1/fan_in). Face MLP final layer: zero weights and a
// N(0, 1e-3^2) bias. Flow s/t final layers zero (identity flow). face_dim
// defaults to dim.
VclipModel init_vclip(int dim, const std::vector<int>& mlp_hidden, int flow_layers,
                      std::uint64_t seed, int face_dim = -1);
VclipModel zeros_like(const VclipModel& m);

Vector project_face(const VclipModel& m, const Vector& face);
Vector project_voice(const VclipModel& m, const Vector& voice);
Matrix project_faces(const VclipModel& m, const Matrix& faces);
Matrix project_voices(const VclipModel& m, const Matrix& voices);

// Views of every trainable scalar in a fixed order. SGE2E scale/bias are
// included only for kSge2e models.
void collect_spans(MlpParams& p, std::vector<std::span<double>>& out);
void collect_spans(FlowParams& p, std::vector<std::span<double>>& out);
std::vector<std::span<double>> trainable_spans(VclipModel& m);

Vector flatten(const std::vector<std::span<double>>& spans);
void unflatten(const Vector& flat, const std::vector<std::span<double>>& spans);

bool same_parameters(const VclipModel& a, const VclipModel& b);

}  // namespace fva
