#include "fva/projections.hpp"

#include <cmath>

#include "fva/error.hpp"

namespace fva {

namespace {

constexpr const char* kModule = "projections";

Matrix affine(const DenseLayer& l, const Matrix& x) {
  Matrix out = x * l.weight.transpose();
  out.rowwise() += l.bias.transpose();
  return out;
}

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw Error(kModule, std::string(what) + ": dimension mismatch (" + std::to_string(got) +
                             " vs " + std::to_string(want) + ")");
  }
}

}  // namespace

void MlpParams::validate(const char* what) const {
  if (layers.empty()) throw Error(kModule, std::string(what) + ": no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.weight.rows()) {
      throw Error(kModule, std::string(what) + ": bias/weight shape mismatch in layer " +
                               std::to_string(i));
    }
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows()) {
      throw Error(kModule, std::string(what) + ": layer " + std::to_string(i) +
                               " does not chain with the previous layer");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw Error(kModule, std::string(what) + ": non-finite parameters");
    }
  }
}

MlpParams make_mlp(const std::vector<int>& dims, FinalLayerInit final_init, RandomStream& rng) {
  if (dims.size() < 2) throw Error(kModule, "make_mlp needs at least input and output dims");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i];
    const int out = dims[i + 1];
    if (in <= 0 || out <= 0) throw Error(kModule, "make_mlp: dimensions must be positive");
    DenseLayer l{Matrix::Zero(out, in), Vector::Zero(out)};
    const bool last = i + 2 == dims.size();
    if (!last || final_init == FinalLayerInit::kGaussian) {
      const double std = 1.0 / std::sqrt(static_cast<double>(in));
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) l.weight(r, c) = std * rng.normal();
    } else if (final_init == FinalLayerInit::kZeroWeights) {
      for (int r = 0; r < out; ++r) l.bias[r] = 1e-3 * rng.normal();
    }
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams z;
  for (const auto& l : p.layers) {
    z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return z;
}

Vector mlp_forward(const MlpParams& p, const Vector& x) {
  check_dim(x.size(), p.in_dim(), "mlp_forward");
  Vector h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Vector pre = p.layers[i].weight * h + p.layers[i].bias;
    if (i + 1 < p.layers.size()) {
      h = pre.cwiseMax(0.0);
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

Matrix mlp_forward_batch(const MlpParams& p, const Matrix& x, MlpTape* tape) {
  check_dim(x.cols(), p.in_dim(), "mlp_forward_batch");
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Matrix pre = affine(p.layers[i], h);
    if (tape) tape->inputs.push_back(h);
    if (i + 1 < p.layers.size()) {
      h = pre.cwiseMax(0.0);
      if (tape) tape->pre.push_back(std::move(pre));
    } else {
      h = pre;
      if (tape) tape->pre.push_back(std::move(pre));
    }
  }
  return h;
}

Matrix mlp_backward(const MlpParams& p, const MlpTape& tape, const Matrix& grad_out,
                    MlpParams& grad) {
  Matrix g = grad_out;
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    if (k + 1 < p.layers.size()) {
      g = (tape.pre[k].array() > 0.0).select(g, 0.0);
    }
    grad.layers[k].weight.noalias() += g.transpose() * tape.inputs[k];
    grad.layers[k].bias += g.colwise().sum().transpose();
    g = g * p.layers[k].weight;
  }
  return g;
}

Vector signature_forward(const SignatureParams& p, const Vector& e) {
  Vector out = mlp_forward(p, e);
  require_finite(out, kModule, "signature output");
  return out;
}

// ---------------------------------------------------------------------------
// Flow

Vector coupling_mask(int dim, int layer_index) {
  Vector mask = Vector::Zero(dim);
  const int half = dim / 2;
  for (int j = 0; j < dim; ++j) {
    const bool first = j < half;
    mask[j] = (layer_index % 2 == 0) == first ? 1.0 : 0.0;
  }
  return mask;
}

void FlowParams::validate() const {
  if (dim <= 0) throw Error(kModule, "flow dimension must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.mask.size() != dim) throw Error(kModule, "flow mask has wrong dimension");
    if (l.mask != coupling_mask(dim, static_cast<int>(i))) {
      throw Error(kModule, "flow masks must alternate half-splits");
    }
    l.s_net.validate("s-net");
    l.t_net.validate("t-net");
    if (l.s_net.in_dim() != dim || l.s_net.out_dim() != dim || l.t_net.in_dim() != dim ||
        l.t_net.out_dim() != dim) {
      throw Error(kModule, "flow subnet dimensions must be D -> D");
    }
    if (!std::isfinite(l.bound)) throw Error(kModule, "flow bound is not finite");
  }
}

FlowParams make_flow(int dim, int num_layers, int hidden, RandomStream& rng) {
  if (dim <= 0 || num_layers < 0 || hidden <= 0) throw Error(kModule, "make_flow: bad shape");
  FlowParams p;
  p.dim = dim;
  for (int l = 0; l < num_layers; ++l) {
    CouplingLayer c;
    c.mask = coupling_mask(dim, l);
    c.s_net = make_mlp({dim, hidden, dim}, FinalLayerInit::kZero, rng);
    c.t_net = make_mlp({dim, hidden, dim}, FinalLayerInit::kZero, rng);
    c.bound = 1.0;
    p.layers.push_back(std::move(c));
  }
  return p;
}

FlowParams zeros_like(const FlowParams& p) {
  FlowParams z;
  z.dim = p.dim;
  for (const auto& l : p.layers) {
    z.layers.push_back({l.mask, zeros_like(l.s_net), zeros_like(l.t_net), 0.0});
  }
  return z;
}

FlowResult flow_forward(const FlowParams& p, const Vector& x) {
  check_dim(x.size(), p.dim, "flow_forward");
  FlowResult r;
  r.y = x;
  for (const auto& l : p.layers) {
    const Vector free = Vector::Ones(p.dim) - l.mask;
    const Vector xm = r.y.cwiseProduct(l.mask);
    const Vector s = (l.bound * mlp_forward(l.s_net, xm).array().tanh()).matrix().cwiseProduct(free);
    const Vector t = mlp_forward(l.t_net, xm).cwiseProduct(free);
    r.y = r.y.cwiseProduct(s.array().exp().matrix()) + t;
    const double ld = s.sum();
    r.layer_logdets.push_back(ld);
    r.logdet += ld;
  }
  require_finite(r.y, kModule, "flow output");
  if (!std::isfinite(r.logdet)) throw Error(kModule, "non-finite flow log-determinant");
  return r;
}

Vector flow_inverse(const FlowParams& p, const Vector& y) {
  check_dim(y.size(), p.dim, "flow_inverse");
  Vector x = y;
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    const auto& l = p.layers[k];
    const Vector free = Vector::Ones(p.dim) - l.mask;
    const Vector xm = x.cwiseProduct(l.mask);
    const Vector s = (l.bound * mlp_forward(l.s_net, xm).array().tanh()).matrix().cwiseProduct(free);
    const Vector t = mlp_forward(l.t_net, xm).cwiseProduct(free);
    x = (x - t).cwiseProduct((-s).array().exp().matrix());
  }
  require_finite(x, kModule, "flow inverse output");
  return x;
}

Matrix flow_forward_batch(const FlowParams& p, const Matrix& x, FlowTape* tape, Vector* logdet) {
  check_dim(x.cols(), p.dim, "flow_forward_batch");
  if (tape) tape->layers.clear();
  if (logdet) *logdet = Vector::Zero(x.rows());
  Matrix y = x;
  for (const auto& l : p.layers) {
    const Eigen::RowVectorXd mask = l.mask.transpose();
    const Eigen::RowVectorXd free = Eigen::RowVectorXd::Ones(p.dim) - mask;
    const Matrix xm = y.array().rowwise() * mask.array();
    FlowTape::Layer rec;
    Matrix raw_s = mlp_forward_batch(l.s_net, xm, tape ? &rec.s_tape : nullptr);
    Matrix tanh_s = raw_s.array().tanh();
    Matrix s = (l.bound * tanh_s).array().rowwise() * free.array();
    Matrix t = mlp_forward_batch(l.t_net, xm, tape ? &rec.t_tape : nullptr);
    t = t.array().rowwise() * free.array();
    Matrix scale = s.array().exp();
    if (logdet) *logdet += s.rowwise().sum();
    if (tape) {
      rec.input = y;
      rec.tanh_s = std::move(tanh_s);
      rec.scale = scale;
    }
    y = y.cwiseProduct(scale) + t;
    if (tape) tape->layers.push_back(std::move(rec));
  }
  require_finite(y, kModule, "flow output");
  return y;
}

Matrix flow_backward(const FlowParams& p, const FlowTape& tape, const Matrix& grad_out,
                     FlowParams& grad) {
  Matrix g = grad_out;
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    const auto& l = p.layers[k];
    const auto& rec = tape.layers[k];
    auto& gl = grad.layers[k];
    const Eigen::RowVectorXd mask = l.mask.transpose();
    const Eigen::RowVectorXd free = Eigen::RowVectorXd::Ones(p.dim) - mask;

    // y = x * exp(s) + t with s, t zero on the masked coordinates.
    Matrix ds = g.cwiseProduct(rec.input).cwiseProduct(rec.scale);
    ds = ds.array().rowwise() * free.array();
    Matrix dt = g.array().rowwise() * free.array();
    Matrix dx = g.cwiseProduct(rec.scale);

    gl.bound += ds.cwiseProduct(rec.tanh_s).sum();
    Matrix draw = l.bound * ds.array() * (1.0 - rec.tanh_s.array().square());
    Matrix dxm = mlp_backward(l.s_net, rec.s_tape, draw, gl.s_net);
    dxm += mlp_backward(l.t_net, rec.t_tape, dt, gl.t_net);
    dx += Matrix(dxm.array().rowwise() * mask.array());
    g = std::move(dx);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Vclip model

const char* to_string(LossKind k) { return k == LossKind::kClip ? "clip" : "sge2e"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "clip") return LossKind::kClip;
  if (s == "sge2e") return LossKind::kSge2e;
  throw Error(kModule, "unknown loss kind '" + s + "' (expected clip or sge2e)");
}

void VclipModel::validate() const {
  face_proj.validate("face projection");
  voice_flow.validate();
  if (face_proj.out_dim() != dim || voice_flow.dim != dim) {
    throw Error(kModule, "face projection output and flow dimension must equal model dim");
  }
  if (!std::isfinite(sge2e.scale) || !std::isfinite(sge2e.bias) || !std::isfinite(temperature) ||
      temperature <= 0.0) {
    throw Error(kModule, "invalid scalar parameters");
  }
}

VclipModel init_vclip(int dim, const std::vector<int>& mlp_hidden, int flow_layers,
                      std::uint64_t seed, int face_dim) {
  if (dim <= 0) throw Error(kModule, "init_vclip: dim must be positive");
  if (face_dim < 0) face_dim = dim;
  RandomStream rng(derive_seed(seed, "init_vclip"));
  VclipModel m;
  m.dim = dim;
  std::vector<int> dims{face_dim};
  dims.insert(dims.end(), mlp_hidden.begin(), mlp_hidden.end());
  dims.push_back(dim);
  m.face_proj = make_mlp(dims, FinalLayerInit::kZeroWeights, rng);
  m.voice_flow = make_flow(dim, flow_layers, dim, rng);
  m.meta.seed = seed;
  return m;
}

VclipModel zeros_like(const VclipModel& m) {
  VclipModel z = m;
  z.face_proj = zeros_like(m.face_proj);
  z.voice_flow = zeros_like(m.voice_flow);
  z.sge2e = {0.0, 0.0};
  return z;
}

Vector project_face(const VclipModel& m, const Vector& face) {
  Vector out = mlp_forward(m.face_proj, face);
  require_finite(out, kModule, "face projection");
  return out;
}

Vector project_voice(const VclipModel& m, const Vector& voice) {
  return flow_forward(m.voice_flow, voice).y;
}

Matrix project_faces(const VclipModel& m, const Matrix& faces) {
  Matrix out = mlp_forward_batch(m.face_proj, faces);
  require_finite(out, kModule, "face projection");
  return out;
}

Matrix project_voices(const VclipModel& m, const Matrix& voices) {
  return flow_forward_batch(m.voice_flow, voices);
}

void collect_spans(MlpParams& p, std::vector<std::span<double>>& out) {
  for (auto& l : p.layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
}

void collect_spans(FlowParams& p, std::vector<std::span<double>>& out) {
  for (auto& l : p.layers) {
    collect_spans(l.s_net, out);
    collect_spans(l.t_net, out);
    out.emplace_back(&l.bound, 1);
  }
}

std::vector<std::span<double>> trainable_spans(VclipModel& m) {
  std::vector<std::span<double>> out;
  collect_spans(m.face_proj, out);
  collect_spans(m.voice_flow, out);
  if (m.loss_kind == LossKind::kSge2e) {
    out.emplace_back(&m.sge2e.scale, 1);
    out.emplace_back(&m.sge2e.bias, 1);
  }
  return out;
}

Vector flatten(const std::vector<std::span<double>>& spans) {
  std::size_t n = 0;
  for (const auto& s : spans) n += s.size();
  Vector flat(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (const auto& s : spans)
    for (double v : s) flat[k++] = v;
  return flat;
}

void unflatten(const Vector& flat, const std::vector<std::span<double>>& spans) {
  Eigen::Index k = 0;
  for (const auto& s : spans)
    for (double& v : s) v = flat[k++];
  if (k != flat.size()) throw Error(kModule, "unflatten: size mismatch");
}

bool same_parameters(const VclipModel& a, const VclipModel& b) {
  VclipModel ca = a;
  VclipModel cb = b;
  auto sa = trainable_spans(ca);
  auto sb = trainable_spans(cb);
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].size() != sb[i].size()) return false;
    for (std::size_t j = 0; j < sa[i].size(); ++j) {
      if (sa[i][j] != sb[i][j]) return false;
    }
  }
  return true;
}

}  // namespace fva
