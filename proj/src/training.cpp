#include "fva/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "fva/error.hpp"
#include "fva/evaluation.hpp"

namespace fva {

namespace {

constexpr const char* kModule = "training";

// Rows divided by their norms; throws on a zero row.
Matrix unit_rows(const Matrix& x, Vector& norms, const char* what) {
  norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 0.0)) {
      throw Error(kModule, std::string("zero-norm ") + what + " row " + std::to_string(i));
    }
  }
  return norms.cwiseInverse().asDiagonal() * x;
}

// Gradient through x -> x / |x| for every row.
Matrix unit_rows_backward(const Matrix& unit, const Vector& norms, const Matrix& d_unit) {
  const Vector radial = unit.cwiseProduct(d_unit).rowwise().sum();
  Matrix out = d_unit - radial.asDiagonal() * unit;
  return norms.cwiseInverse().asDiagonal() * out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& z) {
  const double mx = z.maxCoeff();
  return mx + std::log((z.array() - mx).exp().sum());
}

}  // namespace

EmbeddingLoss clip_loss_with_grads(const Matrix& faces, const Matrix& voices, double temperature) {
  const Eigen::Index n = faces.rows();
  if (n < 2) throw Error(kModule, "clip_loss needs at least 2 pairs");
  if (voices.rows() != n || voices.cols() != faces.cols()) {
    throw Error(kModule, "clip_loss: face/voice batch shapes differ");
  }
  if (!(temperature > 0.0)) throw Error(kModule, "temperature must be positive");
  Vector fn, vn;
  const Matrix f = unit_rows(faces, fn, "face");
  const Matrix u = unit_rows(voices, vn, "voice");
  const Matrix s = (u * f.transpose()) / temperature;  // s(a, b) = cos(voice_a, face_b)

  const Matrix p_row = softmax_rows(s);
  const Matrix p_col = softmax_rows(s.transpose()).transpose();
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) total += s(a, a) - log_sum_exp(s.row(a));
  const Matrix st = s.transpose();
  for (Eigen::Index b = 0; b < n; ++b) total += st(b, b) - log_sum_exp(st.row(b));

  EmbeddingLoss out;
  out.loss = -total / (2.0 * static_cast<double>(n));
  Matrix g = (p_row + p_col) / (2.0 * static_cast<double>(n));
  g.diagonal().array() -= 1.0 / static_cast<double>(n);
  const Matrix d_u = g * f / temperature;
  const Matrix d_f = g.transpose() * u / temperature;
  out.d_voices = unit_rows_backward(u, vn, d_u);
  out.d_faces = unit_rows_backward(f, fn, d_f);
  return out;
}

double clip_loss(const Matrix& faces, const Matrix& voices, double temperature) {
  return clip_loss_with_grads(faces, voices, temperature).loss;
}

namespace {

struct DirectionResult {
  double loss = 0.0;
  Matrix d_rows;
  Matrix d_source;
  double d_scale = 0.0;
  double d_bias = 0.0;
};

// Rows of `rows` scored against identity centroids built from `source`
// (paired by index with `rows`).
DirectionResult centroid_softmax(const Matrix& rows, const Matrix& source,
                                 const std::vector<int>& ids, int num_ids,
                                 const Sge2eParams& p) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  std::vector<int> counts(static_cast<std::size_t>(num_ids), 0);
  Matrix sums = Matrix::Zero(num_ids, d);
  for (Eigen::Index a = 0; a < n; ++a) {
    ++counts[static_cast<std::size_t>(ids[static_cast<std::size_t>(a)])];
    sums.row(ids[static_cast<std::size_t>(a)]) += source.row(a);
  }

  DirectionResult r;
  r.d_rows = Matrix::Zero(n, d);
  r.d_source = Matrix::Zero(n, d);
  Matrix acc = Matrix::Zero(num_ids, d);  // gradient per shared centroid member
  Eigen::RowVectorXd z(num_ids);
  Eigen::RowVectorXd cosines(num_ids);
  Matrix centroids(num_ids, d);
  Vector cnorms(num_ids);

  for (Eigen::Index a = 0; a < n; ++a) {
    const int own = ids[static_cast<std::size_t>(a)];
    const double rn = rows.row(a).norm();
    if (!(rn > 0.0)) throw Error(kModule, "sge2e: zero-norm embedding row");
    const Eigen::RowVectorXd rhat = rows.row(a) / rn;
    const bool exclusive = counts[static_cast<std::size_t>(own)] > 1;
    for (int k = 0; k < num_ids; ++k) {
      const int nk = counts[static_cast<std::size_t>(k)];
      if (k == own && exclusive) {
        centroids.row(k) = (sums.row(k) - source.row(a)) / static_cast<double>(nk - 1);
      } else {
        centroids.row(k) = sums.row(k) / static_cast<double>(nk);
      }
      cnorms[k] = centroids.row(k).norm();
      if (!(cnorms[k] > 0.0)) throw Error(kModule, "sge2e: zero-norm centroid");
      cosines[k] = rhat.dot(centroids.row(k)) / cnorms[k];
      z[k] = p.scale * cosines[k] + p.bias;
    }
    const double lse = log_sum_exp(z);
    r.loss += lse - z[own];
    for (int k = 0; k < num_ids; ++k) {
      const double dz = (std::exp(z[k] - lse) - (k == own ? 1.0 : 0.0)) / static_cast<double>(n);
      r.d_scale += dz * cosines[k];
      r.d_bias += dz;
      const double dcos = p.scale * dz;
      const Eigen::RowVectorXd chat = centroids.row(k) / cnorms[k];
      r.d_rows.row(a) += dcos * (chat - cosines[k] * rhat) / rn;
      const Eigen::RowVectorXd dc = dcos * (rhat - cosines[k] * chat) / cnorms[k];
      const int nk = counts[static_cast<std::size_t>(k)];
      if (k == own && exclusive) {
        acc.row(k) += dc / static_cast<double>(nk - 1);
        r.d_source.row(a) -= dc / static_cast<double>(nk - 1);
      } else {
        acc.row(k) += dc / static_cast<double>(nk);
      }
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) r.d_source.row(j) += acc.row(ids[static_cast<std::size_t>(j)]);
  r.loss /= static_cast<double>(n);
  return r;
}

}  // namespace

EmbeddingLoss sge2e_loss_with_grads(const Matrix& faces, const Matrix& voices,
                                    const std::vector<int>& labels, const Sge2eParams& p) {
  const Eigen::Index n = faces.rows();
  if (voices.rows() != n || voices.cols() != faces.cols() ||
      static_cast<Eigen::Index>(labels.size()) != n) {
    throw Error(kModule, "sge2e_loss: batch shapes differ");
  }
  // Dense relabeling in order of first appearance.
  std::map<int, int> dense;
  std::vector<int> ids(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = dense.try_emplace(labels[i], static_cast<int>(dense.size())).first;
    ids[i] = it->second;
  }
  const int num_ids = static_cast<int>(dense.size());
  if (num_ids < 2) throw Error(kModule, "sge2e_loss needs at least 2 identities in the batch");

  const DirectionResult fv = centroid_softmax(faces, voices, ids, num_ids, p);
  const DirectionResult vf = centroid_softmax(voices, faces, ids, num_ids, p);
  EmbeddingLoss out;
  out.loss = 0.5 * (fv.loss + vf.loss);
  out.d_faces = 0.5 * (fv.d_rows + vf.d_source);
  out.d_voices = 0.5 * (fv.d_source + vf.d_rows);
  out.d_scale = 0.5 * (fv.d_scale + vf.d_scale);
  out.d_bias = 0.5 * (fv.d_bias + vf.d_bias);
  return out;
}

double sge2e_loss(const Matrix& faces, const Matrix& voices, const std::vector<int>& labels,
                  const Sge2eParams& p) {
  return sge2e_loss_with_grads(faces, voices, labels, p).loss;
}

LossAndGrads loss_and_grads(const VclipModel& model, const Batch& batch) {
  MlpTape face_tape;
  FlowTape voice_tape;
  const Matrix ef = mlp_forward_batch(model.face_proj, batch.faces, &face_tape);
  const Matrix ev = flow_forward_batch(model.voice_flow, batch.voices, &voice_tape);
  const EmbeddingLoss el = model.loss_kind == LossKind::kClip
                               ? clip_loss_with_grads(ef, ev, model.temperature)
                               : sge2e_loss_with_grads(ef, ev, batch.labels, model.sge2e);
  LossAndGrads out;
  out.loss = el.loss;
  out.grads = zeros_like(model);
  mlp_backward(model.face_proj, face_tape, el.d_faces, out.grads.face_proj);
  flow_backward(model.voice_flow, voice_tape, el.d_voices, out.grads.voice_flow);
  out.grads.sge2e = {el.d_scale, el.d_bias};
  if (!std::isfinite(out.loss)) throw Error(kModule, "non-finite loss");
  return out;
}

double batch_loss(const VclipModel& model, const Batch& batch) {
  const Matrix ef = project_faces(model, batch.faces);
  const Matrix ev = project_voices(model, batch.voices);
  return model.loss_kind == LossKind::kClip ? clip_loss(ef, ev, model.temperature)
                                            : sge2e_loss(ef, ev, batch.labels, model.sge2e);
}

void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<double>>& grads, double lr) {
  if (params.size() != grads.size()) throw Error(kModule, "adam: parameter/gradient count mismatch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) throw Error(kModule, "adam: shape mismatch");
    total += params[i].size();
  }
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  if (state.m.size() != total || state.v.size() != total) {
    throw Error(kModule, "adam: state shape does not match parameters");
  }
  ++state.step;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j, ++k) {
      const double g = grads[i][j];
      state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * g;
      state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * g * g;
      const double mhat = state.m[k] / bc1;
      const double vhat = state.v[k] / bc2;
      params[i][j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error(kModule, "batch_size must be >= 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(kModule, "learning_rate must be finite and >= 0");
  }
  if (max_epochs < 0) throw Error(kModule, "max_epochs must be >= 0");
  if (patience < 1) throw Error(kModule, "patience must be >= 1");
  if (eval_every < 1) throw Error(kModule, "eval_every must be >= 1");
  if (!(temperature > 0.0)) throw Error(kModule, "temperature must be > 0");
  if (flow_layers < 0) throw Error(kModule, "flow_layers must be >= 0");
}

namespace {

Batch gather(const PairMatrices& pairs, const std::vector<int>& labels,
             const std::vector<std::size_t>& rows) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.faces.resize(n, pairs.faces.cols());
  b.voices.resize(n, pairs.voices.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    b.faces.row(i) = pairs.faces.row(r);
    b.voices.row(i) = pairs.voices.row(r);
    if (!labels.empty()) b.labels.push_back(labels[static_cast<std::size_t>(r)]);
  }
  return b;
}

}  // namespace

TrainResult train_vclip(const EmbeddingTable& faces, const EmbeddingTable& voices,
                        const TrialSet& train_pairs, const TrialSet& dev,
                        const TrainConfig& cfg, const IdentityLabels* labels) {
  cfg.validate();
  const PairMatrices pairs = positive_pairs(train_pairs, faces, voices);
  const std::size_t n = static_cast<std::size_t>(pairs.faces.rows());
  if (n < 2) throw Error(kModule, "training needs at least 2 positive pairs");
  if (faces.dim() != voices.dim()) {
    throw Error(kModule, "face and voice features must share a dimension");
  }

  std::vector<int> ids;
  std::vector<std::vector<std::size_t>> groups;  // rows per identity
  if (cfg.loss_kind == LossKind::kSge2e) {
    if (!labels) throw Error(kModule, "SGE2E training needs identity labels");
    std::map<std::string, int> dense;
    for (std::size_t i = 0; i < n; ++i) {
      auto it = labels->find(pairs.face_ids[i]);
      if (it == labels->end()) throw Error(kModule, "no identity label for '" + pairs.face_ids[i] + "'");
      auto [pos, inserted] = dense.try_emplace(it->second, static_cast<int>(dense.size()));
      if (inserted) groups.emplace_back();
      ids.push_back(pos->second);
      groups[static_cast<std::size_t>(pos->second)].push_back(i);
    }
    if (groups.size() < 2) throw Error(kModule, "SGE2E training needs at least 2 identities");
  }

  VclipModel model = init_vclip(voices.dim(), cfg.mlp_hidden, cfg.flow_layers, cfg.seed, faces.dim());
  model.loss_kind = cfg.loss_kind;
  model.temperature = cfg.temperature;

  TrainResult result;
  auto& h = result.history;
  h.initial_dev_auc = eval_auc(model, dev, faces, voices);
  VclipModel best = model;
  double best_auc = h.initial_dev_auc;
  int bad_evals = 0;

  AdamState adam;
  adam.cfg = cfg.adam;
  RandomStream rng(derive_seed(cfg.seed, "train_vclip/shuffle"));
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> batches;
    if (cfg.loss_kind == LossKind::kClip) {
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      rng.shuffle(order);
      for (std::size_t lo = 0; lo < n; lo += batch_size) {
        const std::size_t hi = std::min(n, lo + batch_size);
        if (hi - lo >= 2) batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
      }
    } else {
      // Whole identities per batch so every identity contributes several rows.
      std::vector<std::size_t> order(groups.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      std::vector<std::size_t> current;
      std::size_t current_ids = 0;
      for (std::size_t g : order) {
        current.insert(current.end(), groups[g].begin(), groups[g].end());
        ++current_ids;
        if (current.size() >= batch_size) {
          batches.push_back(std::move(current));
          current.clear();
          current_ids = 0;
        }
      }
      if (current_ids >= 2) batches.push_back(std::move(current));
    }

    double loss_sum = 0.0;
    for (const auto& rows : batches) {
      LossAndGrads lg = loss_and_grads(model, gather(pairs, ids, rows));
      loss_sum += lg.loss;
      if (!cfg.train_voice_flow) lg.grads.voice_flow = zeros_like(model.voice_flow);
      adam_step(adam, trainable_spans(model), trainable_spans(lg.grads), cfg.learning_rate);
      if (model.loss_kind == LossKind::kSge2e) model.sge2e.scale = std::max(model.sge2e.scale, 1e-6);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    if (!std::isfinite(rec.loss)) throw Error(kModule, "training diverged (non-finite loss)");
    model.meta.epochs_run = epoch;

    bool stop = false;
    if (epoch % cfg.eval_every == 0) {
      rec.dev_auc = eval_auc(model, dev, faces, voices);
      if (rec.dev_auc > best_auc) {
        best_auc = rec.dev_auc;
        best = model;
        h.best_epoch = epoch;
        bad_evals = 0;
      } else if (++bad_evals >= cfg.patience) {
        stop = true;
      }
    }
    h.epochs.push_back(rec);
    if (stop) {
      h.stopped_early = true;
      break;
    }
  }
  best.meta.epochs_run = model.meta.epochs_run;
  best.meta.best_dev_auc = best_auc;
  best.meta.seed = cfg.seed;
  result.model = std::move(best);
  return result;
}

std::string format_history(const TrainHistory& h) {
  std::string out = "# epoch\tloss\tdev_auc\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "0\t-\t%.17g\n", h.initial_dev_auc);
  out += buf;
  for (const auto& r : h.epochs) {
    if (std::isnan(r.dev_auc)) {
      std::snprintf(buf, sizeof buf, "%d\t%.17g\t-\n", r.epoch, r.loss);
    } else {
      std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\n", r.epoch, r.loss, r.dev_auc);
    }
    out += buf;
  }
  return out;
}

}  // namespace fva
