#include "fva/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "fva/error.hpp"

namespace fva {

namespace {
constexpr const char* kModule = "retrieval";
}

const char* to_string(ScoringKind k) {
  switch (k) {
    case ScoringKind::kNaive: return "naive";
    case ScoringKind::kInformed: return "informed";
    case ScoringKind::kMappedBaseline: return "mapped-baseline";
  }
  return "?";
}

ScoringKind parse_scoring_kind(const std::string& s) {
  if (s == "naive") return ScoringKind::kNaive;
  if (s == "informed") return ScoringKind::kInformed;
  if (s == "mapped-baseline") return ScoringKind::kMappedBaseline;
  throw Error(kModule, "unknown scoring kind '" + s + "'");
}

double score_naive(const VclipModel& m, const Vector& e, const Vector& face_feat) {
  return cosine(project_voice(m, e), project_face(m, face_feat));
}

double score_informed(const VclipModel& m, const SignatureNet& s, const Vector& e,
                      const Vector& face_feat) {
  return cosine(project_voice(m, signature_forward(s, e)), project_face(m, face_feat));
}

CandidateIndex::CandidateIndex(const VclipModel& model, const SignatureNet* signature,
                               const EmbeddingTable& pool, ScoringKind kind, unsigned threads)
    : model_(&model), pool_(&pool), kind_(kind) {
  if (kind == ScoringKind::kMappedBaseline) {
    throw Error(kModule, "the mapped baseline does not score candidates");
  }
  if (kind == ScoringKind::kInformed && !signature) {
    throw Error(kModule, "informed scoring requires a signature network");
  }
  if (pool.dim() != model.dim) throw Error(kModule, "candidate/model dimension mismatch");
  projected_.resize(pool.size());
  parallel_for(pool.size(), threads, [&](std::size_t i) {
    const Vector& e = pool.vector(i);
    projected_[i] = kind == ScoringKind::kInformed
                        ? project_voice(model, signature_forward(*signature, e))
                        : project_voice(model, e);
  });
}

std::vector<double> CandidateIndex::scores(const Vector& face_projection) const {
  std::vector<double> out(projected_.size());
  for (std::size_t i = 0; i < projected_.size(); ++i) out[i] = cosine(projected_[i], face_projection);
  return out;
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
  if (k < 1) throw Error(kModule, "k must be >= 1");
  if (k > scores.size()) {
    throw Error(kModule, "k (" + std::to_string(k) + ") exceeds pool size (" +
                             std::to_string(scores.size()) + ")");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

RetrievalResult retrieve_topk(const CandidateIndex& index, const std::string& face_id,
                              const Vector& face_feat, std::size_t k) {
  const Vector face = project_face(index.model(), face_feat);
  const std::vector<double> scores = index.scores(face);
  RetrievalResult r;
  r.reference_id = face_id;
  r.kind = index.kind();
  for (std::size_t i : top_k_indices(scores, k)) {
    r.selected.push_back({index.pool().id(i), index.pool().vector(i), scores[i], i});
  }
  return r;
}

RetrievalResult retrieve_topk(const VclipModel& m, const SignatureNet* s,
                              const std::string& face_id, const Vector& face_feat,
                              const EmbeddingTable& candidates, std::size_t k, ScoringKind kind) {
  if (k < 1 || k > candidates.size()) {
    throw Error(kModule, "k must lie in [1, pool size]");
  }
  if (kind == ScoringKind::kMappedBaseline) return mapped_baseline(m, face_id, face_feat);
  CandidateIndex index(m, s, candidates, kind);
  return retrieve_topk(index, face_id, face_feat, k);
}

RetrievalResult mapped_baseline(const VclipModel& m, const std::string& face_id,
                                const Vector& face_feat) {
  RetrievalResult r;
  r.reference_id = face_id;
  r.kind = ScoringKind::kMappedBaseline;
  Vector e = project_face(m, face_feat);
  r.selected.push_back({"mapped:" + face_id, std::move(e), 1.0, 0});
  return r;
}

std::string format_retrieval_report(const std::vector<RetrievalResult>& results) {
  std::string out;
  char buf[64];
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", r.selected[i].score);
      out += r.reference_id + '\t' + std::to_string(i + 1) + '\t' + r.selected[i].id + '\t' + buf + '\n';
    }
  }
  return out;
}

EmbeddingTable selected_embeddings(const std::vector<RetrievalResult>& results, int dim) {
  EmbeddingTable t(Modality::kVoice, dim);
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      t.add(r.reference_id + "/" + std::to_string(i + 1) + "/" + r.selected[i].id,
            r.selected[i].embedding);
    }
  }
  return t;
}

}  // namespace fva
