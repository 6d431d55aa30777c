#pragma once

#include <string>
#include <vector>

#include "fva/corpus_io.hpp"
#include "fva/numerics.hpp"
#include "fva/projections.hpp"
#include "fva/signature.hpp"

namespace fva {

enum class ScoringKind { kNaive, kInformed, kMappedBaseline };

const char* to_string(ScoringKind k);
ScoringKind parse_scoring_kind(const std::string& s);

struct RetrievedCandidate {
  std::string id;
  Vector embedding;
  double score = 0.0;
  std::size_t pool_index = 0;
};

struct RetrievalResult {
  std::string reference_id;
  ScoringKind kind = ScoringKind::kNaive;
  std::vector<RetrievedCandidate> selected;  // scores non-increasing
};

// cos(phi_v(e), phi_i(face))
double score_naive(const VclipModel& m, const Vector& e, const Vector& face_feat);
// cos(phi_v(s(e)), phi_i(face))
double score_informed(const VclipModel& m, const SignatureNet& s, const Vector& e,
                      const Vector& face_feat);

// Candidate pool with phi_v(e) (or phi_v(s(e))) computed once, reused across
// reference faces.
class CandidateIndex {
 public:
  CandidateIndex(const VclipModel& model, const SignatureNet* signature,
                 const EmbeddingTable& pool, ScoringKind kind, unsigned threads = 1);

  const EmbeddingTable& pool() const { return *pool_; }
  const VclipModel& model() const { return *model_; }
  ScoringKind kind() const { return kind_; }
  // Score of every candidate against an already projected face.
  std::vector<double> scores(const Vector& face_projection) const;

 private:
  const VclipModel* model_;
  const EmbeddingTable* pool_;
  ScoringKind kind_;
  std::vector<Vector> projected_;
};

// Indices of the k largest scores; ties go to the earlier position.
std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k);

RetrievalResult retrieve_topk(const CandidateIndex& index, const std::string& face_id,
                              const Vector& face_feat, std::size_t k);
RetrievalResult retrieve_topk(const VclipModel& m, const SignatureNet* s,
                              const std::string& face_id, const Vector& face_feat,
                              const EmbeddingTable& candidates, std::size_t k, ScoringKind kind);

// The feature-mapping baseline: phi_i(face) itself is the generated speaker
// embedding (k = 1).
RetrievalResult mapped_baseline(const VclipModel& m, const std::string& face_id,
                                const Vector& face_feat);

// Lines `face_id<TAB>rank<TAB>candidate_id<TAB>score`, rank 1-based.
std::string format_retrieval_report(const std::vector<RetrievalResult>& results);
// Selected embeddings; ids are `<face_id>/<rank>/<candidate_id>`.
EmbeddingTable selected_embeddings(const std::vector<RetrievalResult>& results, int dim);

}  // namespace fva
