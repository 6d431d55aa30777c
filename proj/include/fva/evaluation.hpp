#pragma once

#include <span>
#include <string>
#include <vector>

#include "fva/corpus_io.hpp"
#include "fva/numerics.hpp"
#include "fva/projections.hpp"
#include "fva/retrieval.hpp"
#include "fva/signature.hpp"
#include "fva/speaker_gen.hpp"

namespace fva {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(std::span<const double> values);

// Normalized Mann-Whitney U with midranks for ties.
double auc_from_scores(std::span<const double> positives, std::span<const double> negatives);

// Cross-modal verification AUC with trial score cos(phi_i(face), phi_v(voice)).
double eval_auc(const VclipModel& m, const TrialSet& trials, const EmbeddingTable& faces,
                const EmbeddingTable& voices);

// Per-candidate cos(oracle(e), gt_voice); eval_v2v is their mean.
std::vector<double> v2v_values(const RetrievalResult& r, const TtsOracle& oracle,
                               const Vector& gt_voice);
double eval_v2v(const RetrievalResult& r, const TtsOracle& oracle, const Vector& gt_voice);

// Per-candidate cos(phi_v'(oracle(e)), phi_i'(face)) under a separate
// evaluator model; eval_f2v is their mean.
std::vector<double> f2v_values(const RetrievalResult& r, const TtsOracle& oracle,
                               const VclipModel& evaluator, const Vector& face_feat);
double eval_f2v(const RetrievalResult& r, const TtsOracle& oracle, const VclipModel& evaluator,
                const Vector& face_feat);

// Log-likelihood of every row under a reference GMM (after its PCA projection).
std::vector<double> likelihood_values(const SpeakerGenerator& ref, const Matrix& embeddings);
MeanStd eval_likelihood(const SpeakerGenerator& ref, const Matrix& embeddings);

struct ReferencePair {
  std::string face_id;
  std::string voice_id;
};

// First `m` positive trials after a seeded shuffle.
std::vector<ReferencePair> sample_references(const TrialSet& trials, int m, std::uint64_t seed);

struct ReferenceValues {
  MeanStd v2v;
  MeanStd f2v;
  MeanStd likelihood;
};

// v2v: cos(oracle(e_gt), e_gt). f2v: cos(phi_v'(e_gt), phi_i'(face)).
// likelihood: the reference GMM on the known speakers it was fit to.
ReferenceValues compute_reference_values(const std::vector<ReferencePair>& refs,
                                         const EmbeddingTable& faces,
                                         const EmbeddingTable& voices, const TtsOracle& oracle,
                                         const VclipModel& evaluator,
                                         const SpeakerGenerator& ref_gmm,
                                         const Matrix& known_speakers);

// Distance between the centroids of L2-normalized phi_i and phi_v outputs
// over the positive pairs.
double modality_gap(const VclipModel& m, const EmbeddingTable& faces,
                    const EmbeddingTable& voices, const TrialSet& pairs);

enum class SystemKind { kWithoutRetrieval, kMappedBaseline, kNaive, kInformed };

const char* to_string(SystemKind k);
SystemKind parse_system_kind(const std::string& s);

struct ReferenceRow {
  std::string face_id;
  MeanStd v2v;
  MeanStd f2v;
  MeanStd likelihood;
};

struct SystemReport {
  SystemKind kind = SystemKind::kNaive;
  int k = 0;
  std::vector<ReferenceRow> rows;
  // Over every (reference, candidate) value.
  MeanStd v2v;
  MeanStd f2v;
  MeanStd likelihood;
};

struct GenEvalReport {
  ReferenceValues ref;
  std::vector<SystemReport> systems;
  int k = 0;
  int n = 0;
  int m = 0;
  std::vector<std::string> warnings;
  std::string provenance;  // e.g. config digest

  const SystemReport& system(SystemKind kind) const;
};

struct GenEvalInputs {
  std::vector<SystemKind> systems{SystemKind::kWithoutRetrieval, SystemKind::kMappedBaseline,
                                  SystemKind::kNaive, SystemKind::kInformed};
  const VclipModel* retrieval_model = nullptr;  // naive / informed scoring
  const VclipModel* baseline_model = nullptr;   // mapped baseline
  const SignatureNet* signature = nullptr;      // informed scoring
  const VclipModel* evaluator = nullptr;
  const SpeakerGenerator* ref_gmm = nullptr;    // 4-component evaluation GMM
  const Matrix* known_speakers = nullptr;
  const TtsOracle* oracle = nullptr;
  const EmbeddingTable* pool = nullptr;         // shared candidate pool
  const EmbeddingTable* faces = nullptr;
  const EmbeddingTable* voices = nullptr;
  std::vector<ReferencePair> references;
  int k = 10;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

GenEvalReport run_generation_eval(const GenEvalInputs& in);

// Aligned table in the layout of the usual generated-voice evaluation table.
std::string format_report_table(const GenEvalReport& r);
// One tab-separated record per aggregate and per-reference row.
std::string format_report_records(const GenEvalReport& r);

}  // namespace fva
