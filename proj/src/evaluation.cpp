#include "fva/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>

#include "fva/error.hpp"

namespace fva {

namespace {

constexpr const char* kModule = "evaluation";

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g17(double v) { return fmt("%.17g", v); }

Matrix gather_rows(const EmbeddingTable& t, const std::vector<std::string>& ids, const char* what) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto idx = t.find(ids[i]);
    if (!idx) throw Error(kModule, std::string("unknown ") + what + " id '" + ids[i] + "'");
    out.row(static_cast<Eigen::Index>(i)) = t.vector(*idx).transpose();
  }
  return out;
}

}  // namespace

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size()));
  return r;
}

double auc_from_scores(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty())
    throw Error(kModule, "AUC needs at least one positive and one negative score");
  struct Item {
    double s;
    bool pos;
  };
  std::vector<Item> all;
  all.reserve(positives.size() + negatives.size());
  for (double s : positives) all.push_back({s, true});
  for (double s : negatives) all.push_back({s, false});
  for (const auto& it : all)
    if (!std::isfinite(it.s)) throw Error(kModule, "non-finite score");
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.s < b.s; });

  // Ranks doubled so midranks stay integral; all sums are exact integers and
  // the single division below is correctly rounded.
  std::uint64_t rank2_sum = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::uint64_t npos = 0;
    while (j < all.size() && all[j].s == all[i].s) {
      if (all[j].pos) ++npos;
      ++j;
    }
    // ranks i+1..j, midrank*2 = i+1+j
    rank2_sum += npos * static_cast<std::uint64_t>(i + 1 + j);
    i = j;
  }
  const std::uint64_t np = positives.size();
  const std::uint64_t nn = negatives.size();
  // 2U = sum(2*rank) - np*(np+1)
  const std::uint64_t u2 = rank2_sum - np * (np + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * np * nn);
}

double eval_auc(const VclipModel& m, const TrialSet& trials, const EmbeddingTable& faces,
                const EmbeddingTable& voices) {
  std::vector<std::string> face_ids, voice_ids;
  std::map<std::string, std::size_t> face_slot, voice_slot;
  for (const auto& t : trials) {
    if (face_slot.emplace(t.face_id, face_ids.size()).second) face_ids.push_back(t.face_id);
    if (voice_slot.emplace(t.voice_id, voice_ids.size()).second) voice_ids.push_back(t.voice_id);
  }
  bool any_pos = false, any_neg = false;
  for (const auto& t : trials) (t.label ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg) throw Error(kModule, "trials must contain both labels");

  Matrix pf = project_faces(m, gather_rows(faces, face_ids, "face"));
  Matrix pv = project_voices(m, gather_rows(voices, voice_ids, "voice"));
  for (Eigen::Index r = 0; r < pf.rows(); ++r) pf.row(r).normalize();
  for (Eigen::Index r = 0; r < pv.rows(); ++r) pv.row(r).normalize();

  std::vector<double> pos, neg;
  for (const auto& t : trials) {
    const double s = pf.row(static_cast<Eigen::Index>(face_slot[t.face_id]))
                         .dot(pv.row(static_cast<Eigen::Index>(voice_slot[t.voice_id])));
    (t.label ? pos : neg).push_back(s);
  }
  return auc_from_scores(pos, neg);
}

std::vector<double> v2v_values(const RetrievalResult& r, const TtsOracle& oracle,
                               const Vector& gt_voice) {
  if (r.selected.empty()) throw Error(kModule, "v2v needs at least one candidate");
  std::vector<double> out;
  out.reserve(r.selected.size());
  for (const auto& c : r.selected) out.push_back(cosine(oracle.apply(c.embedding, c.id), gt_voice));
  return out;
}

double eval_v2v(const RetrievalResult& r, const TtsOracle& oracle, const Vector& gt_voice) {
  return mean_std(v2v_values(r, oracle, gt_voice)).mean;
}

std::vector<double> f2v_values(const RetrievalResult& r, const TtsOracle& oracle,
                               const VclipModel& evaluator, const Vector& face_feat) {
  if (r.selected.empty()) throw Error(kModule, "f2v needs at least one candidate");
  const Vector pf = project_face(evaluator, face_feat);
  std::vector<double> out;
  out.reserve(r.selected.size());
  for (const auto& c : r.selected)
    out.push_back(cosine(project_voice(evaluator, oracle.apply(c.embedding, c.id)), pf));
  return out;
}

double eval_f2v(const RetrievalResult& r, const TtsOracle& oracle, const VclipModel& evaluator,
                const Vector& face_feat) {
  return mean_std(f2v_values(r, oracle, evaluator, face_feat)).mean;
}

std::vector<double> likelihood_values(const SpeakerGenerator& ref, const Matrix& embeddings) {
  if (embeddings.cols() != ref.source_dim)
    throw Error(kModule, "likelihood: embedding dim " + std::to_string(embeddings.cols()) +
                             " != reference dim " + std::to_string(ref.source_dim));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(embeddings.rows()));
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
    out.push_back(speaker_loglik(ref, embeddings.row(r).transpose()));
  return out;
}

MeanStd eval_likelihood(const SpeakerGenerator& ref, const Matrix& embeddings) {
  return mean_std(likelihood_values(ref, embeddings));
}

std::vector<ReferencePair> sample_references(const TrialSet& trials, int m, std::uint64_t seed) {
  std::vector<ReferencePair> pos;
  for (const auto& t : trials)
    if (t.label) pos.push_back({t.face_id, t.voice_id});
  if (m < 1 || static_cast<std::size_t>(m) > pos.size())
    throw Error(kModule, "requested " + std::to_string(m) + " references but only " +
                             std::to_string(pos.size()) + " positive trials exist");
  RandomStream rng(derive_seed(seed, "references"));
  rng.shuffle(pos);
  pos.resize(static_cast<std::size_t>(m));
  return pos;
}

ReferenceValues compute_reference_values(const std::vector<ReferencePair>& refs,
                                         const EmbeddingTable& faces,
                                         const EmbeddingTable& voices, const TtsOracle& oracle,
                                         const VclipModel& evaluator,
                                         const SpeakerGenerator& ref_gmm,
                                         const Matrix& known_speakers) {
  if (refs.empty()) throw Error(kModule, "no reference pairs");
  std::vector<double> v2v, f2v;
  for (const auto& p : refs) {
    const Vector& e = voices.at(p.voice_id);
    const Vector& f = faces.at(p.face_id);
    v2v.push_back(cosine(oracle.apply(e, p.voice_id), e));
    f2v.push_back(cosine(project_voice(evaluator, e), project_face(evaluator, f)));
  }
  ReferenceValues out;
  out.v2v = mean_std(v2v);
  out.f2v = mean_std(f2v);
  out.likelihood = eval_likelihood(ref_gmm, known_speakers);
  return out;
}

double modality_gap(const VclipModel& m, const EmbeddingTable& faces,
                    const EmbeddingTable& voices, const TrialSet& pairs) {
  std::vector<std::string> fids, vids;
  for (const auto& t : pairs)
    if (t.label) {
      fids.push_back(t.face_id);
      vids.push_back(t.voice_id);
    }
  if (fids.size() < 2) throw Error(kModule, "modality gap needs at least two pairs");
  Matrix pf = project_faces(m, gather_rows(faces, fids, "face"));
  Matrix pv = project_voices(m, gather_rows(voices, vids, "voice"));
  for (Eigen::Index r = 0; r < pf.rows(); ++r) pf.row(r).normalize();
  for (Eigen::Index r = 0; r < pv.rows(); ++r) pv.row(r).normalize();
  const Vector cf = pf.colwise().mean().transpose();
  const Vector cv = pv.colwise().mean().transpose();
  return (cf - cv).norm();
}

const char* to_string(SystemKind k) {
  switch (k) {
    case SystemKind::kWithoutRetrieval: return "w/o-retrieval";
    case SystemKind::kMappedBaseline: return "mapped-baseline";
    case SystemKind::kNaive: return "naive";
    case SystemKind::kInformed: return "informed";
  }
  return "?";
}

SystemKind parse_system_kind(const std::string& s) {
  for (auto k : {SystemKind::kWithoutRetrieval, SystemKind::kMappedBaseline, SystemKind::kNaive,
                 SystemKind::kInformed})
    if (s == to_string(k)) return k;
  throw Error(kModule, "unknown system '" + s + "'");
}

const SystemReport& GenEvalReport::system(SystemKind kind) const {
  for (const auto& s : systems)
    if (s.kind == kind) return s;
  throw Error(kModule, std::string("report has no row for ") + to_string(kind));
}

namespace {

struct RowValues {
  std::vector<double> v2v, f2v, ll;
};

RetrievalResult random_selection(const EmbeddingTable& pool, const std::string& face_id,
                                 std::size_t k, std::uint64_t seed) {
  RandomStream rng(derive_seed(derive_seed(seed, "w/o-retrieval"), face_id));
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots form a uniform sample.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(idx[i], idx[j]);
  }
  RetrievalResult r;
  r.reference_id = face_id;
  r.kind = ScoringKind::kNaive;
  for (std::size_t i = 0; i < k; ++i)
    r.selected.push_back({pool.id(idx[i]), pool.vector(idx[i]), 0.0, idx[i]});
  return r;
}

}  // namespace

GenEvalReport run_generation_eval(const GenEvalInputs& in) {
  if (!in.evaluator || !in.ref_gmm || !in.known_speakers || !in.oracle || !in.faces || !in.voices)
    throw Error(kModule, "generation eval is missing a required input");
  if (in.references.empty()) throw Error(kModule, "no references");
  if (in.k < 1) throw Error(kModule, "k must be >= 1");

  GenEvalReport rep;
  rep.k = in.k;
  rep.m = static_cast<int>(in.references.size());
  rep.n = in.pool ? static_cast<int>(in.pool->size()) : 0;
  rep.ref = compute_reference_values(in.references, *in.faces, *in.voices, *in.oracle,
                                     *in.evaluator, *in.ref_gmm, *in.known_speakers);

  if (in.retrieval_model && same_parameters(*in.retrieval_model, *in.evaluator))
    rep.warnings.push_back("evaluator has the same parameters as the retrieval model");
  if (in.baseline_model && same_parameters(*in.baseline_model, *in.evaluator))
    rep.warnings.push_back("evaluator has the same parameters as the baseline model");

  for (SystemKind kind : in.systems) {
    const bool needs_pool = kind != SystemKind::kMappedBaseline;
    if (needs_pool && !in.pool) throw Error(kModule, std::string(to_string(kind)) + " needs a pool");
    if (needs_pool && in.pool->size() < static_cast<std::size_t>(in.k))
      throw Error(kModule, "pool smaller than k");
    if (kind == SystemKind::kMappedBaseline && !in.baseline_model)
      throw Error(kModule, "mapped-baseline needs a baseline model");
    if ((kind == SystemKind::kNaive || kind == SystemKind::kInformed) && !in.retrieval_model)
      throw Error(kModule, std::string(to_string(kind)) + " needs a retrieval model");
    if (kind == SystemKind::kInformed && !in.signature)
      throw Error(kModule, "informed scoring needs a signature network");

    std::unique_ptr<CandidateIndex> index;
    if (kind == SystemKind::kNaive || kind == SystemKind::kInformed)
      index = std::make_unique<CandidateIndex>(
          *in.retrieval_model, in.signature, *in.pool,
          kind == SystemKind::kNaive ? ScoringKind::kNaive : ScoringKind::kInformed, in.threads);

    std::vector<RowValues> values(in.references.size());
    parallel_for(in.references.size(), in.threads, [&](std::size_t i) {
      const auto& ref = in.references[i];
      const Vector& face = in.faces->at(ref.face_id);
      const Vector& gt = in.voices->at(ref.voice_id);
      RetrievalResult r;
      switch (kind) {
        case SystemKind::kWithoutRetrieval:
          r = random_selection(*in.pool, ref.face_id, static_cast<std::size_t>(in.k), in.seed);
          break;
        case SystemKind::kMappedBaseline:
          r = mapped_baseline(*in.baseline_model, ref.face_id, face);
          break;
        case SystemKind::kNaive:
        case SystemKind::kInformed:
          r = retrieve_topk(*index, ref.face_id, face, static_cast<std::size_t>(in.k));
          break;
      }
      RowValues& rv = values[i];
      const Vector pf = project_face(*in.evaluator, face);
      Matrix synth(static_cast<Eigen::Index>(r.selected.size()), in.ref_gmm->source_dim);
      for (std::size_t c = 0; c < r.selected.size(); ++c) {
        const Vector out = in.oracle->apply(r.selected[c].embedding, r.selected[c].id);
        rv.v2v.push_back(cosine(out, gt));
        rv.f2v.push_back(cosine(project_voice(*in.evaluator, out), pf));
        synth.row(static_cast<Eigen::Index>(c)) = out.transpose();
      }
      rv.ll = likelihood_values(*in.ref_gmm, synth);
    });

    SystemReport sr;
    sr.kind = kind;
    sr.k = kind == SystemKind::kMappedBaseline ? 1 : in.k;
    std::vector<double> all_v2v, all_f2v, all_ll;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto& rv = values[i];
      sr.rows.push_back({in.references[i].face_id, mean_std(rv.v2v), mean_std(rv.f2v),
                         mean_std(rv.ll)});
      all_v2v.insert(all_v2v.end(), rv.v2v.begin(), rv.v2v.end());
      all_f2v.insert(all_f2v.end(), rv.f2v.begin(), rv.f2v.end());
      all_ll.insert(all_ll.end(), rv.ll.begin(), rv.ll.end());
    }
    sr.v2v = mean_std(all_v2v);
    sr.f2v = mean_std(all_f2v);
    sr.likelihood = mean_std(all_ll);
    rep.systems.push_back(std::move(sr));
  }
  return rep;
}

namespace {

std::string pm(const MeanStd& v, const char* f) {
  return fmt(f, v.mean) + " (\xC2\xB1" + fmt(f, v.std) + ")";
}

std::string pad(const std::string& s, std::size_t w) {
  // Width counted in code points so the plus-minus sign lines up.
  std::size_t cps = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++cps;
  return s + std::string(w > cps ? w - cps : 0, ' ');
}

}  // namespace

std::string format_report_table(const GenEvalReport& r) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"system", "k", "v2v", "f2v", "likelihood"});
  rows.push_back({"ref value", "-", pm(r.ref.v2v, "%.3f"), pm(r.ref.f2v, "%.3f"),
                  pm(r.ref.likelihood, "%.2f")});
  for (const auto& s : r.systems)
    rows.push_back({to_string(s.kind), std::to_string(s.k), pm(s.v2v, "%.3f"), pm(s.f2v, "%.3f"),
                    pm(s.likelihood, "%.2f")});
  std::vector<std::size_t> w(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::size_t cps = 0;
      for (unsigned char ch : row[c])
        if ((ch & 0xC0) != 0x80) ++cps;
      w[c] = std::max(w[c], cps);
    }
  std::string out;
  out += "# N=" + std::to_string(r.n) + " M=" + std::to_string(r.m) + " k=" + std::to_string(r.k);
  if (!r.provenance.empty()) out += " " + r.provenance;
  out += "\n";
  for (const auto& warn : r.warnings) out += "# warning: " + warn + "\n";
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      line += c + 1 == row.size() ? row[c] : pad(row[c], w[c]);
    }
    out += line + "\n";
  }
  return out;
}

std::string format_report_records(const GenEvalReport& r) {
  std::string out;
  out += "# N=" + std::to_string(r.n) + " M=" + std::to_string(r.m) + " k=" + std::to_string(r.k);
  if (!r.provenance.empty()) out += " " + r.provenance;
  out += "\n";
  for (const auto& warn : r.warnings) out += "# warning: " + warn + "\n";
  out += "record\tsystem\treference\tk\tv2v_mean\tv2v_std\tf2v_mean\tf2v_std\tll_mean\tll_std\n";
  auto line = [&](const char* rec, const std::string& sys, const std::string& ref, int k,
                  const MeanStd& a, const MeanStd& b, const MeanStd& c) {
    out += std::string(rec) + "\t" + sys + "\t" + ref + "\t" + std::to_string(k) + "\t" +
           g17(a.mean) + "\t" + g17(a.std) + "\t" + g17(b.mean) + "\t" + g17(b.std) + "\t" +
           g17(c.mean) + "\t" + g17(c.std) + "\n";
  };
  line("aggregate", "ref-value", "-", 0, r.ref.v2v, r.ref.f2v, r.ref.likelihood);
  for (const auto& s : r.systems) line("aggregate", to_string(s.kind), "-", s.k, s.v2v, s.f2v, s.likelihood);
  for (const auto& s : r.systems)
    for (const auto& row : s.rows)
      line("reference", to_string(s.kind), row.face_id, s.k, row.v2v, row.f2v, row.likelihood);
  return out;
}

}  // namespace fva
