#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fva/error.hpp"
#include "fva/evaluation.hpp"
#include "helpers.hpp"

using namespace fva;

namespace {

// Direct pair counting: P(pos > neg) + 0.5 P(pos == neg).
double pair_count_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// relu(x) - relu(-x) = x
MlpParams identity_face_net(int d) {
  MlpParams p;
  DenseLayer a{Matrix(2 * d, d), Vector::Zero(2 * d)};
  a.weight << Matrix::Identity(d, d), -Matrix::Identity(d, d);
  DenseLayer b{Matrix(d, 2 * d), Vector::Zero(d)};
  b.weight << Matrix::Identity(d, d), -Matrix::Identity(d, d);
  p.layers = {a, b};
  return p;
}

VclipModel identity_model(int d) {
  VclipModel m = init_vclip(d, {2 * d}, 2, 1);
  m.face_proj = identity_face_net(d);
  return m;
}

VclipModel scrambled_model(int dim, std::uint64_t seed) {
  VclipModel m = init_vclip(dim, {12}, 2, seed);
  RandomStream rng(seed + 1);
  for (auto& l : m.face_proj.layers)
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = 0.4 * rng.normal();
  for (auto& c : m.voice_flow.layers)
    for (auto* net : {&c.s_net, &c.t_net})
      for (auto& l : net->layers)
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = 0.3 * rng.normal();
  return m;
}

class IdentityOracle final : public TtsOracle {
 public:
  explicit IdentityOracle(int d) : d_(d) {}
  Vector apply(const Vector& e, std::string_view) const override { return e; }
  std::string descriptor() const override { return "identity"; }
  int dim() const override { return d_; }

 private:
  int d_;
};

EmbeddingTable table(Modality mod, const std::string& prefix, int n, int d, std::uint64_t seed) {
  EmbeddingTable t(mod, d);
  for (int i = 0; i < n; ++i)
    t.add(prefix + std::to_string(i), test::random_vector(d, seed * 1000 + static_cast<std::uint64_t>(i)));
  return t;
}

}  // namespace

TEST_CASE("AUC worked examples") {
  const std::vector<double> p1{0.9, 0.8}, n1{0.1, 0.2};
  CHECK(auc_from_scores(p1, n1) == 1.0);
  const std::vector<double> p2{0.5, 0.5}, n2{0.5, 0.5};
  CHECK(auc_from_scores(p2, n2) == 0.5);
  const std::vector<double> p3{0.9, 0.4}, n3{0.5, 0.1};
  CHECK(auc_from_scores(p3, n3) == 0.75);
  CHECK(auc_from_scores(n1, p1) == 0.0);
}

TEST_CASE("AUC equals direct pair counting") {
  RandomStream rng(2);
  for (int t = 0; t < 30; ++t) {
    const int np = 1 + static_cast<int>(rng.below(40)), nn = 1 + static_cast<int>(rng.below(40));
    std::vector<double> pos(np), neg(nn);
    for (auto& x : pos) x = std::round(rng.normal() * 3 + 0.5);
    for (auto& x : neg) x = std::round(rng.normal() * 3);
    CHECK(std::abs(auc_from_scores(pos, neg) - pair_count_auc(pos, neg)) < 1e-15);
    // strictly monotone transform
    std::vector<double> tp(pos), tn(neg);
    for (auto& x : tp) x = std::atan(x) * 5 + 2;
    for (auto& x : tn) x = std::atan(x) * 5 + 2;
    CHECK(auc_from_scores(tp, tn) == auc_from_scores(pos, neg));
  }
}

TEST_CASE("AUC input errors") {
  const std::vector<double> one{1.0}, none;
  CHECK_THROWS_AS(auc_from_scores(one, none), Error);
  CHECK_THROWS_AS(auc_from_scores(none, one), Error);
  const std::vector<double> bad{std::nan("")};
  CHECK_THROWS_AS(auc_from_scores(bad, one), Error);
}

TEST_CASE("eval_auc matches scoring each trial directly") {
  const int d = 5;
  const VclipModel m = scrambled_model(d, 3);
  const EmbeddingTable faces = table(Modality::kFace, "f", 20, d, 4);
  const EmbeddingTable voices = table(Modality::kVoice, "v", 20, d, 5);
  TrialSet trials;
  RandomStream rng(6);
  std::vector<double> pos, neg;
  for (int i = 0; i < 60; ++i) {
    Trial t{faces.id(rng.below(20)), voices.id(rng.below(20)), static_cast<int>(rng.below(2))};
    trials.push_back(t);
    const double s = cosine(project_face(m, faces.at(t.face_id)), project_voice(m, voices.at(t.voice_id)));
    (t.label ? pos : neg).push_back(s);
  }
  CHECK(std::abs(eval_auc(m, trials, faces, voices) - pair_count_auc(pos, neg)) < 1e-12);
  trials.push_back({"nobody", "v0", 1});
  CHECK_THROWS_AS(eval_auc(m, trials, faces, voices), Error);
  TrialSet single{{"f0", "v0", 1}};
  CHECK_THROWS_AS(eval_auc(m, single, faces, voices), Error);
}

TEST_CASE("mean and population std") {
  const std::vector<double> v{1, 2, 3, 4};
  const MeanStd ms = mean_std(v);
  CHECK(ms.mean == 2.5);
  CHECK(std::abs(ms.std - std::sqrt(1.25)) < 1e-15);
}

TEST_CASE("v2v and f2v with an identity chain") {
  const int d = 4;
  const Vector gt = test::random_vector(d, 7);
  RetrievalResult r;
  r.selected.push_back({"a", gt, 1.0, 0});
  r.selected.push_back({"b", -gt, 0.0, 1});
  const IdentityOracle o(d);
  const auto v2v = v2v_values(r, o, gt);
  CHECK(std::abs(v2v[0] - 1.0) < 1e-15);
  CHECK(std::abs(v2v[1] + 1.0) < 1e-15);
  CHECK(std::abs(eval_v2v(r, o, gt)) < 1e-15);
  const VclipModel ident = identity_model(d);
  const auto f2v = f2v_values(r, o, ident, gt);
  CHECK(std::abs(f2v[0] - 1.0) < 1e-12);
  const VclipModel ev = scrambled_model(d, 8);
  const Vector face = test::random_vector(d, 9);
  CHECK(std::abs(eval_f2v(r, o, ev, face) -
                 0.5 * (cosine(project_voice(ev, gt), project_face(ev, face)) +
                        cosine(project_voice(ev, -gt), project_face(ev, face)))) < 1e-12);
  RetrievalResult empty;
  CHECK_THROWS_AS(eval_v2v(empty, o, gt), Error);
}

TEST_CASE("likelihood uses the reference model") {
  const Matrix x = test::random_matrix(200, 5, 10);
  SpeakerGeneratorConfig cfg;
  cfg.components = 2;
  const SpeakerGenerator g = fit_speaker_generator(x, cfg);
  const auto ll = likelihood_values(g, x.topRows(3));
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(ll[static_cast<std::size_t>(i)] - speaker_loglik(g, x.row(i).transpose())) < 1e-12);
  CHECK_THROWS_AS(likelihood_values(g, Matrix::Zero(2, 4)), Error);
}

TEST_CASE("modality gap") {
  const int d = 4;
  const VclipModel m = identity_model(d);
  const EmbeddingTable faces = table(Modality::kFace, "f", 10, d, 11);
  EmbeddingTable same(Modality::kVoice, d);
  for (std::size_t i = 0; i < faces.size(); ++i) same.add("v" + std::to_string(i), faces.vector(i));
  TrialSet pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({"f" + std::to_string(i), "v" + std::to_string(i), 1});
  pairs.push_back({"f0", "v1", 0});
  CHECK(modality_gap(m, faces, same, pairs) < 1e-12);

  const EmbeddingTable voices = table(Modality::kVoice, "v", 10, d, 12);
  const double g = modality_gap(m, faces, voices, pairs);
  Vector cf = Vector::Zero(d), cv = Vector::Zero(d);
  for (int i = 0; i < 10; ++i) {
    cf += normalized(faces.vector(static_cast<std::size_t>(i)));
    cv += normalized(voices.vector(static_cast<std::size_t>(i)));
  }
  CHECK(std::abs(g - (cf / 10 - cv / 10).norm()) < 1e-12);

  // a common rotation of both modalities leaves the gap unchanged
  const Eigen::HouseholderQR<Matrix> qr(test::random_matrix(d, d, 13));
  const Matrix rot = qr.householderQ();
  EmbeddingTable rf(Modality::kFace, d), rv(Modality::kVoice, d);
  for (std::size_t i = 0; i < 10; ++i) {
    rf.add(faces.id(i), rot * faces.vector(i));
    rv.add(voices.id(i), rot * voices.vector(i));
  }
  CHECK(std::abs(modality_gap(m, rf, rv, pairs) - g) < 1e-12);
  TrialSet one{{"f0", "v0", 1}};
  CHECK_THROWS_AS(modality_gap(m, faces, voices, one), Error);
}

TEST_CASE("reference sampling") {
  TrialSet t;
  for (int i = 0; i < 30; ++i) t.push_back({"f" + std::to_string(i), "v" + std::to_string(i), i % 3 == 0});
  const auto a = sample_references(t, 5, 1);
  const auto b = sample_references(t, 5, 1);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i].face_id == b[i].face_id);
    const int idx = std::stoi(a[i].face_id.substr(1));
    CHECK(idx % 3 == 0);
    CHECK(a[i].voice_id == "v" + std::to_string(idx));
  }
  CHECK_THROWS_AS(sample_references(t, 11, 1), Error);
  CHECK(parse_system_kind("w/o-retrieval") == SystemKind::kWithoutRetrieval);
  CHECK(std::string(to_string(SystemKind::kMappedBaseline)) == "mapped-baseline");
  CHECK_THROWS_AS(parse_system_kind("oracle"), Error);
}

TEST_CASE("generation evaluation end to end on a small setup") {
  const int d = 4;
  const EmbeddingTable faces = table(Modality::kFace, "f", 12, d, 20);
  const EmbeddingTable voices = table(Modality::kVoice, "v", 12, d, 21);
  const EmbeddingTable pool = table(Modality::kVoice, "c", 30, d, 22);
  const Matrix known = voices.as_matrix();
  SpeakerGeneratorConfig gc;
  gc.components = 1;
  const SpeakerGenerator gmm = fit_speaker_generator(known, gc);
  const VclipModel retr = scrambled_model(d, 23);
  const VclipModel base = scrambled_model(d, 24);
  const VclipModel evaluator = scrambled_model(d, 25);
  RandomStream rng(26);
  SignatureNet sig;
  sig.params = make_mlp({d, 8, d}, FinalLayerInit::kGaussian, rng);
  const IdentityOracle oracle(d);

  GenEvalInputs in;
  in.retrieval_model = &retr;
  in.baseline_model = &base;
  in.signature = &sig;
  in.evaluator = &evaluator;
  in.ref_gmm = &gmm;
  in.known_speakers = &known;
  in.oracle = &oracle;
  in.pool = &pool;
  in.faces = &faces;
  in.voices = &voices;
  for (int i = 0; i < 6; ++i) in.references.push_back({"f" + std::to_string(i), "v" + std::to_string(i)});
  in.k = 3;
  in.seed = 9;
  in.threads = 2;

  const GenEvalReport r = run_generation_eval(in);
  CHECK(r.warnings.empty());
  CHECK(r.n == 30);
  CHECK(r.m == 6);
  REQUIRE(r.systems.size() == 4);
  CHECK(r.system(SystemKind::kMappedBaseline).k == 1);
  CHECK(r.system(SystemKind::kNaive).k == 3);

  // aggregates over k*M values equal the mean of equal-sized row means
  for (const auto& s : r.systems) {
    REQUIRE(s.rows.size() == 6);
    double f = 0, l = 0;
    for (const auto& row : s.rows) {
      f += row.f2v.mean;
      l += row.likelihood.mean;
    }
    CHECK(std::abs(s.f2v.mean - f / 6) < 1e-12);
    CHECK(std::abs(s.likelihood.mean - l / 6) < 1e-9);
  }

  // naive row recomputed by hand
  const auto& naive = r.system(SystemKind::kNaive);
  const auto sel = retrieve_topk(retr, nullptr, "f2", faces.at("f2"), pool, 3, ScoringKind::kNaive);
  CHECK(std::abs(naive.rows[2].f2v.mean - eval_f2v(sel, oracle, evaluator, faces.at("f2"))) < 1e-12);
  CHECK(std::abs(naive.rows[2].v2v.mean - eval_v2v(sel, oracle, voices.at("v2"))) < 1e-12);

  // mapped baseline row recomputed by hand
  const auto mb = mapped_baseline(base, "f1", faces.at("f1"));
  CHECK(std::abs(r.system(SystemKind::kMappedBaseline).rows[1].likelihood.mean -
                 speaker_loglik(gmm, mb.selected[0].embedding)) < 1e-12);

  // identity oracle: the ground truth re-embeds onto itself
  CHECK(std::abs(r.ref.v2v.mean - 1.0) < 1e-12);

  // deterministic, including the random draw without retrieval
  const GenEvalReport again = run_generation_eval(in);
  CHECK(format_report_records(again) == format_report_records(r));
  in.threads = 1;
  CHECK(format_report_records(run_generation_eval(in)) == format_report_records(r));

  // the report tables carry every system
  const std::string table_text = format_report_table(r);
  for (const char* name : {"ref value", "w/o-retrieval", "mapped-baseline", "naive", "informed"})
    CHECK(table_text.find(name) != std::string::npos);
  std::istringstream rec(format_report_records(r));
  std::string line;
  int reference_rows = 0;
  while (std::getline(rec, line))
    if (line.rfind("reference\t", 0) == 0) ++reference_rows;
  CHECK(reference_rows == 4 * 6);

  // evaluator reuse is flagged
  in.evaluator = &retr;
  const GenEvalReport warned = run_generation_eval(in);
  REQUIRE(warned.warnings.size() == 1);
  CHECK(format_report_table(warned).find("same parameters") != std::string::npos);

  // informed scoring without a signature is an error
  in.signature = nullptr;
  CHECK_THROWS_AS(run_generation_eval(in), Error);
  in.systems = {SystemKind::kNaive};
  in.k = 31;
  CHECK_THROWS_AS(run_generation_eval(in), Error);
}
