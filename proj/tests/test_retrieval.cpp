#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fva/error.hpp"
#include "fva/retrieval.hpp"
#include "helpers.hpp"

using namespace fva;

namespace {

// A model whose projections are not the identity.
VclipModel scrambled_model(int dim, std::uint64_t seed) {
  VclipModel m = init_vclip(dim, {12}, 2, seed);
  RandomStream rng(seed + 1);
  for (auto& l : m.face_proj.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = 0.4 * rng.normal();
  }
  for (auto& c : m.voice_flow.layers) {
    for (auto* net : {&c.s_net, &c.t_net})
      for (auto& l : net->layers)
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = 0.3 * rng.normal();
  }
  return m;
}

EmbeddingTable pool(int n, int dim, std::uint64_t seed) {
  EmbeddingTable t(Modality::kVoice, dim);
  for (int i = 0; i < n; ++i)
    t.add("c" + std::to_string(i), test::random_vector(dim, seed * 1000 + static_cast<std::uint64_t>(i)));
  return t;
}

SignatureNet scrambled_signature(int dim, std::uint64_t seed) {
  RandomStream rng(seed);
  SignatureNet s;
  s.params = make_mlp({dim, 2 * dim, dim}, FinalLayerInit::kGaussian, rng);
  s.oracle_descriptor = "test";
  return s;
}

// Full sort of all candidates, ties broken by pool index.
std::vector<std::size_t> brute_force(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace

TEST_CASE("top-k matches a full sort") {
  RandomStream rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(137);
    for (auto& x : s) x = std::round(rng.normal() * 4) / 4;  // many ties
    for (std::size_t k : {std::size_t{1}, std::size_t{10}, s.size()})
      CHECK(top_k_indices(s, k) == brute_force(s, k));
  }
}

TEST_CASE("top-k tie and bounds handling") {
  CHECK(top_k_indices({1.0, 1.0, 1.0}, 2) == std::vector<std::size_t>{0, 1});
  CHECK(top_k_indices({0.1, 0.9, 0.5}, 3) == std::vector<std::size_t>{1, 2, 0});
  CHECK_THROWS_AS(top_k_indices({0.1, 0.2}, 3), Error);
  CHECK_THROWS_AS(top_k_indices({0.1, 0.2}, 0), Error);
}

TEST_CASE("naive retrieval scores are the direct cosine") {
  const int d = 6;
  const VclipModel m = scrambled_model(d, 3);
  const EmbeddingTable p = pool(50, d, 4);
  const Vector face = test::random_vector(d, 5);
  const RetrievalResult r = retrieve_topk(m, nullptr, "f", face, p, 50, ScoringKind::kNaive);
  REQUIRE(r.selected.size() == 50);
  std::vector<double> direct;
  for (std::size_t i = 0; i < p.size(); ++i) direct.push_back(score_naive(m, p.vector(i), face));
  const auto expect = brute_force(direct, 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(r.selected[i].pool_index == expect[i]);
    CHECK(std::abs(r.selected[i].score - direct[expect[i]]) < 1e-12);
    CHECK(r.selected[i].id == p.id(expect[i]));
    CHECK(r.selected[i].embedding == p.vector(expect[i]));
    if (i > 0) CHECK(r.selected[i].score <= r.selected[i - 1].score);
  }
  CHECK(r.reference_id == "f");
}

TEST_CASE("informed retrieval scores through the signature") {
  const int d = 6;
  const VclipModel m = scrambled_model(d, 6);
  const SignatureNet s = scrambled_signature(d, 7);
  const EmbeddingTable p = pool(40, d, 8);
  const Vector face = test::random_vector(d, 9);
  const RetrievalResult r = retrieve_topk(m, &s, "f", face, p, 5, ScoringKind::kInformed);
  std::vector<double> direct;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = score_informed(m, s, p.vector(i), face);
    CHECK(std::abs(v - cosine(project_voice(m, signature_forward(s, p.vector(i))),
                              project_face(m, face))) < 1e-12);
    direct.push_back(v);
  }
  const auto expect = brute_force(direct, 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.selected[i].pool_index == expect[i]);
  // the retrieved embeddings are the original candidates, not s(e)
  CHECK(r.selected[0].embedding == p.vector(expect[0]));
}

TEST_CASE("retrieval errors") {
  const VclipModel m = scrambled_model(4, 10);
  const EmbeddingTable p = pool(5, 4, 11);
  const Vector face = test::random_vector(4, 12);
  CHECK_THROWS_AS(retrieve_topk(m, nullptr, "f", face, p, 6, ScoringKind::kNaive), Error);
  CHECK_THROWS_AS(retrieve_topk(m, nullptr, "f", face, p, 2, ScoringKind::kInformed), Error);
  CHECK_THROWS_AS(retrieve_topk(m, nullptr, "f", face, pool(5, 3, 1), 2, ScoringKind::kNaive),
                  Error);
  CHECK_THROWS_AS(parse_scoring_kind("smart"), Error);
  CHECK(parse_scoring_kind("informed") == ScoringKind::kInformed);
  CHECK(std::string(to_string(ScoringKind::kNaive)) == "naive");
}

TEST_CASE("ranking is invariant to a monotone transform of the score") {
  RandomStream rng(13);
  std::vector<double> s(300), t(300);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    t[i] = std::exp(3 * s[i]) - 7;
  }
  CHECK(top_k_indices(s, 25) == top_k_indices(t, 25));
}

TEST_CASE("candidate index reuse gives the same results") {
  const int d = 5;
  const VclipModel m = scrambled_model(d, 14);
  const EmbeddingTable p = pool(30, d, 15);
  const CandidateIndex idx(m, nullptr, p, ScoringKind::kNaive, 2);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Vector face = test::random_vector(d, 20 + s);
    const auto a = retrieve_topk(idx, "f", face, 7);
    const auto b = retrieve_topk(m, nullptr, "f", face, p, 7, ScoringKind::kNaive);
    for (std::size_t i = 0; i < 7; ++i) CHECK(a.selected[i].pool_index == b.selected[i].pool_index);
  }
}

TEST_CASE("mapped baseline returns the face projection") {
  const VclipModel m = scrambled_model(4, 16);
  const Vector face = test::random_vector(4, 17);
  const RetrievalResult r = mapped_baseline(m, "f9", face);
  REQUIRE(r.selected.size() == 1);
  CHECK(r.selected[0].embedding == project_face(m, face));
  CHECK(r.kind == ScoringKind::kMappedBaseline);
}

TEST_CASE("report and selected embeddings") {
  RetrievalResult r;
  r.reference_id = "face1";
  r.selected.push_back({"c3", Vector::Ones(2), 0.5, 3});
  r.selected.push_back({"c1", Vector::Zero(2), 0.25, 1});
  CHECK(format_retrieval_report({r}) == "face1\t1\tc3\t0.5\nface1\t2\tc1\t0.25\n");
  const EmbeddingTable t = selected_embeddings({r}, 2);
  REQUIRE(t.size() == 2);
  CHECK(t.id(0) == "face1/1/c3");
  CHECK(t.id(1) == "face1/2/c1");
  CHECK(t.vector(0) == Vector::Ones(2));
}
