#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fva/corpus_io.hpp"
#include "fva/evaluation.hpp"
#include "fva/run_config.hpp"
#include "fva/signature.hpp"
#include "fva/speaker_gen.hpp"
#include "fva/training.hpp"

namespace fva {

SyntheticCorpusConfig corpus_config(const RunConfig& c);
TrainConfig train_config(const RunConfig& c);
SpeakerGeneratorConfig generator_config(const RunConfig& c, int components);
// Attractor left empty; see known_speaker_mean.
MockOracleConfig oracle_config(const RunConfig& c);
DistillConfig distill_config(const RunConfig& c);
unsigned thread_count(const RunConfig& c);

// Voices of the positive trials, in first-appearance order.
EmbeddingTable known_speakers(const TrialSet& trials, const EmbeddingTable& voices);
Vector known_speaker_mean(const EmbeddingTable& known);

// Mock oracle of a run: attractor = known-speaker mean, noise stream derived
// from the run seed.
MockOracle make_mock_oracle(const RunConfig& c, const EmbeddingTable& known);

// `<path>.prov` holding the config digest, for formats without a metadata slot.
void write_provenance(const std::string& path, const std::string& digest);

// faces.emb1, voices.emb1, train.tsv, dev.tsv, test.tsv, eval_train.tsv,
// labels.tsv, each with a provenance sidecar.
void write_corpus(const SyntheticCorpus& corpus, const std::string& dir,
                  const std::string& digest);

struct SeedOutcome {
  std::uint64_t seed = 0;
  GenEvalReport report;
  double system_dev_auc = 0.0;
  double system_test_auc = 0.0;
  double evaluator_test_auc = 0.0;
  double baseline_test_auc = 0.0;
  double system_gap = 0.0;
  double baseline_gap = 0.0;
  double signature_heldout_cosine = 0.0;
  double oracle_heldout_cosine = 0.0;
};

// Full experiment for one seed: corpus, system / evaluator / baseline
// training, generator and evaluation GMM, signature distillation, shared
// candidate pool and the generation report. Artifacts go to `dir` when it is
// not empty.
SeedOutcome run_pipeline_seed(const RunConfig& c, std::uint64_t seed, const std::string& dir);

// One record per seed plus the mean over seeds.
std::string format_summary(const std::vector<SeedOutcome>& outcomes);

}  // namespace fva
