#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fva/numerics.hpp"

namespace fva {

enum class Modality : std::uint8_t { kFace = 0, kVoice = 1 };

const char* to_string(Modality m);

// Identified fixed-dimension vectors. Insertion order is preserved; ids are
// unique.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(Modality modality, int dim);

  // Throws on duplicate id, dimension mismatch or non-finite entries.
  void add(std::string id, Vector v);

  Modality modality() const noexcept { return modality_; }
  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const Vector& vector(std::size_t i) const { return rows_.at(i); }
  std::optional<std::size_t> find(const std::string& id) const;
  // Like find() but throws naming the missing id.
  std::size_t index_of(const std::string& id) const;
  const Vector& at(const std::string& id) const { return rows_[index_of(id)]; }

  Matrix as_matrix() const;

  bool operator==(const EmbeddingTable& other) const;

 private:
  Modality modality_ = Modality::kVoice;
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<Vector> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Trial {
  std::string face_id;
  std::string voice_id;
  int label = 0;  // 1 = same person

  bool operator==(const Trial&) const = default;
};

using TrialSet = std::vector<Trial>;

// Sample id -> identity label.
using IdentityLabels = std::map<std::string, std::string>;

// EMB1 binary layout (little endian):
//   "EMB1" | u32 version=1 | u8 modality | u32 dim | u64 count |
//   count x (u16 id_len | id bytes | dim x f32)
inline constexpr std::uint32_t kEmb1Version = 1;

std::string encode_embeddings(const EmbeddingTable& table);
EmbeddingTable decode_embeddings(const std::string& bytes);
EmbeddingTable read_embeddings(const std::string& path);
void write_embeddings(const EmbeddingTable& table, const std::string& path);

// Tab separated `face_id voice_id label`, '#' lines ignored. Line numbers in
// errors are 1-based.
TrialSet parse_trials(const std::string& text);
TrialSet read_trials(const std::string& path);
void write_trials(const TrialSet& trials, const std::string& path);

IdentityLabels read_labels(const std::string& path);
void write_labels(const IdentityLabels& labels, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

struct SyntheticCorpusConfig {
  int num_identities = 2000;  // training identities
  int dev_identities = 250;
  int test_identities = 250;
  int eval_identities = 1000;  // training split for the separate evaluator
  int samples_per_identity = 4;
  int latent_dim = 8;
  int embed_dim = 64;
  double voice_idiosyncrasy = 0.5;  // beta
  double sample_noise = 0.1;        // sigma_s
  std::uint64_t seed = 0;

  void validate() const;
};

// Coupled face/voice corpus. Face j/s and voice j/s are the co-occurring pair
// of clip s of identity j. Identity splits are pairwise disjoint.
struct SyntheticCorpus {
  EmbeddingTable faces;
  EmbeddingTable voices;
  TrialSet train;       // positives are co-occurring pairs
  TrialSet dev;
  TrialSet test;
  TrialSet eval_train;  // same layout as `train`, disjoint identities
  IdentityLabels labels;
  Matrix face_mixing;   // D x m
  Matrix voice_mixing;  // D x m
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& cfg);

// Face and voice rows of the positive trials, in trial order.
struct PairMatrices {
  Matrix faces;
  Matrix voices;
  std::vector<std::string> face_ids;
  std::vector<std::string> voice_ids;
};

PairMatrices positive_pairs(const TrialSet& trials, const EmbeddingTable& faces,
                            const EmbeddingTable& voices);

}  // namespace fva
