#include "fva/corpus_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fva/error.hpp"

namespace fva {

const char* to_string(Modality m) { return m == Modality::kFace ? "face" : "voice"; }

EmbeddingTable::EmbeddingTable(Modality modality, int dim)
    : modality_(modality), dim_(dim) {
  if (dim <= 0) throw Error("corpus_io", "embedding dimension must be positive");
}

void EmbeddingTable::add(std::string id, Vector v) {
  if (v.size() != dim_) {
    throw Error("corpus_io", "entry '" + id + "' has dimension " +
                                 std::to_string(v.size()) + ", table expects " +
                                 std::to_string(dim_));
  }
  if (!v.allFinite()) throw Error("corpus_io", "entry '" + id + "' is not finite");
  if (index_.count(id)) throw Error("corpus_io", "duplicate id '" + id + "'");
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  rows_.push_back(std::move(v));
}

std::optional<std::size_t> EmbeddingTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingTable::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error("corpus_io", std::string("unknown ") + to_string(modality_) + " id '" +
                                 id + "'");
  }
  return it->second;
}

Matrix EmbeddingTable::as_matrix() const {
  Matrix m(static_cast<Eigen::Index>(rows_.size()), dim_);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = rows_[i].transpose();
  }
  return m;
}

bool EmbeddingTable::operator==(const EmbeddingTable& other) const {
  if (modality_ != other.modality_ || dim_ != other.dim_ || ids_ != other.ids_) return false;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (rows_[i] != other.rows_[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// EMB1

namespace {

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <class T>
T get_le(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c >> 5) == 0x6) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c >> 4) == 0xe) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c >> 3) == 0x1e) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
      return false;
    }
    i += len;
  }
  return true;
}

constexpr std::size_t kHeaderBytes = 4 + 4 + 1 + 4 + 8;

}  // namespace

std::string encode_embeddings(const EmbeddingTable& table) {
  std::string out = "EMB1";
  put_le<std::uint32_t>(out, kEmb1Version);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(table.modality()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  put_le<std::uint64_t>(out, table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const std::string& id = table.id(i);
    if (id.empty()) throw FormatError(FormatErrorCode::kEmptyId, "cannot encode empty id");
    if (id.size() > 0xffff) {
      throw FormatError(FormatErrorCode::kIdTooLong, "id longer than 65535 bytes");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    const Vector& v = table.vector(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const auto f = static_cast<float>(v[k]);
      if (!std::isfinite(f)) {
        throw FormatError(FormatErrorCode::kNonFiniteValue,
                          "entry '" + id + "' overflows 32-bit float");
      }
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

EmbeddingTable decode_embeddings(const std::string& bytes) {
  if (bytes.size() < 4) throw FormatError(FormatErrorCode::kTruncatedHeader, "", 0);
  if (bytes.compare(0, 4, "EMB1") != 0) throw FormatError(FormatErrorCode::kBadMagic, "", 0);
  if (bytes.size() < kHeaderBytes) {
    throw FormatError(FormatErrorCode::kTruncatedHeader,
                      "need " + std::to_string(kHeaderBytes) + " bytes",
                      static_cast<std::int64_t>(bytes.size()));
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kEmb1Version) {
    throw FormatError(FormatErrorCode::kUnsupportedVersion,
                      "version " + std::to_string(version), 4);
  }
  const auto modality = get_le<std::uint8_t>(bytes, 8);
  if (modality > 1) {
    throw FormatError(FormatErrorCode::kBadModality, "value " + std::to_string(modality), 8);
  }
  const auto dim = get_le<std::uint32_t>(bytes, 9);
  if (dim == 0 || dim > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
    throw FormatError(FormatErrorCode::kZeroDim, "", 9);
  }
  const auto count = get_le<std::uint64_t>(bytes, 13);

  EmbeddingTable table(static_cast<Modality>(modality), static_cast<int>(dim));
  std::size_t pos = kHeaderBytes;
  const std::size_t payload = 4ull * dim;
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::size_t record_start = pos;
    if (bytes.size() - pos < 2) {
      throw FormatError(FormatErrorCode::kTruncatedRecord,
                        "record " + std::to_string(r) + " of " + std::to_string(count),
                        static_cast<std::int64_t>(record_start));
    }
    const auto id_len = get_le<std::uint16_t>(bytes, pos);
    pos += 2;
    if (id_len == 0) {
      throw FormatError(FormatErrorCode::kEmptyId, "record " + std::to_string(r),
                        static_cast<std::int64_t>(record_start));
    }
    if (bytes.size() - pos < id_len + payload) {
      throw FormatError(FormatErrorCode::kTruncatedRecord,
                        "record " + std::to_string(r) + " of " + std::to_string(count),
                        static_cast<std::int64_t>(record_start));
    }
    std::string id = bytes.substr(pos, id_len);
    if (!valid_utf8(id)) {
      throw FormatError(FormatErrorCode::kInvalidUtf8, "id",
                        static_cast<std::int64_t>(pos));
    }
    pos += id_len;
    if (table.find(id)) {
      throw FormatError(FormatErrorCode::kDuplicateId, "'" + id + "'",
                        static_cast<std::int64_t>(record_start));
    }
    Vector v(dim);
    for (std::uint32_t k = 0; k < dim; ++k) {
      const float f = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
      if (!std::isfinite(f)) {
        throw FormatError(FormatErrorCode::kNonFiniteValue, "entry '" + id + "'",
                          static_cast<std::int64_t>(pos));
      }
      v[k] = static_cast<double>(f);
      pos += 4;
    }
    table.add(std::move(id), std::move(v));
  }
  if (pos != bytes.size()) {
    throw FormatError(FormatErrorCode::kTrailingBytes,
                      std::to_string(bytes.size() - pos) + " bytes after last record",
                      static_cast<std::int64_t>(pos));
  }
  return table;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::kIo, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorCode::kIo, "short write to '" + path + "'");
}

EmbeddingTable read_embeddings(const std::string& path) {
  return decode_embeddings(read_file(path));
}

void write_embeddings(const EmbeddingTable& table, const std::string& path) {
  write_file(path, encode_embeddings(table));
}

// ---------------------------------------------------------------------------
// Trials and labels

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

template <class Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::size_t start = 0;
  std::int64_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
    if (!line.empty() && line.front() != '#') fn(line, line_no);
    start = end + 1;
  }
}

}  // namespace

TrialSet parse_trials(const std::string& text) {
  TrialSet trials;
  for_each_line(text, [&](const std::string& line, std::int64_t line_no) {
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw FormatError(FormatErrorCode::kColumnCount,
                        "expected 3 columns, got " + std::to_string(cols.size()), line_no);
    }
    if (cols[0].empty() || cols[1].empty()) {
      throw FormatError(FormatErrorCode::kEmptyField, "empty id", line_no);
    }
    if (cols[2] != "0" && cols[2] != "1") {
      throw FormatError(FormatErrorCode::kBadLabel, "label '" + cols[2] + "'", line_no);
    }
    trials.push_back({cols[0], cols[1], cols[2] == "1" ? 1 : 0});
  });
  return trials;
}

TrialSet read_trials(const std::string& path) { return parse_trials(read_file(path)); }

void write_trials(const TrialSet& trials, const std::string& path) {
  std::string out;
  for (const auto& t : trials) {
    out += t.face_id + '\t' + t.voice_id + '\t' + (t.label ? "1" : "0") + '\n';
  }
  write_file(path, out);
}

IdentityLabels read_labels(const std::string& path) {
  IdentityLabels labels;
  for_each_line(read_file(path), [&](const std::string& line, std::int64_t line_no) {
    auto cols = split_tabs(line);
    if (cols.size() != 2) {
      throw FormatError(FormatErrorCode::kColumnCount,
                        "expected 2 columns, got " + std::to_string(cols.size()), line_no);
    }
    if (cols[0].empty() || cols[1].empty()) {
      throw FormatError(FormatErrorCode::kEmptyField, "empty field", line_no);
    }
    if (!labels.emplace(cols[0], cols[1]).second) {
      throw FormatError(FormatErrorCode::kDuplicateId, "'" + cols[0] + "'", line_no);
    }
  });
  return labels;
}

void write_labels(const IdentityLabels& labels, const std::string& path) {
  std::string out;
  for (const auto& [id, identity] : labels) out += id + '\t' + identity + '\n';
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticCorpusConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error("corpus_io", "synthetic config: " + m); };
  if (num_identities < 2) fail("num_identities must be >= 2");
  if (dev_identities < 0 || test_identities < 0 || eval_identities < 0) {
    fail("split sizes must be non-negative");
  }
  if ((dev_identities == 1) || (test_identities == 1) || (eval_identities == 1)) {
    fail("a non-empty split needs at least 2 identities for negative trials");
  }
  if (samples_per_identity < 1) fail("samples_per_identity must be positive");
  if (latent_dim < 1 || embed_dim < 1) fail("dimensions must be positive");
  if (latent_dim > embed_dim) fail("latent_dim must not exceed embed_dim");
  if (!std::isfinite(voice_idiosyncrasy) || voice_idiosyncrasy < 0.0) {
    fail("voice_idiosyncrasy must be finite and >= 0");
  }
  if (!std::isfinite(sample_noise) || sample_noise < 0.0) {
    fail("sample_noise must be finite and >= 0");
  }
}

namespace {

std::string pad(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

std::string face_id(int identity, int sample) {
  return "f" + pad(identity, 5) + "-" + std::to_string(sample);
}
std::string voice_id(int identity, int sample) {
  return "v" + pad(identity, 5) + "-" + std::to_string(sample);
}

int random_other(RandomStream& rng, int lo, int hi, int self) {
  const auto span = static_cast<std::uint64_t>(hi - lo - 1);
  int j = lo + static_cast<int>(rng.below(span));
  if (j >= self) ++j;
  return j;
}

// Positive = co-occurring clip pair; used for training splits.
TrialSet paired_trials(int lo, int hi, int spi, RandomStream& rng) {
  TrialSet out;
  for (int j = lo; j < hi; ++j) {
    for (int s = 0; s < spi; ++s) {
      out.push_back({face_id(j, s), voice_id(j, s), 1});
      out.push_back({face_id(j, s), voice_id(random_other(rng, lo, hi, j), s), 0});
    }
  }
  return out;
}

// Positive = same identity, different clip (when available); used for
// verification on held-out identities.
TrialSet verification_trials(int lo, int hi, int spi, RandomStream& rng) {
  TrialSet out;
  for (int j = lo; j < hi; ++j) {
    for (int s = 0; s < spi; ++s) {
      out.push_back({face_id(j, s), voice_id(j, (s + 1) % spi), 1});
      out.push_back({face_id(j, s), voice_id(random_other(rng, lo, hi, j), s), 0});
    }
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  const int m = cfg.latent_dim;
  const int d = cfg.embed_dim;
  const int total =
      cfg.num_identities + cfg.dev_identities + cfg.test_identities + cfg.eval_identities;

  SyntheticCorpus c;
  c.faces = EmbeddingTable(Modality::kFace, d);
  c.voices = EmbeddingTable(Modality::kVoice, d);

  RandomStream mixing(derive_seed(cfg.seed, "mixing"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  c.face_mixing = Matrix(d, m);
  c.voice_mixing = Matrix(d, m);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < m; ++k) c.face_mixing(i, k) = scale * mixing.normal();
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < m; ++k) c.voice_mixing(i, k) = scale * mixing.normal();

  for (int j = 0; j < total; ++j) {
    RandomStream rng(derive_seed(cfg.seed, 0x1000000ull + static_cast<std::uint64_t>(j)));
    const Vector z = rng.normal_vector(m);
    const Vector w = rng.normal_vector(m);
    const Vector face_mean = c.face_mixing * z;
    const Vector voice_mean = c.voice_mixing * (z + cfg.voice_idiosyncrasy * w);
    const std::string identity = "spk" + pad(j, 5);
    for (int s = 0; s < cfg.samples_per_identity; ++s) {
      Vector f = face_mean + cfg.sample_noise * rng.normal_vector(d);
      Vector v = voice_mean + cfg.sample_noise * rng.normal_vector(d);
      c.faces.add(face_id(j, s), normalized(f));
      c.voices.add(voice_id(j, s), normalized(v));
      c.labels.emplace(face_id(j, s), identity);
      c.labels.emplace(voice_id(j, s), identity);
    }
  }

  RandomStream trials(derive_seed(cfg.seed, "trials"));
  const int spi = cfg.samples_per_identity;
  int lo = 0;
  int hi = cfg.num_identities;
  c.train = paired_trials(lo, hi, spi, trials);
  lo = hi;
  hi += cfg.dev_identities;
  if (hi > lo) c.dev = verification_trials(lo, hi, spi, trials);
  lo = hi;
  hi += cfg.test_identities;
  if (hi > lo) c.test = verification_trials(lo, hi, spi, trials);
  lo = hi;
  hi += cfg.eval_identities;
  if (hi > lo) c.eval_train = paired_trials(lo, hi, spi, trials);
  return c;
}

PairMatrices positive_pairs(const TrialSet& trials, const EmbeddingTable& faces,
                            const EmbeddingTable& voices) {
  PairMatrices p;
  std::vector<const Vector*> f, v;
  for (const auto& t : trials) {
    if (t.label != 1) continue;
    f.push_back(&faces.at(t.face_id));
    v.push_back(&voices.at(t.voice_id));
    p.face_ids.push_back(t.face_id);
    p.voice_ids.push_back(t.voice_id);
  }
  const auto n = static_cast<Eigen::Index>(f.size());
  p.faces = Matrix(n, faces.dim());
  p.voices = Matrix(n, voices.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    p.faces.row(i) = f[static_cast<std::size_t>(i)]->transpose();
    p.voices.row(i) = v[static_cast<std::size_t>(i)]->transpose();
  }
  return p;
}

}  // namespace fva
