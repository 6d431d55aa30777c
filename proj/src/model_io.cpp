#include "fva/model_io.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "fva/corpus_io.hpp"
#include "fva/error.hpp"

namespace fva {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void schema(const std::string& where, const std::string& msg) {
  throw FormatError(FormatErrorCode::kSchemaViolation, where + ": " + msg);
}

bool is_nonfinite_word(const std::string& s) {
  static const std::set<std::string> words{"NaN",       "nan",       "-NaN",      "+NaN",
                                           "Infinity",  "-Infinity", "+Infinity", "inf",
                                           "-inf",      "+inf",      "Inf",       "-Inf"};
  return words.count(s) > 0;
}

// True when an unquoted NaN/Infinity-like token appears outside strings.
bool has_bare_nonfinite_token(std::string_view text) {
  bool in_str = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') {
      in_str = true;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '-' || c == '+') {
      std::size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) ||
                                 text[j] == '-' || text[j] == '+'))
        ++j;
      if (is_nonfinite_word(std::string(text.substr(i, j - i)))) return true;
      i = j - 1;
    }
  }
  return false;
}

Json parse(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    if (has_bare_nonfinite_token(text))
      throw FormatError(FormatErrorCode::kNonFiniteParameter,
                        "document contains a non-finite number literal");
    throw FormatError(FormatErrorCode::kMalformedDocument, e.what(),
                      static_cast<std::int64_t>(e.byte));
  }
}

void exact_keys(const Json& obj, std::initializer_list<const char*> keys,
                const std::string& where) {
  if (!obj.is_object()) schema(where, "expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) schema(where, "unexpected field '" + it.key() + "'");
  for (const char* k : keys)
    if (!obj.contains(k)) schema(where, std::string("missing field '") + k + "'");
}

double number(const Json& j, const std::string& where) {
  if (j.is_string() && is_nonfinite_word(j.get<std::string>()))
    throw FormatError(FormatErrorCode::kNonFiniteParameter, where + ": non-finite parameter");
  if (!j.is_number()) schema(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v))
    throw FormatError(FormatErrorCode::kNonFiniteParameter, where + ": non-finite parameter");
  return v;
}

std::int64_t integer(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) schema(where, "expected an integer");
  return j.get<std::int64_t>();
}

std::uint64_t unsigned_integer(const Json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
    schema(where, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

std::string string(const Json& j, const std::string& where) {
  if (!j.is_string()) schema(where, "expected a string");
  return j.get<std::string>();
}

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

Vector vector_from(const Json& j, const std::string& where) {
  if (!j.is_array()) schema(where, "expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = number(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

Matrix matrix_from(const Json& j, const std::string& where) {
  if (!j.is_array()) schema(where, "expected an array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  if (rows > 0) {
    if (!j[0].is_array()) schema(where, "expected an array of rows");
    cols = j[0].size();
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string w = where + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || j[r].size() != cols) schema(w, "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          number(j[r][c], w + "[" + std::to_string(c) + "]");
  }
  return m;
}

Json to_json(const MlpParams& p) {
  Json layers = Json::array();
  for (const auto& l : p.layers) {
    Json o = Json::object();
    o["weight"] = to_json(l.weight);
    o["bias"] = to_json(l.bias);
    layers.push_back(std::move(o));
  }
  Json o = Json::object();
  o["layers"] = std::move(layers);
  return o;
}

MlpParams mlp_from(const Json& j, const std::string& where) {
  exact_keys(j, {"layers"}, where);
  const Json& layers = j["layers"];
  if (!layers.is_array() || layers.empty()) schema(where, "layers must be a non-empty array");
  MlpParams p;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string w = where + ".layers[" + std::to_string(i) + "]";
    exact_keys(layers[i], {"weight", "bias"}, w);
    p.layers.push_back({matrix_from(layers[i]["weight"], w + ".weight"),
                        vector_from(layers[i]["bias"], w + ".bias")});
  }
  return p;
}

Json to_json(const FlowParams& f) {
  Json layers = Json::array();
  for (const auto& l : f.layers) {
    Json o = Json::object();
    o["mask"] = to_json(l.mask);
    o["bound"] = l.bound;
    o["s_net"] = to_json(l.s_net);
    o["t_net"] = to_json(l.t_net);
    layers.push_back(std::move(o));
  }
  Json o = Json::object();
  o["dim"] = f.dim;
  o["layers"] = std::move(layers);
  return o;
}

FlowParams flow_from(const Json& j, const std::string& where) {
  exact_keys(j, {"dim", "layers"}, where);
  FlowParams f;
  f.dim = static_cast<int>(integer(j["dim"], where + ".dim"));
  const Json& layers = j["layers"];
  if (!layers.is_array()) schema(where, "layers must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string w = where + ".layers[" + std::to_string(i) + "]";
    exact_keys(layers[i], {"mask", "bound", "s_net", "t_net"}, w);
    CouplingLayer l;
    l.mask = vector_from(layers[i]["mask"], w + ".mask");
    l.bound = number(layers[i]["bound"], w + ".bound");
    l.s_net = mlp_from(layers[i]["s_net"], w + ".s_net");
    l.t_net = mlp_from(layers[i]["t_net"], w + ".t_net");
    f.layers.push_back(std::move(l));
  }
  return f;
}

Json envelope(const char* kind, int dim, Json params, std::uint64_t seed, Json meta) {
  Json doc = Json::object();
  doc["format"] = kModelFormat;
  doc["kind"] = kind;
  doc["version"] = kModelVersion;
  doc["dim"] = dim;
  doc["params"] = std::move(params);
  Json rng = Json::object();
  rng["seed"] = seed;
  rng["algorithm"] = RandomStream::kAlgorithm;
  doc["rng"] = std::move(rng);
  doc["training_meta"] = std::move(meta);
  return doc;
}

std::string dump(const Json& doc) { return doc.dump() + "\n"; }

struct Envelope {
  int dim = 0;
  const Json* params = nullptr;
  std::uint64_t seed = 0;
  const Json* meta = nullptr;
};

// Checks the envelope in a fixed order so each defect maps to one error.
Envelope open(const Json& doc, const char* kind) {
  if (!doc.is_object())
    throw FormatError(FormatErrorCode::kSchemaViolation, "document: expected an object");
  auto fmt = doc.find("format");
  if (fmt == doc.end() || !fmt->is_string() || fmt->get<std::string>() != kModelFormat)
    throw FormatError(FormatErrorCode::kFormatMismatch,
                      std::string("document is not an ") + kModelFormat + " file");
  auto k = doc.find("kind");
  if (k == doc.end() || !k->is_string())
    throw FormatError(FormatErrorCode::kSchemaViolation, "document: missing kind");
  if (k->get<std::string>() != kind)
    throw FormatError(FormatErrorCode::kKindMismatch,
                      "expected kind '" + std::string(kind) + "', found '" +
                          k->get<std::string>() + "'");
  auto v = doc.find("version");
  if (v == doc.end() || !v->is_number_integer())
    throw FormatError(FormatErrorCode::kSchemaViolation, "document: missing version");
  if (v->get<std::int64_t>() != kModelVersion)
    throw FormatError(FormatErrorCode::kVersionMismatch,
                      "unsupported model version " + std::to_string(v->get<std::int64_t>()));
  exact_keys(doc, {"format", "kind", "version", "dim", "params", "rng", "training_meta"},
             "document");
  Envelope e;
  const auto dim = integer(doc["dim"], "dim");
  if (dim < 1) schema("dim", "must be positive");
  e.dim = static_cast<int>(dim);
  e.params = &doc["params"];
  exact_keys(doc["rng"], {"seed", "algorithm"}, "rng");
  e.seed = unsigned_integer(doc["rng"]["seed"], "rng.seed");
  if (string(doc["rng"]["algorithm"], "rng.algorithm") != RandomStream::kAlgorithm)
    schema("rng.algorithm", "unknown generator '" + doc["rng"]["algorithm"].get<std::string>() + "'");
  e.meta = &doc["training_meta"];
  if (!e.meta->is_object()) schema("training_meta", "expected an object");
  return e;
}

template <class F>
void validated(F&& f) {
  try {
    f();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& err) {
    throw FormatError(FormatErrorCode::kSchemaViolation, err.what());
  }
}

}  // namespace

std::string vclip_to_json(const VclipModel& m) {
  Json params = Json::object();
  params["face_proj"] = to_json(m.face_proj);
  params["voice_flow"] = to_json(m.voice_flow);
  Json sg = Json::object();
  sg["scale"] = m.sge2e.scale;
  sg["bias"] = m.sge2e.bias;
  params["sge2e"] = std::move(sg);
  Json meta = Json::object();
  meta["loss_kind"] = to_string(m.loss_kind);
  meta["temperature"] = m.temperature;
  meta["epochs_run"] = m.meta.epochs_run;
  meta["best_dev_auc"] = m.meta.best_dev_auc;
  meta["config_digest"] = m.meta.config_digest;
  return dump(envelope("vclip", m.dim, std::move(params), m.meta.seed, std::move(meta)));
}

VclipModel vclip_from_json(std::string_view text) {
  const Json doc = parse(text);
  const Envelope e = open(doc, "vclip");
  VclipModel m;
  m.dim = e.dim;
  m.meta.seed = e.seed;
  const Json& p = *e.params;
  exact_keys(p, {"face_proj", "voice_flow", "sge2e"}, "params");
  m.face_proj = mlp_from(p["face_proj"], "params.face_proj");
  m.voice_flow = flow_from(p["voice_flow"], "params.voice_flow");
  exact_keys(p["sge2e"], {"scale", "bias"}, "params.sge2e");
  m.sge2e.scale = number(p["sge2e"]["scale"], "params.sge2e.scale");
  m.sge2e.bias = number(p["sge2e"]["bias"], "params.sge2e.bias");
  const Json& meta = *e.meta;
  exact_keys(meta, {"loss_kind", "temperature", "epochs_run", "best_dev_auc", "config_digest"},
             "training_meta");
  validated([&] { m.loss_kind = parse_loss_kind(string(meta["loss_kind"], "loss_kind")); });
  m.temperature = number(meta["temperature"], "training_meta.temperature");
  if (m.temperature <= 0) schema("training_meta.temperature", "must be positive");
  m.meta.epochs_run = static_cast<int>(integer(meta["epochs_run"], "training_meta.epochs_run"));
  m.meta.best_dev_auc = number(meta["best_dev_auc"], "training_meta.best_dev_auc");
  m.meta.config_digest = string(meta["config_digest"], "training_meta.config_digest");
  validated([&] { m.validate(); });
  if (m.face_proj.out_dim() != m.dim || m.voice_flow.dim != m.dim)
    schema("dim", "does not match parameter shapes");
  return m;
}

std::string generator_to_json(const SpeakerGenerator& sg) {
  Json pca = Json::object();
  pca["mean"] = to_json(sg.pca.mean);
  pca["basis"] = to_json(sg.pca.basis);
  pca["eigenvalues"] = to_json(sg.pca.eigenvalues);
  pca["variance_retained"] = sg.pca.variance_retained;
  pca["total_variance"] = sg.pca.total_variance;
  Json gmm = Json::object();
  gmm["weights"] = to_json(sg.gmm.weights);
  gmm["means"] = to_json(sg.gmm.means);
  gmm["variances"] = to_json(sg.gmm.variances);
  Json params = Json::object();
  params["pca"] = std::move(pca);
  params["gmm"] = std::move(gmm);
  Json meta = Json::object();
  meta["config_digest"] = sg.config_digest;
  return dump(envelope("speaker_generator", sg.source_dim, std::move(params), sg.seed,
                       std::move(meta)));
}

SpeakerGenerator generator_from_json(std::string_view text) {
  const Json doc = parse(text);
  const Envelope e = open(doc, "speaker_generator");
  SpeakerGenerator sg;
  sg.source_dim = e.dim;
  sg.seed = e.seed;
  const Json& p = *e.params;
  exact_keys(p, {"pca", "gmm"}, "params");
  const Json& pca = p["pca"];
  exact_keys(pca, {"mean", "basis", "eigenvalues", "variance_retained", "total_variance"},
             "params.pca");
  sg.pca.mean = vector_from(pca["mean"], "params.pca.mean");
  sg.pca.basis = matrix_from(pca["basis"], "params.pca.basis");
  sg.pca.eigenvalues = vector_from(pca["eigenvalues"], "params.pca.eigenvalues");
  sg.pca.variance_retained = number(pca["variance_retained"], "params.pca.variance_retained");
  sg.pca.total_variance = number(pca["total_variance"], "params.pca.total_variance");
  const Json& gmm = p["gmm"];
  exact_keys(gmm, {"weights", "means", "variances"}, "params.gmm");
  sg.gmm.weights = vector_from(gmm["weights"], "params.gmm.weights");
  sg.gmm.means = matrix_from(gmm["means"], "params.gmm.means");
  sg.gmm.variances = matrix_from(gmm["variances"], "params.gmm.variances");
  exact_keys(*e.meta, {"config_digest"}, "training_meta");
  sg.config_digest = string((*e.meta)["config_digest"], "training_meta.config_digest");
  validated([&] { sg.validate(); });
  return sg;
}

std::string signature_to_json(const SignatureNet& s) {
  Json params = Json::object();
  params["net"] = to_json(s.params);
  Json meta = Json::object();
  meta["oracle"] = s.oracle_descriptor;
  meta["train_cosine"] = s.meta.train_cosine;
  meta["heldout_cosine"] = s.meta.heldout_cosine;
  meta["baseline_heldout_cosine"] = s.meta.baseline_heldout_cosine;
  meta["epochs"] = s.meta.epochs;
  meta["config_digest"] = s.meta.config_digest;
  return dump(envelope("signature", s.dim(), std::move(params), s.meta.seed, std::move(meta)));
}

SignatureNet signature_from_json(std::string_view text) {
  const Json doc = parse(text);
  const Envelope e = open(doc, "signature");
  SignatureNet s;
  s.meta.seed = e.seed;
  exact_keys(*e.params, {"net"}, "params");
  s.params = mlp_from((*e.params)["net"], "params.net");
  const Json& meta = *e.meta;
  exact_keys(meta, {"oracle", "train_cosine", "heldout_cosine", "baseline_heldout_cosine",
                    "epochs", "config_digest"},
             "training_meta");
  s.oracle_descriptor = string(meta["oracle"], "training_meta.oracle");
  s.meta.train_cosine = number(meta["train_cosine"], "training_meta.train_cosine");
  s.meta.heldout_cosine = number(meta["heldout_cosine"], "training_meta.heldout_cosine");
  s.meta.baseline_heldout_cosine =
      number(meta["baseline_heldout_cosine"], "training_meta.baseline_heldout_cosine");
  s.meta.epochs = static_cast<int>(integer(meta["epochs"], "training_meta.epochs"));
  s.meta.config_digest = string(meta["config_digest"], "training_meta.config_digest");
  validated([&] { s.params.validate("signature net"); });
  if (s.params.in_dim() != e.dim || s.params.out_dim() != e.dim)
    schema("dim", "does not match parameter shapes");
  return s;
}

std::string model_kind(std::string_view text) {
  const Json doc = parse(text);
  if (!doc.is_object() || !doc.contains("kind") || !doc["kind"].is_string())
    throw FormatError(FormatErrorCode::kSchemaViolation, "document: missing kind");
  return doc["kind"].get<std::string>();
}

void save_model(const VclipModel& m, const std::string& path) {
  write_file(path, vclip_to_json(m));
}
void save_model(const SpeakerGenerator& sg, const std::string& path) {
  write_file(path, generator_to_json(sg));
}
void save_model(const SignatureNet& s, const std::string& path) {
  write_file(path, signature_to_json(s));
}

VclipModel load_vclip(const std::string& path) { return vclip_from_json(read_file(path)); }
SpeakerGenerator load_speaker_generator(const std::string& path) {
  return generator_from_json(read_file(path));
}
SignatureNet load_signature(const std::string& path) {
  return signature_from_json(read_file(path));
}

}  // namespace fva
