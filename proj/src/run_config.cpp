#include "fva/run_config.hpp"

#include <cerrno>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "fva/numerics.hpp"

namespace fva {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      // paths
      {"out-dir", "", "output directory", true},
      {"faces", "", "face EMB1 table", true},
      {"voices", "", "voice EMB1 table", true},
      {"trials", "", "trials TSV", true},
      {"dev-trials", "", "dev trials TSV for early stopping", true},
      {"known-trials", "", "trials whose voices are the known speakers", true},
      {"labels", "", "id to identity TSV", true},
      {"model", "", "Vclip model file", true},
      {"baseline", "", "feature-mapping baseline model file", true},
      {"evaluator", "", "separate evaluator model file", true},
      {"generator", "", "speaker generator model file", true},
      {"eval-gmm", "", "evaluation GMM model file", true},
      {"pca-from", "", "reuse the PCA of this generator file", true},
      {"signature", "", "signature network file", true},
      {"pool", "", "candidate pool EMB1 (sampled when empty)", true},
      {"oracle-file", "", "re-embedded EMB1 answering an external oracle request", true},
      {"output", "", "output file or prefix", true},
      {"history", "", "training history log", true},
      // corpus
      {"num-identities", "2000", "training identities", false},
      {"dev-identities", "250", "dev identities", false},
      {"test-identities", "250", "test identities", false},
      {"eval-identities", "1000", "identities reserved for the evaluator", false},
      {"samples-per-identity", "4", "clips per identity", false},
      {"latent-dim", "8", "shared latent dimension", false},
      {"dim", "64", "embedding dimension", false},
      {"beta", "0.5", "voice idiosyncrasy weight", false},
      {"sigma", "0.1", "per-sample noise", false},
      // training
      {"loss", "clip", "clip or sge2e", false},
      {"batch-size", "256", "minibatch size", false},
      {"learning-rate", "0.001", "Adam step size", false},
      {"max-epochs", "100", "epoch cap", false},
      {"patience", "3", "evaluations without improvement before stopping", false},
      {"eval-every", "1", "epochs between dev evaluations", false},
      {"temperature", "1", "fixed similarity divisor", false},
      {"mlp-hidden", "512,512", "face projection hidden widths", false},
      {"flow-layers", "4", "coupling layers", false},
      {"train-voice-flow", "true", "update the voice flow", false},
      // generator
      {"components", "16", "generator GMM components", false},
      {"eval-components", "4", "evaluation GMM components", false},
      {"variance-target", "0.99", "PCA retained variance", false},
      {"gmm-max-iters", "200", "EM iteration cap", false},
      {"gmm-tol", "1e-6", "EM mean log-likelihood tolerance", false},
      {"variance-floor", "1e-6", "diagonal variance floor", false},
      // oracle and signature
      {"oracle", "mock", "mock or external", false},
      {"oracle-contraction", "0.8", "mock oracle lambda", false},
      {"oracle-angle", "0.1", "mock oracle rotation angle", false},
      {"oracle-noise", "0.01", "mock oracle noise", false},
      {"distill-epochs", "30", "signature training epochs", false},
      {"distill-lr", "0.001", "signature learning rate", false},
      {"distill-batch", "128", "signature batch size", false},
      {"distill-hidden", "", "signature hidden widths (empty: 2D,2D)", false},
      {"heldout-fraction", "0.1", "signature held-out fraction", false},
      // retrieval and evaluation
      {"scoring", "naive", "naive, informed or mapped-baseline", false},
      {"k", "10", "candidates kept per reference", false},
      {"n", "5000", "candidate pool size", false},
      {"m", "200", "reference faces", false},
      {"seed", "0", "global seed", false},
      {"seeds", "", "comma-separated seeds for pipeline (default: seed)", false},
      {"threads", "0", "worker cap (0: available cores)", false},
  };
  return keys;
}

const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (name == k.name) return &k;
  return nullptr;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string canonical_key(std::string k) {
  for (char& c : k)
    if (c == '_') c = '-';
  return k;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw UsageError("--" + key + ": '" + v + "' is not " + what);
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const std::string key = canonical_key(trim(t.substr(0, eq)));
    if (!find_config_key(key)) throw UsageError(where + ": unknown key '" + key + "'");
    if (out.count(key)) throw UsageError(where + ": duplicate key '" + key + "'");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::resolve(const std::map<std::string, std::string>& flags,
                             const std::map<std::string, std::string>& file,
                             const std::optional<std::string>& env_seed) {
  RunConfig c;
  if (env_seed) c.set("seed", *env_seed);
  for (const auto& [k, v] : file) c.set(k, v);
  for (const auto& [k, v] : flags) c.set(k, v);
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = canonical_key(key);
  if (!find_config_key(k)) throw UsageError("unknown key '" + key + "'");
  values_[k] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown key '" + key + "'");
  return it->second;
}

const std::string& RunConfig::path(const std::string& key) const {
  const std::string& v = str(key);
  if (v.empty()) throw UsageError("missing required --" + key);
  return v;
}

int RunConfig::integer(const std::string& key) const {
  const std::string& v = str(key);
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& v = str(key);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    bad_value(key, v, "a non-negative integer");
  return out;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = str(key);
  if (v.empty()) bad_value(key, v, "a number");
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || errno == ERANGE) bad_value(key, v, "a number");
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  const std::string& v = str(key);
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    int x = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || p != item.data() + item.size() || item.empty())
      bad_value(key, v, "a comma-separated integer list");
    out.push_back(x);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::u64_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  const std::string& v = str(key);
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || p != item.data() + item.size() || item.empty())
      bad_value(key, v, "a comma-separated integer list");
    out.push_back(x);
  }
  return out;
}

std::string RunConfig::digest() const {
  std::string text;
  for (const auto& [k, v] : values_) {
    const ConfigKey* entry = find_config_key(k);
    if (entry->is_path || k == "threads") continue;
    text += k + "=" + v + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(text));
  return buf;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace fva
