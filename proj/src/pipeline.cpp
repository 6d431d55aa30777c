#include "fva/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "fva/model_io.hpp"
#include "fva/projections.hpp"

namespace fva {

SyntheticCorpusConfig corpus_config(const RunConfig& c) {
  SyntheticCorpusConfig s;
  s.num_identities = c.integer("num-identities");
  s.dev_identities = c.integer("dev-identities");
  s.test_identities = c.integer("test-identities");
  s.eval_identities = c.integer("eval-identities");
  s.samples_per_identity = c.integer("samples-per-identity");
  s.latent_dim = c.integer("latent-dim");
  s.embed_dim = c.integer("dim");
  s.voice_idiosyncrasy = c.real("beta");
  s.sample_noise = c.real("sigma");
  s.seed = c.u64("seed");
  return s;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.batch_size = c.integer("batch-size");
  t.learning_rate = c.real("learning-rate");
  t.max_epochs = c.integer("max-epochs");
  t.patience = c.integer("patience");
  t.eval_every = c.integer("eval-every");
  t.seed = c.u64("seed");
  try {
    t.loss_kind = parse_loss_kind(c.str("loss"));
  } catch (const Error&) {
    throw UsageError("--loss: '" + c.str("loss") + "' is not clip or sge2e");
  }
  t.temperature = c.real("temperature");
  t.mlp_hidden = c.int_list("mlp-hidden");
  t.flow_layers = c.integer("flow-layers");
  t.train_voice_flow = c.flag("train-voice-flow");
  return t;
}

SpeakerGeneratorConfig generator_config(const RunConfig& c, int components) {
  SpeakerGeneratorConfig g;
  g.components = components;
  g.variance_target = c.real("variance-target");
  g.gmm.max_iters = c.integer("gmm-max-iters");
  g.gmm.tol = c.real("gmm-tol");
  g.gmm.variance_floor = c.real("variance-floor");
  g.gmm.seed = c.u64("seed");
  return g;
}

MockOracleConfig oracle_config(const RunConfig& c) {
  MockOracleConfig o;
  o.contraction = c.real("oracle-contraction");
  o.angle = c.real("oracle-angle");
  o.noise = c.real("oracle-noise");
  o.seed = c.u64("seed");
  return o;
}

DistillConfig distill_config(const RunConfig& c) {
  DistillConfig d;
  d.learning_rate = c.real("distill-lr");
  d.epochs = c.integer("distill-epochs");
  d.batch_size = c.integer("distill-batch");
  d.hidden = c.int_list("distill-hidden");
  d.heldout_fraction = c.real("heldout-fraction");
  d.seed = c.u64("seed");
  return d;
}

unsigned thread_count(const RunConfig& c) {
  const int t = c.integer("threads");
  if (t < 0) throw UsageError("--threads must be >= 0");
  return t == 0 ? default_threads() : static_cast<unsigned>(t);
}

EmbeddingTable known_speakers(const TrialSet& trials, const EmbeddingTable& voices) {
  EmbeddingTable out(Modality::kVoice, voices.dim());
  for (const auto& t : trials)
    if (t.label && !out.find(t.voice_id)) out.add(t.voice_id, voices.at(t.voice_id));
  if (out.size() == 0) throw Error("pipeline", "no known speakers in the given trials");
  return out;
}

Vector known_speaker_mean(const EmbeddingTable& known) {
  return known.as_matrix().colwise().mean().transpose();
}

MockOracle make_mock_oracle(const RunConfig& c, const EmbeddingTable& known) {
  MockOracleConfig oc = oracle_config(c);
  oc.seed = derive_seed(c.u64("seed"), "oracle");
  oc.attractor = known_speaker_mean(known);
  return MockOracle(oc);
}

void write_provenance(const std::string& path, const std::string& digest) {
  write_file(path + ".prov", "config=" + digest + "\n");
}

void write_corpus(const SyntheticCorpus& corpus, const std::string& dir,
                  const std::string& digest) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  auto stamp = [&](const char* name) { write_provenance((d / name).string(), digest); };
  write_embeddings(corpus.faces, (d / "faces.emb1").string());
  stamp("faces.emb1");
  write_embeddings(corpus.voices, (d / "voices.emb1").string());
  stamp("voices.emb1");
  write_trials(corpus.train, (d / "train.tsv").string());
  stamp("train.tsv");
  write_trials(corpus.dev, (d / "dev.tsv").string());
  stamp("dev.tsv");
  write_trials(corpus.test, (d / "test.tsv").string());
  stamp("test.tsv");
  write_trials(corpus.eval_train, (d / "eval_train.tsv").string());
  stamp("eval_train.tsv");
  write_labels(corpus.labels, (d / "labels.tsv").string());
  stamp("labels.tsv");
}

SeedOutcome run_pipeline_seed(const RunConfig& base, std::uint64_t seed, const std::string& dir) {
  RunConfig c = base;
  c.set("seed", std::to_string(seed));
  const std::string digest = c.digest();
  const unsigned threads = thread_count(c);
  const std::filesystem::path out(dir);
  if (!dir.empty()) std::filesystem::create_directories(out);
  auto log = [&](const std::string& msg) { std::cerr << "[seed " << seed << "] " << msg << "\n"; };

  const SyntheticCorpus corpus = generate_synthetic_corpus(corpus_config(c));
  if (!dir.empty()) write_corpus(corpus, dir, digest);
  log("corpus: " + std::to_string(corpus.faces.size()) + " clips");

  SeedOutcome o;
  o.seed = seed;

  TrainConfig tc = train_config(c);
  tc.seed = derive_seed(seed, "system");
  TrainResult system = train_vclip(corpus.faces, corpus.voices, corpus.train, corpus.dev, tc);
  system.model.meta.config_digest = digest;
  o.system_dev_auc = system.model.meta.best_dev_auc;
  o.system_test_auc = eval_auc(system.model, corpus.test, corpus.faces, corpus.voices);
  log("system: epochs " + std::to_string(system.model.meta.epochs_run) + ", test auc " +
      std::to_string(o.system_test_auc));

  TrainConfig ec = tc;
  ec.seed = derive_seed(seed, "evaluator");
  TrainResult evaluator =
      train_vclip(corpus.faces, corpus.voices, corpus.eval_train, corpus.dev, ec);
  evaluator.model.meta.config_digest = digest;
  o.evaluator_test_auc = eval_auc(evaluator.model, corpus.test, corpus.faces, corpus.voices);
  log("evaluator: test auc " + std::to_string(o.evaluator_test_auc));

  TrainConfig bc = tc;
  bc.seed = derive_seed(seed, "baseline");
  bc.loss_kind = LossKind::kSge2e;
  bc.train_voice_flow = false;
  TrainResult baseline =
      train_vclip(corpus.faces, corpus.voices, corpus.train, corpus.dev, bc, &corpus.labels);
  baseline.model.meta.config_digest = digest;
  o.baseline_test_auc = eval_auc(baseline.model, corpus.test, corpus.faces, corpus.voices);
  log("baseline: test auc " + std::to_string(o.baseline_test_auc));

  o.system_gap = modality_gap(system.model, corpus.faces, corpus.voices, corpus.test);
  o.baseline_gap = modality_gap(baseline.model, corpus.faces, corpus.voices, corpus.test);

  const EmbeddingTable known = known_speakers(corpus.train, corpus.voices);
  const Matrix known_m = known.as_matrix();
  SpeakerGeneratorConfig gc = generator_config(c, c.integer("components"));
  gc.gmm.seed = derive_seed(seed, "generator");
  SpeakerGenerator generator = fit_speaker_generator(known_m, gc);
  generator.config_digest = digest;
  SpeakerGeneratorConfig egc = generator_config(c, c.integer("eval-components"));
  egc.gmm.seed = derive_seed(seed, "eval-gmm");
  SpeakerGenerator eval_gmm = fit_speaker_generator(known_m, generator.pca, egc);
  eval_gmm.config_digest = digest;
  log("generator: " + std::to_string(generator.pca.components()) + " PCA components");

  const MockOracle oracle = make_mock_oracle(c, known);

  DistillConfig dc = distill_config(c);
  dc.seed = derive_seed(seed, "distill");
  DistillResult sig = distill_signature(oracle, known, dc);
  sig.net.meta.config_digest = digest;
  o.signature_heldout_cosine = sig.net.meta.heldout_cosine;
  o.oracle_heldout_cosine = sig.net.meta.baseline_heldout_cosine;
  log("signature: held-out cosine " + std::to_string(o.signature_heldout_cosine));

  const EmbeddingTable pool = sample_candidates(generator, c.integer("n"), derive_seed(seed, "pool"));

  GenEvalInputs in;
  in.retrieval_model = &system.model;
  in.baseline_model = &baseline.model;
  in.signature = &sig.net;
  in.evaluator = &evaluator.model;
  in.ref_gmm = &eval_gmm;
  in.known_speakers = &known_m;
  in.oracle = &oracle;
  in.pool = &pool;
  in.faces = &corpus.faces;
  in.voices = &corpus.voices;
  in.references = sample_references(corpus.test, c.integer("m"), derive_seed(seed, "references"));
  in.k = c.integer("k");
  in.seed = derive_seed(seed, "eval");
  in.threads = threads;
  o.report = run_generation_eval(in);
  o.report.provenance = "config=" + digest;

  if (!dir.empty()) {
    write_file((out / "system.history").string(), format_history(system.history));
    write_file((out / "evaluator.history").string(), format_history(evaluator.history));
    write_file((out / "baseline.history").string(), format_history(baseline.history));
    save_model(system.model, (out / "system.json").string());
    save_model(evaluator.model, (out / "evaluator.json").string());
    save_model(baseline.model, (out / "baseline.json").string());
    save_model(generator, (out / "generator.json").string());
    save_model(eval_gmm, (out / "eval_gmm.json").string());
    save_model(sig.net, (out / "signature.json").string());
    write_embeddings(pool, (out / "pool.emb1").string());
    write_provenance((out / "pool.emb1").string(), digest);
    write_file((out / "config.txt").string(), "# config=" + digest + "\n" + c.dump());
    write_file((out / "report.txt").string(), format_report_table(o.report));
    write_file((out / "report.tsv").string(), format_report_records(o.report));
  }
  return o;
}

std::string format_summary(const std::vector<SeedOutcome>& outcomes) {
  auto g = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const SystemKind kinds[] = {SystemKind::kWithoutRetrieval, SystemKind::kMappedBaseline,
                              SystemKind::kNaive, SystemKind::kInformed};
  std::string out = "seed\tsystem_test_auc\tevaluator_test_auc\tbaseline_test_auc\tsystem_gap\tf2v_ref";
  for (auto k : kinds) out += std::string("\tf2v_") + to_string(k);
  out += "\tll_ref";
  for (auto k : kinds) out += std::string("\tll_") + to_string(k);
  for (auto k : kinds) out += std::string("\tll_std_") + to_string(k);
  out += "\n";

  std::vector<std::vector<double>> rows;
  for (const auto& o : outcomes) {
    std::vector<double> r{o.system_test_auc, o.evaluator_test_auc, o.baseline_test_auc,
                          o.system_gap, o.report.ref.f2v.mean};
    for (auto k : kinds) r.push_back(o.report.system(k).f2v.mean);
    r.push_back(o.report.ref.likelihood.mean);
    for (auto k : kinds) r.push_back(o.report.system(k).likelihood.mean);
    for (auto k : kinds) r.push_back(o.report.system(k).likelihood.std);
    out += std::to_string(o.seed);
    for (double v : r) out += "\t" + g(v);
    out += "\n";
    rows.push_back(std::move(r));
  }
  if (!rows.empty()) {
    out += "mean";
    for (std::size_t col = 0; col < rows[0].size(); ++col) {
      double s = 0.0;
      for (const auto& r : rows) s += r[col];
      out += "\t" + g(s / static_cast<double>(rows.size()));
    }
    out += "\n";
  }
  return out;
}

}  // namespace fva
