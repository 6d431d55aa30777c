#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "fva/corpus_io.hpp"
#include "fva/evaluation.hpp"
#include "fva/model_io.hpp"
#include "fva/pipeline.hpp"
#include "fva/retrieval.hpp"
#include "fva/run_config.hpp"

using namespace fva;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TrialSet positives_only(const TrialSet& t) {
  TrialSet out;
  for (const auto& x : t)
    if (x.label) out.push_back(x);
  return out;
}

// Known speakers from --known-trials, or every voice when it is unset.
EmbeddingTable load_known(const RunConfig& c, const EmbeddingTable& voices) {
  if (!c.has("known-trials")) return voices;
  return known_speakers(read_trials(c.path("known-trials")), voices);
}

std::unique_ptr<TtsOracle> make_oracle(const RunConfig& c, const EmbeddingTable& known) {
  const std::string& kind = c.str("oracle");
  if (kind == "mock") return std::make_unique<MockOracle>(make_mock_oracle(c, known));
  if (kind == "external") {
    const std::string& file = c.path("oracle-file");
    return std::make_unique<ExternalOracle>(read_embeddings(file), file);
  }
  throw UsageError("--oracle: '" + kind + "' is not mock or external");
}

int cmd_synth(const RunConfig& c) {
  const SyntheticCorpus corpus = generate_synthetic_corpus(corpus_config(c));
  write_corpus(corpus, c.path("out-dir"), c.digest());
  std::cerr << "wrote " << corpus.faces.size() << " face and " << corpus.voices.size()
            << " voice embeddings to " << c.str("out-dir") << "\n";
  return 0;
}

int cmd_train(const RunConfig& c) {
  const EmbeddingTable faces = read_embeddings(c.path("faces"));
  const EmbeddingTable voices = read_embeddings(c.path("voices"));
  const TrialSet train = read_trials(c.path("trials"));
  const TrialSet dev = read_trials(c.path("dev-trials"));
  const TrainConfig tc = train_config(c);
  std::optional<IdentityLabels> labels;
  if (tc.loss_kind == LossKind::kSge2e) labels = read_labels(c.path("labels"));
  TrainResult r = train_vclip(faces, voices, train, dev, tc, labels ? &*labels : nullptr);
  r.model.meta.config_digest = c.digest();
  save_model(r.model, c.path("output"));
  if (c.has("history")) write_file(c.path("history"), format_history(r.history));
  std::cout << "best_dev_auc=" << g17(r.model.meta.best_dev_auc) << "\n";
  return 0;
}

int cmd_eval_auc(const RunConfig& c) {
  const VclipModel m = load_vclip(c.path("model"));
  const double auc = eval_auc(m, read_trials(c.path("trials")), read_embeddings(c.path("faces")),
                              read_embeddings(c.path("voices")));
  std::cout << "auc=" << g17(auc) << "\n";
  return 0;
}

int cmd_fit_gmm(const RunConfig& c) {
  const EmbeddingTable known = load_known(c, read_embeddings(c.path("voices")));
  SpeakerGeneratorConfig gc = generator_config(c, c.integer("components"));
  SpeakerGenerator sg;
  if (c.has("pca-from")) {
    sg = fit_speaker_generator(known.as_matrix(), load_speaker_generator(c.path("pca-from")).pca, gc);
  } else {
    sg = fit_speaker_generator(known.as_matrix(), gc);
  }
  sg.config_digest = c.digest();
  save_model(sg, c.path("output"));
  std::cout << "components=" << sg.gmm.components() << " pca_dim=" << sg.pca.components()
            << " mean_loglik=" << g17(gmm_mean_loglik(sg.gmm, pca_project_rows(sg.pca, known.as_matrix())))
            << "\n";
  return 0;
}

int cmd_distill(const RunConfig& c) {
  const EmbeddingTable known = load_known(c, read_embeddings(c.path("voices")));
  if (c.str("oracle") == "external" && !c.has("oracle-file")) {
    const std::string request = c.path("output") + ".request.emb1";
    write_oracle_request(known, request);
    write_provenance(request, c.digest());
    std::cerr << "wrote oracle request " << request
              << "; rerun with --oracle-file pointing at the re-embedded table\n";
    return 0;
  }
  const auto oracle = make_oracle(c, known);
  DistillResult r = distill_signature(*oracle, known, distill_config(c));
  r.net.meta.config_digest = c.digest();
  save_model(r.net, c.path("output"));
  std::cout << "train_cosine=" << g17(r.net.meta.train_cosine)
            << " heldout_cosine=" << g17(r.net.meta.heldout_cosine)
            << " identity_heldout_cosine=" << g17(r.net.meta.baseline_heldout_cosine) << "\n";
  return 0;
}

EmbeddingTable load_pool(const RunConfig& c) {
  if (c.has("pool")) return read_embeddings(c.path("pool"));
  const SpeakerGenerator sg = load_speaker_generator(c.path("generator"));
  return sample_candidates(sg, c.integer("n"), derive_seed(c.u64("seed"), "pool"));
}

int cmd_generate(const RunConfig& c) {
  const ScoringKind kind = [&] {
    try {
      return parse_scoring_kind(c.str("scoring"));
    } catch (const Error&) {
      throw UsageError("--scoring: '" + c.str("scoring") + "' is not naive, informed or mapped-baseline");
    }
  }();
  std::optional<SignatureNet> sig;
  if (kind == ScoringKind::kInformed) {
    if (!c.has("signature")) throw Error("retrieval", "informed scoring requires --signature");
    sig = load_signature(c.path("signature"));
  }
  const VclipModel m = load_vclip(c.path("model"));
  const EmbeddingTable faces = read_embeddings(c.path("faces"));
  const auto refs =
      sample_references(read_trials(c.path("trials")), c.integer("m"), derive_seed(c.u64("seed"), "references"));
  std::vector<RetrievalResult> results;
  if (kind == ScoringKind::kMappedBaseline) {
    for (const auto& r : refs) results.push_back(mapped_baseline(m, r.face_id, faces.at(r.face_id)));
  } else {
    const EmbeddingTable pool = load_pool(c);
    const CandidateIndex index(m, sig ? &*sig : nullptr, pool, kind, thread_count(c));
    for (const auto& r : refs)
      results.push_back(retrieve_topk(index, r.face_id, faces.at(r.face_id),
                                      static_cast<std::size_t>(c.integer("k"))));
  }
  const std::string prefix = c.path("output");
  const std::string digest = c.digest();
  write_embeddings(selected_embeddings(results, m.dim), prefix + ".emb1");
  write_provenance(prefix + ".emb1", digest);
  write_file(prefix + ".tsv", "# config=" + digest + "\n" + format_retrieval_report(results));
  std::cerr << "selected candidates for " << results.size() << " reference faces\n";
  return 0;
}

int cmd_eval_gen(const RunConfig& c) {
  const EmbeddingTable faces = read_embeddings(c.path("faces"));
  const EmbeddingTable voices = read_embeddings(c.path("voices"));
  const EmbeddingTable known = load_known(c, voices);
  const Matrix known_m = known.as_matrix();
  const VclipModel evaluator = load_vclip(c.path("evaluator"));
  const SpeakerGenerator eval_gmm = load_speaker_generator(c.path("eval-gmm"));
  const auto oracle = make_oracle(c, known);
  const EmbeddingTable pool = load_pool(c);

  std::optional<VclipModel> model, baseline;
  std::optional<SignatureNet> sig;
  GenEvalInputs in;
  in.systems = {SystemKind::kWithoutRetrieval};
  if (c.has("baseline")) {
    baseline = load_vclip(c.path("baseline"));
    in.systems.push_back(SystemKind::kMappedBaseline);
  }
  if (c.has("model")) {
    model = load_vclip(c.path("model"));
    in.systems.push_back(SystemKind::kNaive);
    if (c.has("signature")) {
      sig = load_signature(c.path("signature"));
      in.systems.push_back(SystemKind::kInformed);
    }
  }
  in.retrieval_model = model ? &*model : nullptr;
  in.baseline_model = baseline ? &*baseline : nullptr;
  in.signature = sig ? &*sig : nullptr;
  in.evaluator = &evaluator;
  in.ref_gmm = &eval_gmm;
  in.known_speakers = &known_m;
  in.oracle = oracle.get();
  in.pool = &pool;
  in.faces = &faces;
  in.voices = &voices;
  in.references = sample_references(read_trials(c.path("trials")), c.integer("m"),
                                    derive_seed(c.u64("seed"), "references"));
  in.k = c.integer("k");
  in.seed = derive_seed(c.u64("seed"), "eval");
  in.threads = thread_count(c);
  GenEvalReport rep = run_generation_eval(in);
  rep.provenance = "config=" + c.digest();
  const std::string prefix = c.path("output");
  write_file(prefix + ".txt", format_report_table(rep));
  write_file(prefix + ".tsv", format_report_records(rep));
  std::cout << format_report_table(rep);
  return 0;
}

int cmd_gap(const RunConfig& c) {
  const VclipModel m = load_vclip(c.path("model"));
  const double gap = modality_gap(m, read_embeddings(c.path("faces")), read_embeddings(c.path("voices")),
                                  positives_only(read_trials(c.path("trials"))));
  std::cout << "gap=" << g17(gap) << "\n";
  return 0;
}

int cmd_pipeline(const RunConfig& c) {
  const std::filesystem::path out(c.path("out-dir"));
  std::vector<std::uint64_t> seeds = c.u64_list("seeds");
  if (seeds.empty()) seeds.push_back(c.u64("seed"));
  std::vector<SeedOutcome> outcomes;
  for (std::uint64_t s : seeds) {
    outcomes.push_back(run_pipeline_seed(c, s, (out / ("seed-" + std::to_string(s))).string()));
    std::cout << "seed " << s << "\n" << format_report_table(outcomes.back().report);
  }
  write_file((out / "summary.tsv").string(), "# config=" + c.digest() + "\n" + format_summary(outcomes));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face-voice association and face-conditioned speaker generation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const Sub subs[] = {
      {"synth-data", "Generate a synthetic face/voice corpus", cmd_synth},
      {"train", "Train a Vclip model", cmd_train},
      {"eval-auc", "Cross-modal verification AUC", cmd_eval_auc},
      {"fit-gmm", "Fit the speaker generator (PCA + GMM)", cmd_fit_gmm},
      {"distill", "Distill the signature network from an oracle", cmd_distill},
      {"generate", "Retrieve top-k generated speakers for reference faces", cmd_generate},
      {"eval-gen", "Automatic evaluation of generated speakers", cmd_eval_gen},
      {"gap", "Modality gap of a trained model", cmd_gap},
      {"pipeline", "Full generation experiment over one or more seeds", cmd_pipeline},
  };

  std::map<std::string, std::string> flag_values;
  std::string config_path;
  std::vector<std::pair<CLI::App*, const Sub*>> registered;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "flat key = value config file");
    for (const auto& k : config_keys()) {
      std::string help = k.help;
      if (*k.default_value) help += std::string(" [") + k.default_value + "]";
      sub->add_option(std::string("--") + k.name, flag_values[k.name], help);
    }
    registered.emplace_back(sub, &s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  for (const auto& [sub, cmd] : registered) {
    if (!sub->parsed()) continue;
    try {
      std::map<std::string, std::string> flags;
      for (const auto& k : config_keys())
        if (sub->count(std::string("--") + k.name) > 0) flags[k.name] = flag_values[k.name];
      std::map<std::string, std::string> file;
      if (!config_path.empty()) file = parse_config_text(read_file(config_path), config_path);
      std::optional<std::string> env_seed;
      if (const char* e = std::getenv("FVA_SEED")) env_seed = e;
      const RunConfig c = RunConfig::resolve(flags, file, env_seed);
      std::cerr << "# " << cmd->name << " config=" << c.digest() << "\n" << c.dump();
      return cmd->run(c);
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n" << sub->help();
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
