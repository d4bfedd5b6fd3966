// Command-line front end: corpus tools, baseline training, decoding, WER,
// campaigns, sweeps, rival comparison and the selection service.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hypsel/error.hpp"
#include "hypsel/experiment.hpp"
#include "hypsel/json_io.hpp"
#include "hypsel/reporting.hpp"
#include "hypsel/selection_service.hpp"

using namespace hypsel;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "seed (defaults to the config seed)")->each([&c](const std::string&) {
    c.seed_given = true;
  });
  auto* out = cmd->add_option("--out", c.out, "output path");
  if (needs_out) out->required();
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed_given) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

/// Corpus from `--corpus <dir>` when given, else generated from the config.
CorpusArchive corpus_for(const ExperimentConfig& cfg, const std::string& dir) {
  if (!dir.empty()) return load_corpus(fs::path(dir) / kCorpusFileName);
  GenerationConfig gen = cfg.corpus;
  gen.seed = cfg.seed;
  return generate_corpus(gen);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void emit_json(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    open_out(out) << j.dump(2) << '\n';
  }
}

std::string join_words(const WordSequence& w) {
  if (w.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::string run_length(const Alignment& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size();) {
    std::size_t j = i;
    while (j < a.size() && a[j] == a[i]) ++j;
    if (!s.empty()) s += ',';
    s += std::to_string(a[i]) + 'x' + std::to_string(j - i);
    i = j;
  }
  return s;
}

const std::vector<Utterance>& partition_of(const CorpusSplit& split, const std::string& name) {
  if (name == "labeled") return split.labeled;
  if (name == "eval") return split.eval_set;
  if (name.rfind("batch", 0) == 0) {
    int k = 0;
    try {
      k = std::stoi(name.substr(5));
    } catch (const std::exception&) {
      k = 0;
    }
    if (k >= 1 && k <= static_cast<int>(split.large_batches.size()))
      return split.large_batches[static_cast<std::size_t>(k - 1)];
  }
  throw ConfigError("partition", "expected labeled, eval or batch<k>, got '" + name + "'");
}

/// "id w w w" per line; words as integers.
std::map<std::string, WordSequence> read_transcripts(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, WordSequence> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string id;
    if (!(ls >> id)) continue;
    WordSequence words;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        const int w = std::stoi(tok, &used);
        if (used != tok.size() || w < 0) throw std::invalid_argument(tok);
        words.push_back(w);
      } catch (const std::exception&) {
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad word id '" + tok + "'");
      }
    }
    if (!out.emplace(id, std::move(words)).second)
      throw SchemaError(path.string() + ": duplicate utterance id " + id);
  }
  return out;
}

void write_transcripts(std::ostream& out, const std::vector<std::pair<std::string, WordSequence>>& rows) {
  for (const auto& [id, words] : rows) {
    out << id;
    for (WordId w : words) out << ' ' << w;
    out << '\n';
  }
}

std::vector<ArmSpec> arms_for(const ExperimentConfig& cfg, const std::string& which) {
  if (!cfg.arms.empty()) return cfg.arms;
  const double p = cfg.selector.kind == "noisy" ? cfg.selector.p : 0.0;
  std::vector<ArmSpec> arms;
  if (which == "rl" || which == "both") arms.push_back(reinforcement_arm("rl", cfg.rl, p));
  if (which == "unsup" || which == "both") arms.push_back(unsupervised_arm());
  arms.push_back(frozen_arm());
  return arms;
}

struct ServeOptions {
  int port = -1;
  std::string static_dir;
  bool debug = false;
  double lease = 300.0;
  std::string log;
};

void add_serve_options(CLI::App* cmd, ServeOptions& s) {
  cmd->add_option("--port", s.port, "HTTP port (default $HYPSEL_PORT or 8080; 0 picks one)");
  cmd->add_option("--static", s.static_dir, "directory served at /");
  cmd->add_flag("--debug", s.debug, "enable /api/debug endpoints and attach candidate WERs");
  cmd->add_option("--lease", s.lease, "ticket lease in seconds");
  cmd->add_option("--log", s.log, "selection log (JSONL); defaults to <out>/selections.jsonl");
}

int resolve_port(int flag) {
  if (flag >= 0) return flag;
  if (const char* env = std::getenv("HYPSEL_PORT")) {
    try {
      return std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("HYPSEL_PORT", "not a port number");
    }
  }
  return 8080;
}

SelectionSession* g_session = nullptr;

/// Runs the campaign and writes reports; with `serve` the RL arms take their
/// selections from the HTTP service.
void run_campaign_command(const ExperimentConfig& cfg, const std::vector<ArmSpec>& arms, const std::string& corpus_dir,
                          const fs::path& out, const ServeOptions* serve) {
  fs::create_directories(out);
  open_out(out / "config.json") << json(cfg).dump(2) << '\n';
  const CorpusArchive corpus = corpus_for(cfg, corpus_dir);

  std::unique_ptr<SelectionSession> session;
  std::unique_ptr<SelectionServer> server;
  SelectorFactory factory = default_selector;
  if (serve) {
    SessionOptions so;
    so.lease_seconds = serve->lease;
    so.seed = cfg.seed;
    so.log_path = serve->log.empty() ? out / "selections.jsonl" : fs::path(serve->log);
    so.debug = serve->debug;
    session = std::make_unique<SelectionSession>(so);
    g_session = session.get();
    ServerOptions opts;
    opts.port = resolve_port(serve->port);
    opts.static_dir = serve->static_dir;
    opts.debug_endpoints = serve->debug;
    server = std::make_unique<SelectionServer>(*session, opts);
    const int port = server->start();
    std::cerr << json{{"event", "listening"}, {"port", port}}.dump() << std::endl;
    SelectionSession* s = session.get();
    const bool attach = serve->debug;
    factory = [s, attach](const ArmSpec&, std::uint64_t) -> std::unique_ptr<Selector> {
      return std::make_unique<HumanSelector>(*s, attach);
    };
    std::signal(SIGINT, [](int) {
      if (g_session) g_session->abort();
    });
  }

  const SeedRun run = run_seed_on_corpus(cfg, corpus, arms, cfg.seed, factory);
  if (server) server->stop();
  g_session = nullptr;
  emit_report(run.arms, out);
  save_model(run.baseline.model, out / "models" / "baseline.bin");

  json summary{{"seed", cfg.seed}, {"baseline_eval_wer", run.baseline_eval_wer}, {"arms", json::array()}};
  for (const ArmResult& a : run.arms) {
    json wers = json::array();
    for (const StageReport& r : a.reports) wers.push_back(r.eval_wer);
    summary["arms"].push_back({{"name", a.arm.name}, {"mode", to_string(a.arm.mode)}, {"eval_wer", wers}});
  }
  std::cout << summary.dump() << '\n';
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence recognition training from hypothesis-selection feedback"};
  app.require_subcommand(1);

  // corpus
  Common corpus_gen, corpus_inspect;
  auto* corpus = app.add_subcommand("corpus", "generate or inspect a synthetic corpus");
  corpus->require_subcommand(1);
  auto* gen = corpus->add_subcommand("generate", "generate a corpus into a directory");
  add_common(gen, corpus_gen, true);
  auto* inspect = corpus->add_subcommand("inspect", "summarize a corpus directory");
  std::string inspect_dir, references;
  inspect->add_option("dir", inspect_dir, "corpus directory")->required();
  inspect->add_option("--references", references, "write reference transcripts of labeled|eval|batch<k> to --out");
  add_common(inspect, corpus_inspect, false);

  // model
  Common model_common;
  auto* model = app.add_subcommand("model", "model files");
  model->require_subcommand(1);
  auto* model_inspect = model->add_subcommand("inspect", "describe a model file");
  std::string model_path;
  model_inspect->add_option("file", model_path, "model file")->required();
  add_common(model_inspect, model_common, false);

  // train-baseline
  Common tb;
  std::string tb_corpus;
  auto* train = app.add_subcommand("train-baseline", "train the supervised baseline");
  add_common(train, tb, true);
  train->add_option("--corpus", tb_corpus, "corpus directory (default: generate from the config)");

  // decode
  Common dc;
  std::string dc_corpus, dc_model, dc_partition = "eval", dc_transcripts;
  int dc_n = 1;
  auto* decode = app.add_subcommand("decode", "N-best decode a partition");
  add_common(decode, dc, true);
  decode->add_option("--corpus", dc_corpus, "corpus directory")->required();
  decode->add_option("--model", dc_model, "model file")->required();
  decode->add_option("--partition", dc_partition, "labeled, eval or batch<k>");
  decode->add_option("-n,--nbest", dc_n, "N-best depth")->check(CLI::PositiveNumber);
  decode->add_option("--transcripts", dc_transcripts, "also write 1-best transcripts here");

  // wer
  Common wc;
  std::string wer_hyp, wer_ref;
  auto* wer = app.add_subcommand("wer", "score transcripts against references");
  add_common(wer, wc, false);
  wer->add_option("--hyp", wer_hyp, "hypothesis transcripts")->required();
  wer->add_option("--ref", wer_ref, "reference transcripts")->required();

  // campaign
  Common cc;
  std::string cc_arm = "both", cc_corpus;
  auto* campaign = app.add_subcommand("campaign", "staged training campaigns");
  campaign->require_subcommand(1);
  auto* campaign_run = campaign->add_subcommand("run", "run one seed's campaign and write reports");
  add_common(campaign_run, cc, true);
  campaign_run->add_option("--arm", cc_arm, "rl, unsup or both (ignored when the config lists arms)")
      ->check(CLI::IsMember({"rl", "unsup", "both"}));
  campaign_run->add_option("--corpus", cc_corpus, "corpus directory (default: generate from the config)");
  ServeOptions cc_serve;
  add_serve_options(campaign_run, cc_serve);

  // sweep
  Common sw;
  std::string sw_pairs, sw_corpus;
  auto* sweep = app.add_subcommand("sweep", "selection-error sweep over candidate pairs");
  add_common(sweep, sw, true);
  sweep->add_option("--pairs", sw_pairs, "pairs CSV from a campaign (default: decode batch 1 with the baseline)");
  sweep->add_option("--corpus", sw_corpus, "corpus directory (default: generate from the config)");

  // rival-compare
  Common rc;
  std::vector<int> rc_ranks{5, 10};
  std::vector<std::uint64_t> rc_seeds{1, 2, 3, 4, 5};
  double rc_p = 0.15;
  auto* rival = app.add_subcommand("rival-compare", "compare rival ranks against unsupervised adaptation");
  add_common(rival, rc, true);
  rival->add_option("--ranks", rc_ranks, "rival ranks")->delimiter(',');
  rival->add_option("--seeds", rc_seeds, "seeds")->delimiter(',');
  rival->add_option("--p", rc_p, "selection error rate")->check(CLI::Range(0.0, 1.0));

  // serve
  Common sv;
  std::string sv_corpus;
  ServeOptions sv_serve;
  auto* serve = app.add_subcommand("serve", "run a reinforcement campaign with selections from the HTTP service");
  add_common(serve, sv, true);
  serve->add_option("--corpus", sv_corpus, "corpus directory (default: generate from the config)");
  add_serve_options(serve, sv_serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 64);
  }

  try {
    if (*gen) {
      const ExperimentConfig cfg = load_config(corpus_gen);
      GenerationConfig g = cfg.corpus;
      g.seed = cfg.seed;
      const CorpusArchive archive = generate_corpus(g);
      fs::create_directories(corpus_gen.out);
      save_corpus(archive, fs::path(corpus_gen.out) / kCorpusFileName);
    } else if (*inspect) {
      const CorpusArchive archive = load_corpus(fs::path(inspect_dir) / kCorpusFileName);
      const CorpusSplit& s = archive.split;
      if (!references.empty()) {
        std::vector<std::pair<std::string, WordSequence>> rows;
        for (const Utterance& u : partition_of(s, references)) rows.emplace_back(u.id, u.reference);
        if (corpus_inspect.out.empty()) {
          write_transcripts(std::cout, rows);
        } else {
          auto out = open_out(corpus_inspect.out);
          write_transcripts(out, rows);
        }
      } else {
        auto frames = [](const std::vector<Utterance>& v) {
          long long n = 0;
          for (const auto& u : v) n += u.num_frames();
          return n;
        };
        json batches = json::array();
        for (const auto& b : s.large_batches) batches.push_back({{"utterances", b.size()}, {"frames", frames(b)}});
        emit_json({{"schema_version", kCorpusSchemaVersion},
                   {"config", s.config},
                   {"num_states", archive.truth.topology.num_states()},
                   {"labeled", {{"utterances", s.labeled.size()}, {"frames", frames(s.labeled)}}},
                   {"batches", batches},
                   {"eval", {{"utterances", s.eval_set.size()}, {"frames", frames(s.eval_set)}}}},
                  corpus_inspect.out);
      }
    } else if (*model_inspect) {
      const AcousticModel m = load_model(model_path);
      json layers = json::array();
      std::size_t params = 0;
      for (const auto& l : m.params.layers) {
        layers.push_back({l.weight.rows(), l.weight.cols()});
        params += static_cast<std::size_t>(l.weight.size() + l.bias.size());
      }
      emit_json({{"schema_version", kModelSchemaVersion},
                 {"arch", m.arch},
                 {"layers", layers},
                 {"parameters", params},
                 {"prior_min", m.state_priors.minCoeff()},
                 {"prior_max", m.state_priors.maxCoeff()}},
                model_common.out);
    } else if (*train) {
      const ExperimentConfig cfg = load_config(tb);
      const CorpusArchive corpus = corpus_for(cfg, tb_corpus);
      ExperimentConfig resolved = cfg;
      resolved.corpus = corpus.split.config;
      const DecodeGraph graph =
          make_decode_graph(corpus.truth, cfg.decode.lm_weight, cfg.decode.word_insertion_penalty);
      const BaselineResult base =
          train_baseline(corpus.split.labeled, graph, resolved.resolved_arch(), cfg.baseline, cfg.seed);
      const double eval = evaluate_model(base.model, corpus.split.eval_set, graph).wer();
      fs::create_directories(tb.out);
      save_model(base.model, fs::path(tb.out) / "baseline.bin");
      const json summary{{"seed", cfg.seed}, {"eval_wer", eval}, {"cv_history", base.cv_history}};
      open_out(fs::path(tb.out) / "baseline.json") << summary.dump(2) << '\n';
      std::cout << json{{"eval_wer", eval}}.dump() << '\n';
    } else if (*decode) {
      const ExperimentConfig cfg = load_config(dc);
      const CorpusArchive corpus = load_corpus(fs::path(dc_corpus) / kCorpusFileName);
      const AcousticModel m = load_model(dc_model);
      const DecodeGraph graph =
          make_decode_graph(corpus.truth, cfg.decode.lm_weight, cfg.decode.word_insertion_penalty);
      const auto& utts = partition_of(corpus.split, dc_partition);
      auto out = open_out(dc.out);
      std::vector<std::pair<std::string, WordSequence>> best;
      for (const Utterance& u : utts) {
        for (const Hypothesis& h : nbest_decode(m, graph, u.frames, dc_n))
          out << u.id << ' ' << h.rank << ' ' << format_number(h.score) << ' ' << join_words(h.words) << ' '
              << run_length(h.alignment) << '\n';
        best.emplace_back(u.id, viterbi_decode(m, graph, u.frames).words);
      }
      if (!dc_transcripts.empty()) {
        auto t = open_out(dc_transcripts);
        write_transcripts(t, best);
      }
    } else if (*wer) {
      const auto hyp = read_transcripts(wer_hyp);
      const auto ref = read_transcripts(wer_ref);
      std::ostringstream csv;
      csv << "utterance_id,substitutions,insertions,deletions,reference_length,wer\n";
      WerBreakdown total;
      for (const auto& [id, words] : ref) {
        auto it = hyp.find(id);
        if (it == hyp.end()) throw ValidationError("no hypothesis for utterance " + id);
        const WerBreakdown w = word_error_rate(it->second, words);
        total += w;
        csv << id << ',' << w.substitutions << ',' << w.insertions << ',' << w.deletions << ','
            << w.reference_length << ',' << format_number(w.wer()) << '\n';
      }
      for (const auto& [id, words] : hyp)
        if (!ref.count(id)) throw ValidationError("hypothesis for unknown utterance " + id);
      csv << "all," << total.substitutions << ',' << total.insertions << ',' << total.deletions << ','
          << total.reference_length << ',' << format_number(total.wer()) << '\n';
      if (wc.out.empty()) {
        std::cout << csv.str();
      } else {
        open_out(wc.out) << csv.str();
      }
    } else if (*campaign_run) {
      const ExperimentConfig cfg = load_config(cc);
      const bool human = cfg.selector.kind == "human";
      run_campaign_command(cfg, arms_for(cfg, cc_arm), cc_corpus, cc.out, human ? &cc_serve : nullptr);
    } else if (*sweep) {
      const ExperimentConfig cfg = load_config(sw);
      SweepSpec spec = cfg.sweep;
      if (sw.seed_given) spec.seed = sw.seed;
      std::vector<CandidateWerPair> pairs;
      if (!sw_pairs.empty()) {
        std::ifstream in(sw_pairs);
        if (!in) throw IoError("cannot open " + sw_pairs);
        std::string line;
        std::getline(in, line);
        if (line != kPairsHeader) throw SchemaError(sw_pairs + ": unexpected header");
        while (std::getline(in, line)) {
          std::vector<std::string> f;
          std::stringstream ls(line);
          for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
          if (f.size() < 8) throw SchemaError(sw_pairs + ": short row");
          pairs.push_back({std::stod(f[6]), std::stod(f[7])});
        }
      } else {
        const CorpusArchive corpus = corpus_for(cfg, sw_corpus);
        if (corpus.split.large_batches.empty()) throw ConfigError("corpus.batch_count", "sweep needs a batch");
        ExperimentConfig resolved = cfg;
        resolved.corpus = corpus.split.config;
        const DecodeGraph graph =
            make_decode_graph(corpus.truth, cfg.decode.lm_weight, cfg.decode.word_insertion_penalty);
        const BaselineResult base =
            train_baseline(corpus.split.labeled, graph, resolved.resolved_arch(), cfg.baseline, cfg.seed);
        for (const Utterance& u : corpus.split.large_batches.front()) {
          const auto nb = nbest_decode(base.model, graph, u.frames, spec.rival_rank);
          pairs.push_back({word_error_rate(nb.front().words, u.reference).wer(),
                           word_error_rate(nb.back().words, u.reference).wer()});
        }
      }
      const SweepTable table = selection_error_sweep(pairs, spec);
      write_sweep_csv(table, sw.out);
      std::cout << json{{"pairs", pairs.size()}, {"crossing_p", table.crossing_p ? json(*table.crossing_p) : json()}}.dump()
                << '\n';
    } else if (*rival) {
      const ExperimentConfig cfg = load_config(rc);
      const RivalComparison cmp = rival_rank_comparison(cfg, rc_ranks, rc_p, rc_seeds);
      fs::create_directories(rc.out);
      write_rival_summary(cmp, fs::path(rc.out) / "rival_summary.csv");
      json j{{"p", rc_p}, {"seeds", rc_seeds}, {"rl_arms_not_worse", cmp.rl_arms_not_worse}, {"arms", json::array()}};
      for (std::size_t i = 0; i < cmp.arm_names.size(); ++i)
        j["arms"].push_back({{"name", cmp.arm_names[i]}, {"median_final_eval_wer", cmp.median_final_eval_wer[i]}});
      open_out(fs::path(rc.out) / "rival_compare.json") << j.dump(2) << '\n';
      std::cout << j.dump() << '\n';
    } else if (*serve) {
      const ExperimentConfig cfg = load_config(sv);
      std::vector<ArmSpec> arms = cfg.arms.empty() ? std::vector<ArmSpec>{reinforcement_arm("rl", cfg.rl, 0.0)} : cfg.arms;
      run_campaign_command(cfg, arms, sv_corpus, sv.out, &sv_serve);
    }
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), 2);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 3);
  }
  return 0;
}
