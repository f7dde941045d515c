// d2d: the command-line front end for the full pipeline — synthetic data,
// IE example construction, extractor training, template and neural
// generation, and extractive evaluation. Every command that writes
// artifacts drops a manifest-<command>.json beside them.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "d2d/dataset.hpp"
#include "d2d/extractor.hpp"
#include "d2d/generator.hpp"
#include "d2d/gradsuite.hpp"
#include "d2d/manifest.hpp"
#include "d2d/metrics.hpp"
#include "d2d/synth.hpp"
#include "d2d/templater.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace d2d;

namespace {

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

int default_threads() {
  if (const char* e = std::getenv("D2D_THREADS")) {
    char* end = nullptr;
    long t = std::strtol(e, &end, 10);
    if (end && *end == '\0' && t >= 1 && t <= 256) return int(t);
    std::cerr << "d2d: ignoring invalid D2D_THREADS='" << e << "'\n";
  }
  return 1;
}

void require_absent(const fs::path& p, bool force) {
  if (!force && fs::exists(p))
    throw Error(cat(p.string(), " already exists; pass --force to overwrite"));
}

std::span<const ExamplePair> pick_split(const DatasetSplit& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "valid") return ds.valid;
  if (name == "test") return ds.test;
  throw Error(cat("unknown split '", name, "'"));
}

void save_vocab(const fs::path& file, const Vocab& vocab) {
  ordered_json j;
  j["tokens"] = vocab.tokens();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(cat("cannot write ", file.string()));
  out << j.dump(2) << "\n";
}

Vocab load_vocab(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(cat("cannot open ", file.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(cat(file.string(), ": ", e.what()));
  }
  if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array())
    throw SchemaError(cat(file.string(), ": expected {\"tokens\": [...]}"));
  auto tokens = j["tokens"].get<std::vector<std::string>>();
  Vocab v;
  if (int(tokens.size()) < v.size())
    throw SchemaError(cat(file.string(), ": vocabulary lacks the reserved tokens"));
  for (int i = 0; i < v.size(); ++i)
    if (tokens[size_t(i)] != v.token(i))
      throw SchemaError(cat(file.string(), ": token ", i, " must be ", v.token(i)));
  for (size_t i = size_t(v.size()); i < tokens.size(); ++i)
    if (v.add(tokens[i]) != int(i))
      throw SchemaError(cat(file.string(), ": duplicate token '", tokens[i], "'"));
  return v;
}

Ensemble load_ensemble_cli(const fs::path& p) {
  if (!fs::exists(p))
    throw Error(cat("no ensemble at ", p.string(), "; train one with `d2d train-ie`"));
  return Ensemble::load(p);
}

void write_docs_jsonl(const fs::path& file,
                      std::span<const std::pair<std::string, std::vector<std::string>>> docs) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(cat("cannot write ", file.string()));
  for (const auto& [id, tokens] : docs) {
    ordered_json j;
    j["id"] = id;
    j["tokens"] = tokens;
    out << j.dump() << "\n";
  }
}

std::map<std::string, Document> load_docs_jsonl(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(cat("cannot open ", file.string()));
  std::map<std::string, Document> out;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(cat(file.string(), ":", ln, ": ", e.what()));
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("tokens"))
      throw SchemaError(cat(file.string(), ":", ln, ": expected {\"id\", \"tokens\"}"));
    std::string id = j["id"].get<std::string>();
    Document d;
    d.tokens = j["tokens"].get<std::vector<std::string>>();
    d.sentences = split_sentences(d.tokens);
    if (!out.emplace(id, std::move(d)).second)
      throw SchemaError(cat(file.string(), ":", ln, ": duplicate document for game ", id));
  }
  return out;
}

// Orders generated documents to match the split; both directions strict.
std::vector<Document> align_docs(std::map<std::string, Document> by_id,
                                 std::span<const ExamplePair> pairs, const std::string& src) {
  std::vector<Document> docs;
  docs.reserve(pairs.size());
  for (const auto& pair : pairs) {
    auto it = by_id.find(pair.db.id);
    if (it == by_id.end()) throw Error(cat(src, " has no document for game ", pair.db.id));
    docs.push_back(std::move(it->second));
    by_id.erase(it);
  }
  if (!by_id.empty())
    throw Error(cat(src, " has a document for game ", by_id.begin()->first,
                    " which is not in the evaluated split"));
  return docs;
}

ordered_json report_to_json(const MetricsReport& r, const std::string& label) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  ordered_json j;
  j["label"] = label;
  j["n_docs"] = r.n_docs;
  j["rg"] = {{"precision", opt(r.rg_precision)},
             {"count", r.rg_count},
             {"undefined", r.undefined_rg}};
  j["cs"] = {{"precision", opt(r.cs_precision)},
             {"recall", opt(r.cs_recall)},
             {"undefined_precision", r.undefined_cs_p},
             {"undefined_recall", r.undefined_cs_r}};
  j["co"] = r.co_score;
  j["bleu"] = r.bleu_score;
  j["perplexity"] = opt(r.perplexity);
  auto& per = j["per_doc"] = ordered_json::array();
  for (const auto& d : r.per_doc) {
    ordered_json e;
    e["id"] = d.game_id;
    e["rg_precision"] = opt(d.rg.precision);
    e["rg_supported"] = d.rg.supported;
    e["rg_extracted"] = d.rg.unique_extracted;
    e["cs_precision"] = opt(d.cs.precision);
    e["cs_recall"] = opt(d.cs.recall);
    e["co"] = d.co;
    per.push_back(std::move(e));
  }
  return j;
}

std::string report_header() {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %7s %7s %7s %7s %7s %7s %7s", "system", "RG P%",
                "RG #", "CS P%", "CS R%", "CO", "PPL", "BLEU");
  return std::string(buf);
}

// ---------------------------------------------------------------- synth

struct SynthOpts {
  int games = 0;
  int roster = 13;
  uint64_t seed = 1;
  std::string out;
  bool noise = false;
  double paraphrase = -1.0, distractor = -1.0;
  bool force = false;
};

void run_synth(const SynthOpts& o) {
  Stopwatch sw;
  NoiseConfig nc = o.noise ? NoiseConfig::defaults() : NoiseConfig::none();
  if (o.paraphrase >= 0) nc.paraphrase_prob = o.paraphrase;
  if (o.distractor >= 0) nc.distractor_prob = o.distractor;
  fs::path dir = o.out;
  for (const char* name : {"train.json", "valid.json", "test.json"})
    require_absent(dir / name, o.force);
  DatasetSplit split = synth_games(o.games, o.seed, nc, o.roster);
  save_dataset(dir, split);
  RunManifest mf{"synth",
                 json{{"games", o.games},
                      {"roster", o.roster},
                      {"noise",
                       {{"paraphrase_prob", nc.paraphrase_prob},
                        {"distractor_prob", nc.distractor_prob}}}},
                 o.seed,
                 {},
                 {"train.json", "valid.json", "test.json"},
                 sw.seconds()};
  mf.write(dir);
  std::cout << "wrote " << split.train.size() << "/" << split.valid.size() << "/"
            << split.test.size() << " games (train/valid/test) to " << dir.string() << "\n";
}

void setup_synth(CLI::App& app) {
  auto o = std::make_shared<SynthOpts>();
  auto* c = app.add_subcommand("synth", "generate a synthetic box-score dataset");
  c->add_option("--games", o->games, "total number of games")
      ->required()
      ->check(CLI::Range(1, 1000000));
  c->add_option("--roster", o->roster, "players per team")->check(CLI::Range(5, 20));
  c->add_option("--seed", o->seed, "generator seed");
  c->add_option("--out", o->out, "output directory")->required();
  c->add_flag("--noise", o->noise, "enable paraphrase/distractor noise at default rates");
  c->add_option("--paraphrase-prob", o->paraphrase, "paraphrase probability per site")
      ->check(CLI::Range(0.0, 1.0));
  c->add_option("--distractor-prob", o->distractor, "distractor probability per gap")
      ->check(CLI::Range(0.0, 1.0));
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_synth(*o); });
}

// -------------------------------------------------------------- make-ie

struct MakeIeOpts {
  std::string data, out;
  std::string split = "train";
  int min_count = 1;
  int max_dist = 40;
  bool force = false;
};

void run_make_ie(const MakeIeOpts& o) {
  Stopwatch sw;
  DatasetSplit ds = load_dataset(o.data);
  Vocab vocab = build_vocab(ds.train, o.min_count);
  fs::path dir = o.out;
  std::vector<std::string> names =
      o.split == "all" ? std::vector<std::string>{"train", "valid", "test"}
                       : std::vector<std::string>{o.split};
  fs::path vocab_file = dir / "ie-vocab.json";
  require_absent(vocab_file, o.force);
  for (const auto& name : names) require_absent(dir / ("ie-" + name + ".jsonl"), o.force);
  std::filesystem::create_directories(dir);
  save_vocab(vocab_file, vocab);
  std::vector<std::string> outputs = {"ie-vocab.json"};
  for (const auto& name : names) {
    std::vector<IEExample> examples;
    for (const auto& pair : pick_split(ds, name)) {
      auto exs = build_ie_examples(pair, vocab, o.max_dist);
      examples.insert(examples.end(), std::make_move_iterator(exs.begin()),
                      std::make_move_iterator(exs.end()));
    }
    fs::path file = dir / ("ie-" + name + ".jsonl");
    save_ie_examples(file, examples);
    outputs.push_back(file.filename().string());
    std::cout << "wrote " << examples.size() << " candidate pairs to " << file.string()
              << "\n";
  }
  RunManifest mf{"make-ie",
                 json{{"split", o.split}, {"min_count", o.min_count}, {"max_dist", o.max_dist}},
                 0,
                 {o.data},
                 outputs,
                 sw.seconds()};
  mf.write(dir);
}

void setup_make_ie(CLI::App& app) {
  auto o = std::make_shared<MakeIeOpts>();
  auto* c = app.add_subcommand("make-ie",
                               "build relation-classification examples from a dataset");
  c->add_option("--data", o->data, "dataset directory")->required();
  c->add_option("--out", o->out, "output directory")->required();
  c->add_option("--split", o->split, "train|valid|test|all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  c->add_option("--min-count", o->min_count, "vocabulary count cutoff")
      ->check(CLI::Range(1, 1000));
  c->add_option("--max-dist", o->max_dist, "distance feature clipping")
      ->check(CLI::Range(1, 1000));
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_make_ie(*o); });
}

// -------------------------------------------------------------- train-ie

struct TrainIeOpts {
  std::string examples, vocab, out, config;
  bool quarter = false;
  int epochs = 0;
  uint64_t seed = 0;
  double lr = 0;
  double stop_accuracy = 0;
  int eval_every = 0;
  int threads = default_threads();
  bool force = false;
  CLI::Option *o_epochs = nullptr, *o_seed = nullptr, *o_lr = nullptr, *o_stop = nullptr,
              *o_eval = nullptr;
};

void run_train_ie(const TrainIeOpts& o) {
  Stopwatch sw;
  auto examples = load_ie_examples(o.examples);
  Vocab vocab = load_vocab(o.vocab);
  ExtractorConfig cfg;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw Error(cat("cannot open ", o.config));
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(cat(o.config, ": ", e.what()));
    }
    cfg = ExtractorConfig::from_json(j);
  }
  if (o.quarter) cfg = cfg.quarter();
  if (o.o_epochs->count()) cfg.epochs = o.epochs;
  if (o.o_seed->count()) cfg.seed = o.seed;
  if (o.o_lr->count()) cfg.lr = o.lr;
  if (o.o_stop->count()) cfg.stop_accuracy = o.stop_accuracy;
  if (o.o_eval->count()) cfg.eval_every = o.eval_every;
  fs::path out = o.out;
  require_absent(out, o.force);
  TrainIEResult res = train_extractor(examples, cfg, vocab, &std::cerr, o.threads);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  res.ensemble.save(out);
  char acc[32];
  std::snprintf(acc, sizeof acc, "%.2f", 100.0 * res.heldout_accuracy);
  std::cout << "ensemble held-out accuracy " << acc << "% over " << res.heldout_examples
            << " examples; saved to " << out.string() << "\n";
  RunManifest mf{"train-ie", cfg.to_json(),           cfg.seed, {o.examples, o.vocab},
                 {out.filename().string()}, sw.seconds()};
  mf.write(out.parent_path());
}

void setup_train_ie(CLI::App& app) {
  auto o = std::make_shared<TrainIeOpts>();
  auto* c = app.add_subcommand("train-ie", "train the relation-extraction ensemble");
  c->add_option("--examples", o->examples, "IE examples (jsonl)")->required();
  c->add_option("--vocab", o->vocab, "vocabulary json")->required();
  c->add_option("--out", o->out, "output ensemble file")->required();
  c->add_option("--config", o->config, "json config for the extractor");
  c->add_flag("--quarter", o->quarter, "quarter-scale architecture");
  o->o_epochs = c->add_option("--epochs", o->epochs, "epoch cap")->check(CLI::Range(1, 10000));
  o->o_seed = c->add_option("--seed", o->seed, "training seed");
  o->o_lr = c->add_option("--lr", o->lr, "learning rate")->check(CLI::PositiveNumber);
  o->o_stop = c->add_option("--stop-accuracy", o->stop_accuracy,
                            "early-stop accuracy target")
                  ->check(CLI::Range(0.0, 1.0));
  o->o_eval = c->add_option("--eval-every", o->eval_every,
                            "mid-epoch accuracy check interval, in updates (0 = off)")
                  ->check(CLI::Range(0, 10000000));
  c->add_option("--threads", o->threads, "ensemble members trained concurrently");
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_train_ie(*o); });
}

// --------------------------------------------------------------- extract

struct ExtractOpts {
  std::string data, ensemble, gen, out;
  std::string split = "test";
  bool force = false;
};

void run_extract(const ExtractOpts& o) {
  Stopwatch sw;
  DatasetSplit ds = load_dataset(o.data);
  auto pairs = pick_split(ds, o.split);
  Ensemble ens = load_ensemble_cli(o.ensemble);
  std::vector<Document> docs;
  std::vector<std::string> inputs = {o.data, o.ensemble};
  if (!o.gen.empty()) {
    docs = align_docs(load_docs_jsonl(o.gen), pairs, o.gen);
    inputs.push_back(o.gen);
  } else {
    for (const auto& pair : pairs) docs.push_back(pair.summary);
  }
  fs::path out = o.out;
  require_absent(out, o.force);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(cat("cannot write ", out.string()));
  long long total = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto recs = extract_sequence(docs[i], pairs[i].db, ens);
    for (const auto& r : recs) {
      ordered_json j;
      j["game"] = pairs[i].db.id;
      j["e"] = r.entity;
      j["m"] = r.value;
      j["t"] = record_type_name(r.type);
      j["pos"] = {r.sentence, r.ent_start, r.num_start};
      f << j.dump() << "\n";
      ++total;
    }
  }
  std::cout << "extracted " << total << " relation mentions from " << pairs.size()
            << " documents to " << out.string() << "\n";
  RunManifest mf{"extract",
                 json{{"split", o.split}, {"source", o.gen.empty() ? "gold" : "generated"}},
                 0,
                 inputs,
                 {out.filename().string()},
                 sw.seconds()};
  mf.write(out.parent_path());
}

void setup_extract(CLI::App& app) {
  auto o = std::make_shared<ExtractOpts>();
  auto* c = app.add_subcommand("extract", "run the ensemble extractor over documents");
  c->add_option("--data", o->data, "dataset directory")->required();
  c->add_option("--split", o->split, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  c->add_option("--ensemble", o->ensemble, "trained ensemble file")->required();
  c->add_option("--gen", o->gen,
                "generated documents (jsonl {id, tokens}); default: gold summaries");
  c->add_option("--out", o->out, "output relations jsonl")->required();
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_extract(*o); });
}

// -------------------------------------------------------------- template

struct TemplateOpts {
  std::string data, out, align;
  std::string split = "test";
  int players = 6;
  bool force = false;
};

void run_template(const TemplateOpts& o) {
  Stopwatch sw;
  DatasetSplit ds = load_dataset(o.data);
  auto pairs = pick_split(ds, o.split);
  fs::path out = o.out;
  require_absent(out, o.force);
  if (!o.align.empty()) require_absent(o.align, o.force);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::vector<std::pair<std::string, std::vector<std::string>>> docs;
  std::ofstream af;
  if (!o.align.empty()) {
    af.open(o.align, std::ios::binary | std::ios::trunc);
    if (!af) throw Error(cat("cannot write ", o.align));
  }
  for (const auto& pair : pairs) {
    TemplateOutput t = render_summary(pair.db, o.players);
    docs.emplace_back(pair.db.id, t.doc.tokens);
    if (af.is_open()) {
      ordered_json j;
      j["game"] = pair.db.id;
      auto& arr = j["realized"] = ordered_json::array();
      for (const auto& k : t.realized) {
        ordered_json r;
        r["e"] = k.entity;
        r["m"] = k.value;
        r["t"] = record_type_name(k.type);
        arr.push_back(std::move(r));
      }
      af << j.dump() << "\n";
    }
  }
  write_docs_jsonl(out, docs);
  std::cout << "wrote " << docs.size() << " template summaries to " << out.string() << "\n";
  std::vector<std::string> outputs = {out.filename().string()};
  if (!o.align.empty()) outputs.push_back(fs::path(o.align).filename().string());
  RunManifest mf{"template",
                 json{{"split", o.split}, {"players", o.players}},
                 0,
                 {o.data},
                 outputs,
                 sw.seconds()};
  mf.write(out.parent_path());
}

void setup_template(CLI::App& app) {
  auto o = std::make_shared<TemplateOpts>();
  auto* c = app.add_subcommand("template", "render deterministic template summaries");
  c->add_option("--data", o->data, "dataset directory")->required();
  c->add_option("--split", o->split, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  c->add_option("--out", o->out, "output documents jsonl")->required();
  c->add_option("--align", o->align, "also write realized relations (jsonl)");
  c->add_option("--players", o->players, "player sentences per summary")
      ->check(CLI::Range(1, 26));
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_template(*o); });
}

// ------------------------------------------------------------- train-gen

struct TrainGenOpts {
  std::string data, out, config;
  int dim = 0, layers = 0, epochs = 0, batch = 0, bptt = 0;
  double lr = 0, dropout = 0, tvd_weight = 0, stop_ppl = 0;
  std::string copy_mode, tvd_sign;
  bool recon = false;
  uint64_t seed = 0;
  bool force = false;
  CLI::Option *o_dim = nullptr, *o_layers = nullptr, *o_copy = nullptr, *o_epochs = nullptr,
              *o_batch = nullptr, *o_bptt = nullptr, *o_lr = nullptr, *o_dropout = nullptr,
              *o_tvdw = nullptr, *o_tvds = nullptr, *o_seed = nullptr, *o_stop = nullptr;
};

void run_train_gen(const TrainGenOpts& o) {
  Stopwatch sw;
  DatasetSplit ds = load_dataset(o.data);
  if (ds.train.empty()) throw Error("dataset has no training games");
  GenConfig cfg;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw Error(cat("cannot open ", o.config));
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(cat(o.config, ": ", e.what()));
    }
    cfg = GenConfig::from_json(j);
  }
  if (o.o_dim->count()) cfg.dim = o.dim;
  if (o.o_layers->count()) cfg.layers = o.layers;
  if (o.o_copy->count()) cfg.copy_mode = o.copy_mode;
  if (o.o_epochs->count()) cfg.epochs = o.epochs;
  if (o.o_stop->count()) cfg.stop_ppl = o.stop_ppl;
  if (o.o_batch->count()) cfg.batch = o.batch;
  if (o.o_bptt->count()) cfg.bptt_block = o.bptt;
  if (o.o_lr->count()) cfg.lr = o.lr;
  if (o.o_dropout->count()) cfg.dropout = o.dropout;
  if (o.recon) cfg.recon.enabled = true;
  if (o.o_tvdw->count()) cfg.recon.tvd_weight = o.tvd_weight;
  if (o.o_tvds->count()) cfg.recon.tvd_sign = o.tvd_sign;
  if (o.o_seed->count()) cfg.seed = o.seed;
  cfg = GenConfig::from_json(cfg.to_json());  // re-validate the merged config
  fs::path out = o.out;
  require_absent(out, o.force);
  TrainGenResult res = train_generator(ds.train, ds.valid, cfg, &std::cerr);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  res.model.save(out);
  std::cout << "saved generator to " << out.string();
  if (!res.val_ppl.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", res.val_ppl.back());
    std::cout << " (validation perplexity " << buf << ")";
  }
  std::cout << "\n";
  RunManifest mf{"train-gen", cfg.to_json(),           cfg.seed, {o.data},
                 {out.filename().string()}, sw.seconds()};
  mf.write(out.parent_path());
}

void setup_train_gen(CLI::App& app) {
  auto o = std::make_shared<TrainGenOpts>();
  auto* c = app.add_subcommand("train-gen", "train the neural generation model");
  c->add_option("--data", o->data, "dataset directory")->required();
  c->add_option("--out", o->out, "output model file")->required();
  c->add_option("--config", o->config, "json config for the generator");
  o->o_dim = c->add_option("--dim", o->dim, "model width")->check(CLI::Range(2, 4096));
  o->o_layers = c->add_option("--layers", o->layers, "decoder layers")->check(CLI::Range(1, 8));
  o->o_copy = c->add_option("--copy", o->copy_mode, "none|joint|conditional")
                  ->check(CLI::IsMember({"none", "joint", "conditional"}));
  o->o_epochs = c->add_option("--epochs", o->epochs, "epoch cap")->check(CLI::Range(1, 100000));
  o->o_stop = c->add_option("--stop-ppl", o->stop_ppl, "stop once validation perplexity is below")
                  ->check(CLI::NonNegativeNumber);
  o->o_batch = c->add_option("--batch", o->batch, "games per update")->check(CLI::Range(1, 4096));
  o->o_bptt = c->add_option("--bptt", o->bptt, "truncation length")->check(CLI::Range(1, 10000));
  o->o_lr = c->add_option("--lr", o->lr, "learning rate")->check(CLI::PositiveNumber);
  o->o_dropout = c->add_option("--dropout", o->dropout, "dropout rate")
                     ->check(CLI::Range(0.0, 0.999));
  c->add_flag("--recon", o->recon, "enable the reconstruction objective");
  o->o_tvdw = c->add_option("--tvd-weight", o->tvd_weight, "TVD coupling weight");
  o->o_tvds = c->add_option("--tvd-sign", o->tvd_sign, "penalize|encourage")
                  ->check(CLI::IsMember({"penalize", "encourage"}));
  o->o_seed = c->add_option("--seed", o->seed, "training seed");
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_train_gen(*o); });
}

// -------------------------------------------------------------- generate

struct GenerateOpts {
  std::string data, model, out;
  std::string split = "test";
  int beam = 0, max_len = 0;
  bool force = false;
  CLI::Option *o_beam = nullptr, *o_max_len = nullptr;
};

void run_generate(const GenerateOpts& o) {
  Stopwatch sw;
  DatasetSplit ds = load_dataset(o.data);
  auto pairs = pick_split(ds, o.split);
  if (!fs::exists(o.model))
    throw Error(cat("no model at ", o.model, "; train one with `d2d train-gen`"));
  GenModel m = GenModel::load(o.model);
  int beam = o.o_beam->count() ? o.beam : m.cfg.beam;
  int max_len = o.o_max_len->count() ? o.max_len : m.cfg.max_len;
  fs::path out = o.out;
  require_absent(out, o.force);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::vector<std::pair<std::string, std::vector<std::string>>> docs;
  for (const auto& pair : pairs) {
    Document d = beam_search(pair.db, m, beam, max_len);
    docs.emplace_back(pair.db.id, std::move(d.tokens));
  }
  write_docs_jsonl(out, docs);
  std::cout << "generated " << docs.size() << " summaries to " << out.string() << "\n";
  RunManifest mf{"generate",
                 json{{"split", o.split}, {"beam", beam}, {"max_len", max_len}},
                 m.cfg.seed,
                 {o.data, o.model},
                 {out.filename().string()},
                 sw.seconds()};
  mf.write(out.parent_path());
}

void setup_generate(CLI::App& app) {
  auto o = std::make_shared<GenerateOpts>();
  auto* c = app.add_subcommand("generate", "decode summaries with a trained model");
  c->add_option("--data", o->data, "dataset directory")->required();
  c->add_option("--split", o->split, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  c->add_option("--model", o->model, "trained generator file")->required();
  c->add_option("--out", o->out, "output documents jsonl")->required();
  o->o_beam = c->add_option("--beam", o->beam, "beam width")->check(CLI::Range(1, 64));
  o->o_max_len = c->add_option("--max-len", o->max_len, "decode length cap")
                     ->check(CLI::Range(1, 10000));
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_generate(*o); });
}

// ------------------------------------------------------------------ eval

struct EvalOpts {
  std::string data, ensemble, gen, model, out;
  std::string split = "test";
  bool force = false;
};

void run_eval(const EvalOpts& o) {
  Stopwatch sw;
  DatasetSplit ds = load_dataset(o.data);
  auto pairs = pick_split(ds, o.split);
  if (pairs.empty()) throw Error(cat("split '", o.split, "' is empty"));
  Ensemble ens = load_ensemble_cli(o.ensemble);
  std::vector<Document> docs;
  std::string label;
  std::vector<std::string> inputs = {o.data, o.ensemble};
  if (!o.gen.empty()) {
    docs = align_docs(load_docs_jsonl(o.gen), pairs, o.gen);
    label = fs::path(o.gen).filename().string();
    inputs.push_back(o.gen);
  } else {
    for (const auto& pair : pairs) docs.push_back(pair.summary);
    label = "gold";
  }
  MetricsReport rep = evaluate_system(docs, pairs, ens);
  if (!o.model.empty()) {
    GenModel m = GenModel::load(o.model);
    rep.perplexity = perplexity(m, pairs);
    inputs.push_back(o.model);
  }
  std::cout << report_header() << "\n" << format_report(rep, label) << "\n";
  if (rep.undefined_rg || rep.undefined_cs_p || rep.undefined_cs_r)
    std::cout << "(documents skipped per column: RG " << rep.undefined_rg << ", CS precision "
              << rep.undefined_cs_p << ", CS recall " << rep.undefined_cs_r << ")\n";
  if (!o.out.empty()) {
    fs::path out = o.out;
    require_absent(out, o.force);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(cat("cannot write ", out.string()));
    f << report_to_json(rep, label).dump(2) << "\n";
    RunManifest mf{"eval",
                   json{{"split", o.split}},
                   0,
                   inputs,
                   {out.filename().string()},
                   sw.seconds()};
    mf.write(out.parent_path());
  }
}

void setup_eval(CLI::App& app) {
  auto o = std::make_shared<EvalOpts>();
  auto* c = app.add_subcommand("eval", "score generated summaries with the extractive metrics");
  c->add_option("--data", o->data, "dataset directory")->required();
  c->add_option("--split", o->split, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  c->add_option("--ensemble", o->ensemble, "trained extraction ensemble")->required();
  c->add_option("--gen", o->gen,
                "generated documents (jsonl {id, tokens}); default: score the gold summaries");
  c->add_option("--model", o->model, "generator whose perplexity to report");
  c->add_option("--out", o->out, "also write a json report here");
  c->add_flag("--force", o->force, "overwrite existing outputs");
  c->callback([o]() { run_eval(*o); });
}

// ------------------------------------------------------------ grad-check

struct GradCheckOpts {
  uint64_t seed = 1;
  double tol = 1e-3;
};

void run_grad_check(const GradCheckOpts& o) {
  auto suite = run_grad_suite(o.seed);
  bool ok = true;
  for (const auto& e : suite) {
    bool pass = e.report.pass(o.tol);
    ok = ok && pass;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s max_rel_err %.3e over %lld coords  %s", e.op.c_str(),
                  e.report.max_rel_err, e.report.coords, pass ? "PASS" : "FAIL");
    std::cout << buf;
    if (!pass)
      std::cout << "  (worst " << e.report.worst_param << "[" << e.report.worst_index << "])";
    std::cout << "\n";
  }
  if (!ok) throw Error("gradient check failed");
}

void setup_grad_check(CLI::App& app) {
  auto o = std::make_shared<GradCheckOpts>();
  auto* c = app.add_subcommand("grad-check",
                               "finite-difference checks over every differentiable block");
  c->add_option("--seed", o->seed, "fixture seed");
  c->add_option("--tol", o->tol, "relative-error tolerance")->check(CLI::PositiveNumber);
  c->callback([o]() { run_grad_check(*o); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-to-document generation and extractive evaluation toolkit"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);
  setup_synth(app);
  setup_make_ie(app);
  setup_train_ie(app);
  setup_extract(app);
  setup_template(app);
  setup_train_gen(app);
  setup_generate(app);
  setup_eval(app);
  setup_grad_check(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "d2d: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
