#include "d2d/extractor.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "d2d/nn/graph.hpp"

namespace d2d {

using nn::Tape;
using nn::Var;

ExtractorConfig ExtractorConfig::quarter() const {
  ExtractorConfig c = *this;
  c.word_emb /= 4;
  c.dist_emb /= 4;
  for (auto& k : c.kernels) k.second /= 4;
  c.conv_mlp /= 4;
  c.lstm_hidden /= 4;
  c.lstm_mlp /= 4;
  return c;
}

nlohmann::json ExtractorConfig::to_json() const {
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& [w, f] : kernels) ks.push_back({w, f});
  return {{"word_emb", word_emb},
          {"dist_emb", dist_emb},
          {"kernels", ks},
          {"conv_mlp", conv_mlp},
          {"lstm_hidden", lstm_hidden},
          {"lstm_mlp", lstm_mlp},
          {"n_conv", n_conv},
          {"n_lstm", n_lstm},
          {"max_dist", max_dist},
          {"epochs", epochs},
          {"lr", lr},
          {"clip", clip},
          {"heldout_frac", heldout_frac},
          {"stop_accuracy", stop_accuracy},
          {"plateau_patience", plateau_patience},
          {"eval_every", eval_every},
          {"seed", seed}};
}

ExtractorConfig ExtractorConfig::from_json(const nlohmann::json& j) {
  ExtractorConfig c;  // absent keys keep their defaults
  if (!j.is_object()) throw SchemaError("extractor config must be an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "word_emb") c.word_emb = val.get<int>();
    else if (key == "dist_emb") c.dist_emb = val.get<int>();
    else if (key == "kernels") {
      c.kernels.clear();
      for (const auto& k : val) {
        if (!k.is_array() || k.size() != 2)
          throw SchemaError("extractor config: kernels entries are [width, filters]");
        c.kernels.emplace_back(k[0].get<int>(), k[1].get<int>());
      }
    } else if (key == "conv_mlp") c.conv_mlp = val.get<int>();
    else if (key == "lstm_hidden") c.lstm_hidden = val.get<int>();
    else if (key == "lstm_mlp") c.lstm_mlp = val.get<int>();
    else if (key == "n_conv") c.n_conv = val.get<int>();
    else if (key == "n_lstm") c.n_lstm = val.get<int>();
    else if (key == "max_dist") c.max_dist = val.get<int>();
    else if (key == "epochs") c.epochs = val.get<int>();
    else if (key == "lr") c.lr = val.get<double>();
    else if (key == "clip") c.clip = val.get<double>();
    else if (key == "heldout_frac") c.heldout_frac = val.get<double>();
    else if (key == "stop_accuracy") c.stop_accuracy = val.get<double>();
    else if (key == "plateau_patience") c.plateau_patience = val.get<int>();
    else if (key == "eval_every") c.eval_every = val.get<int>();
    else if (key == "seed") c.seed = val.get<uint64_t>();
    else throw SchemaError(cat("unknown extractor config key '", key, "'"));
  }
  if (c.word_emb <= 0 || c.dist_emb <= 0 || c.kernels.empty() || c.conv_mlp <= 0 ||
      c.lstm_hidden <= 0 || c.lstm_mlp <= 0 || c.n_conv < 0 || c.n_lstm < 0 ||
      c.n_conv + c.n_lstm == 0 || c.max_dist <= 0 || c.epochs <= 0)
    throw SchemaError("extractor config out of range");
  return c;
}

void build_ie_params(nn::ParamStore& store, const std::string& arch, int vocab_size,
                     const ExtractorConfig& cfg) {
  if (vocab_size <= 0) throw ContractError("build_ie_params with empty vocabulary");
  int n_dist = 2 * cfg.max_dist + 1;
  store.add("emb.word", {vocab_size, cfg.word_emb});
  store.add("emb.dist_ent", {n_dist, cfg.dist_emb});
  store.add("emb.dist_num", {n_dist, cfg.dist_emb});
  int in_d = cfg.word_emb + 2 * cfg.dist_emb;
  if (arch == "conv") {
    int total = 0;
    for (const auto& [w, f] : cfg.kernels) {
      store.add(cat("conv.w", w, ".W"), {w * in_d, f});
      store.add(cat("conv.w", w, ".b"), {f});
      total += f;
    }
    store.add("mlp.W", {total, cfg.conv_mlp});
    store.add("mlp.b", {cfg.conv_mlp});
    store.add("out.W", {cfg.conv_mlp, kNumLabels});
    store.add("out.b", {kNumLabels});
  } else if (arch == "blstm") {
    int k = cfg.lstm_hidden;
    store.add("fwd.W", {in_d + k, 4 * k});
    store.add("fwd.b", {4 * k});
    store.add("bwd.W", {in_d + k, 4 * k});
    store.add("bwd.b", {4 * k});
    store.add("mlp.W", {2 * k, cfg.lstm_mlp});
    store.add("mlp.b", {cfg.lstm_mlp});
    store.add("out.W", {cfg.lstm_mlp, kNumLabels});
    store.add("out.b", {kNumLabels});
  } else {
    throw ContractError(cat("unknown extractor arch '", arch, "'"));
  }
}

Var ie_forward(Tape& t, const IEExample& ex, const std::string& arch,
               const ExtractorConfig& cfg) {
  int T = int(ex.tokens.size());
  if (T == 0 || int(ex.ent_dist.size()) != T || int(ex.num_dist.size()) != T)
    throw ContractError(cat("malformed IE example in game ", ex.game_id));
  Var Ew = t.param("emb.word");
  Var Ee = t.param("emb.dist_ent");
  Var En = t.param("emb.dist_num");
  int vocab_rows = t.val(Ew).rows();
  std::vector<int> wid(static_cast<size_t>(T)), eid(static_cast<size_t>(T)), nid(static_cast<size_t>(T));
  for (int i = 0; i < T; ++i) {
    int w = ex.tokens[size_t(i)];
    wid[size_t(i)] = (w < 0 || w >= vocab_rows) ? Vocab::kUnk : w;
    eid[size_t(i)] = std::clamp(ex.ent_dist[size_t(i)], -cfg.max_dist, cfg.max_dist) + cfg.max_dist;
    nid[size_t(i)] = std::clamp(ex.num_dist[size_t(i)], -cfg.max_dist, cfg.max_dist) + cfg.max_dist;
  }
  Var xparts[3] = {t.rows(Ew, wid), t.rows(Ee, eid), t.rows(En, nid)};
  Var X = t.concat_cols(xparts);

  Var pooled;
  if (arch == "conv") {
    std::vector<nn::ConvKernel> ks;
    for (const auto& [w, f] : cfg.kernels) {
      (void)f;
      ks.push_back({w, t.param(cat("conv.w", w, ".W")), t.param(cat("conv.w", w, ".b"))});
    }
    pooled = t.conv1d_maxpool(X, ks);
  } else if (arch == "blstm") {
    pooled = nn::bilstm_maxpool(t, X, t.param("fwd.W"), t.param("fwd.b"), t.param("bwd.W"),
                                t.param("bwd.b"));
  } else {
    throw ContractError(cat("unknown extractor arch '", arch, "'"));
  }
  Var hid = t.relu(t.linear(pooled, t.param("mlp.W"), t.param("mlp.b")));
  return t.log_softmax(t.linear(hid, t.param("out.W"), t.param("out.b")));
}

Var marginal_loss(Tape& t, Var logprobs, std::span<const int> labels) {
  for (int l : labels)
    if (l < 0 || l >= kNumLabels) throw ContractError(cat("label id ", l, " out of range"));
  return t.marginal_nll(logprobs, labels);
}

namespace {

// Forward-only tape over a trained member; backward() is never called, so
// the store is never written.
int member_predict(const IEModel& m, const ExtractorConfig& cfg, const IEExample& ex) {
  Tape t(const_cast<nn::ParamStore*>(&m.params));
  const nn::Array& lp = t.val(ie_forward(t, ex, m.arch, cfg));
  int best = 0;
  for (int i = 1; i < lp.len(); ++i)
    if (lp.data[size_t(i)] > lp.data[size_t(best)]) best = i;
  return best;
}

bool label_hit(int pred, std::span<const int> labels) {
  return std::find(labels.begin(), labels.end(), pred) != labels.end();
}

double member_accuracy(const IEModel& m, const ExtractorConfig& cfg,
                       std::span<const IEExample> examples) {
  if (examples.empty()) return 0.0;
  long long hits = 0;
  for (const IEExample& ex : examples)
    if (label_hit(member_predict(m, cfg, ex), ex.labels)) ++hits;
  return double(hits) / double(examples.size());
}

}  // namespace

int ensemble_predict(const Ensemble& ens, const IEExample& ex) {
  if (ens.models.empty()) throw ContractError("ensemble_predict with no members");
  std::vector<double> mean(size_t(kNumLabels), 0.0);
  for (const IEModel& m : ens.models) {
    Tape t(const_cast<nn::ParamStore*>(&m.params));
    const nn::Array& lp = t.val(ie_forward(t, ex, m.arch, ens.cfg));
    if (lp.len() != kNumLabels) throw DimError(cat("extractor output ", lp.shape_str()));
    for (int i = 0; i < kNumLabels; ++i) mean[size_t(i)] += std::exp(double(lp.data[size_t(i)]));
  }
  int best = 0;  // strict >: ties break to the lowest label id
  for (int i = 1; i < kNumLabels; ++i)
    if (mean[size_t(i)] > mean[size_t(best)]) best = i;
  return best;
}

double ensemble_accuracy(const Ensemble& ens, std::span<const IEExample> examples) {
  if (examples.empty()) return 0.0;
  long long hits = 0;
  for (const IEExample& ex : examples)
    if (label_hit(ensemble_predict(ens, ex), ex.labels)) ++hits;
  return double(hits) / double(examples.size());
}

std::pair<std::vector<IEExample>, std::vector<IEExample>> split_by_game(
    std::span<const IEExample> examples, double heldout_frac, uint64_t seed) {
  if (heldout_frac < 0.0 || heldout_frac >= 1.0)
    throw ContractError(cat("heldout_frac ", heldout_frac, " out of [0,1)"));
  std::vector<std::string> games;  // first-appearance order, then shuffled
  std::unordered_set<std::string> seen;
  for (const IEExample& ex : examples)
    if (seen.insert(ex.game_id).second) games.push_back(ex.game_id);
  Rng rng(seed);
  rng.shuffle(games);
  int n_held = int(double(games.size()) * heldout_frac + 0.5);
  if (n_held == 0 && heldout_frac > 0.0 && games.size() >= 2) n_held = 1;
  if (n_held >= int(games.size())) n_held = int(games.size()) - 1;
  std::unordered_set<std::string> held_games(games.begin(), games.begin() + n_held);
  std::pair<std::vector<IEExample>, std::vector<IEExample>> out;
  for (const IEExample& ex : examples)
    (held_games.count(ex.game_id) ? out.second : out.first).push_back(ex);
  return out;
}

namespace {

struct MemberStats {
  double final_loss = 0.0;
  double final_acc = -1.0;
  int epochs_run = 0;
  std::string stop_reason = "epochs";
};

MemberStats train_member(IEModel& model, int index, std::span<const IEExample> train,
                         std::span<const IEExample> probe, const ExtractorConfig& cfg,
                         const Vocab& vocab, std::ostream& log) {
  model.arch = index < cfg.n_conv ? "conv" : "blstm";
  build_ie_params(model.params, model.arch, vocab.size(), cfg);
  Rng rng = Rng(cfg.seed).fork(uint64_t(index) + 1);
  model.params.init_uniform(rng, 0.1f);

  MemberStats stats;
  // Plateau detection: a check must beat the best accuracy so far by at
  // least kMinGain to reset the patience counter.
  constexpr double kMinGain = 3e-3;
  double best_acc = -1.0;
  int patience = 0;
  bool stop = false;
  long long updates = 0;

  auto check = [&](int epoch, const char* where) {
    if (probe.empty()) return;
    double acc = member_accuracy(model, cfg, probe);
    stats.final_acc = acc;
    log << "[ie] member " << index << " (" << model.arch << ") epoch " << epoch << " " << where
        << " heldout " << acc << "\n";
    if (acc >= cfg.stop_accuracy) {
      stats.stop_reason = "target";
      stop = true;
    } else if (acc > best_acc + kMinGain) {
      best_acc = acc;
      patience = 0;
    } else if (++patience >= cfg.plateau_patience) {
      stats.stop_reason = "plateau";
      stop = true;
    }
  };

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (int idx : order) {
      const IEExample& ex = train[size_t(idx)];
      Tape t(&model.params, true);
      Var loss = marginal_loss(t, ie_forward(t, ex, model.arch, cfg), ex.labels);
      loss_sum += t.scalar(loss);
      t.backward(loss);
      model.params.sgd_step(cfg.lr, cfg.clip);
      ++updates;
      if (cfg.eval_every > 0 && updates % cfg.eval_every == 0) {
        check(epoch, cat("update ", updates).c_str());
        if (stop) break;
      }
    }
    stats.epochs_run = epoch;
    stats.final_loss = loss_sum / double(std::max<size_t>(train.size(), 1));
    log << "[ie] member " << index << " (" << model.arch << ") epoch " << epoch << "/"
        << cfg.epochs << " loss " << stats.final_loss << "\n";
    if (!stop) check(epoch, "end");
  }
  log << "[ie] member " << index << " (" << model.arch << ") done: " << stats.stop_reason
      << ", heldout " << stats.final_acc << "\n";
  return stats;
}

}  // namespace

TrainIEResult train_extractor(std::span<const IEExample> examples, const ExtractorConfig& cfg,
                              const Vocab& vocab, std::ostream* log, int threads) {
  if (examples.empty()) throw ContractError("train_extractor without examples");
  int n_members = cfg.n_conv + cfg.n_lstm;
  if (n_members <= 0) throw ContractError("extractor config trains no members");

  auto [train, held] = split_by_game(examples, cfg.heldout_frac, cfg.seed);
  if (train.empty()) throw ContractError("heldout split left no training examples");

  // Mid-epoch checks run on a fixed subsample of the held-out slice so the
  // check cost stays bounded; the reported accuracy uses the full slice.
  constexpr int kProbeCap = 1000;
  std::vector<IEExample> probe;
  if (int(held.size()) <= kProbeCap) {
    probe.assign(held.begin(), held.end());
  } else {
    std::vector<int> ids(held.size());
    std::iota(ids.begin(), ids.end(), 0);
    Rng prng = Rng(cfg.seed).fork(0x9e0be);
    prng.shuffle(ids);
    ids.resize(size_t(kProbeCap));
    std::sort(ids.begin(), ids.end());
    for (int i : ids) probe.push_back(held[size_t(i)]);
  }

  TrainIEResult result;
  result.ensemble.cfg = cfg;
  result.ensemble.vocab = vocab;
  result.ensemble.models.resize(size_t(n_members));
  result.heldout_examples = int(held.size());

  if (log)
    *log << "[ie] " << train.size() << " train / " << held.size() << " heldout examples, "
         << n_members << " members (" << cfg.n_conv << " conv + " << cfg.n_lstm << " blstm)\n";

  int workers = std::clamp(threads, 1, n_members);
  if (workers == 1) {
    std::ostringstream devnull;
    for (int i = 0; i < n_members; ++i)
      train_member(result.ensemble.models[size_t(i)], i, train, probe, cfg, vocab,
                   log ? *log : static_cast<std::ostream&>(devnull));
  } else {
    // Members are independent; logs are buffered per member and flushed in
    // member order so output does not depend on scheduling.
    std::vector<std::ostringstream> buffers(static_cast<size_t>(n_members));
    std::atomic<int> next{0};
    auto run = [&] {
      for (int i = next.fetch_add(1); i < n_members; i = next.fetch_add(1))
        train_member(result.ensemble.models[size_t(i)], i, train, probe, cfg, vocab,
                     buffers[size_t(i)]);
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& th : pool) th.join();
    if (log)
      for (auto& b : buffers) *log << b.str();
  }

  result.heldout_accuracy = held.empty() ? 0.0 : ensemble_accuracy(result.ensemble, held);
  if (log)
    *log << "[ie] ensemble heldout accuracy " << result.heldout_accuracy << " over "
         << held.size() << " examples\n";
  return result;
}

// --- persistence ---------------------------------------------------------
// D2E1 container: magic, u32 little-endian header length, JSON header
// {config, vocab, models}, then one D2M1 block per member in order.

namespace {

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& ctx) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError(cat(ctx, ": truncated header"));
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void Ensemble::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(cat("cannot write ", file.string()));
  nlohmann::json models_j = nlohmann::json::array();
  for (const IEModel& m : models) models_j.push_back({{"arch", m.arch}});
  nlohmann::json header{
      {"config", cfg.to_json()}, {"vocab", vocab.tokens()}, {"models", models_j}};
  std::string hs = header.dump();
  out.write("D2E1", 4);
  write_u32(out, uint32_t(hs.size()));
  out.write(hs.data(), std::streamsize(hs.size()));
  for (const IEModel& m : models) m.params.save_stream(out, {{"arch", m.arch}});
  if (!out) throw Error(cat("short write to ", file.string()));
}

Ensemble Ensemble::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(cat("cannot read ", file.string()));
  const std::string ctx = file.string();
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "D2E1")
    throw ParseError(cat(ctx, ": not a D2E1 ensemble file"));
  uint32_t hlen = read_u32(in, ctx);
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), std::streamsize(hlen))) throw ParseError(cat(ctx, ": truncated header"));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(cat(ctx, ": bad header json: ", e.what()));
  }

  Ensemble ens;
  try {
    ens.cfg = ExtractorConfig::from_json(header.at("config"));
    const auto& toks = header.at("vocab");
    for (size_t i = 0; i < toks.size(); ++i) {
      int id = ens.vocab.add(toks[i].get<std::string>());
      if (id != int(i)) throw SchemaError(cat(ctx, ": vocab ids not dense at ", i));
    }
    for (const auto& mj : header.at("models")) {
      IEModel m;
      m.arch = mj.at("arch").get<std::string>();
      if (m.arch != "conv" && m.arch != "blstm")
        throw SchemaError(cat(ctx, ": unknown member arch '", m.arch, "'"));
      ens.models.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(cat(ctx, ": bad ensemble header: ", e.what()));
  }
  for (size_t i = 0; i < ens.models.size(); ++i) {
    nlohmann::json hyper;
    ens.models[i].params =
        nn::ParamStore::load_stream(in, &hyper, cat(ctx, " member ", i));
    if (hyper.value("arch", ens.models[i].arch) != ens.models[i].arch)
      throw SchemaError(cat(ctx, ": member ", i, " arch mismatch"));
  }
  return ens;
}

std::vector<ExtractedRecord> extract_sequence(const Document& doc, const GameDatabase& db,
                                              const Ensemble& ens) {
  std::vector<ExtractedRecord> out;
  for (const IEExample& ex : build_ie_examples(db, doc, ens.vocab, ens.cfg.max_dist)) {
    int pred = ensemble_predict(ens, ex);
    if (pred == kEpsLabel) continue;
    out.push_back(ExtractedRecord{ex.entity, ex.value, RecordType(pred), ex.ent.sentence,
                                  ex.ent.start, ex.num.start});
  }
  return out;
}

RecallReport extractor_recall(const Ensemble& ens, std::span<const ExamplePair> pairs) {
  RecallReport rep;
  for (const ExamplePair& pair : pairs) {
    std::set<RelationKey> db_keys = pair.db.relation_keys();
    std::set<RelationKey> text_keys, correct;
    for (const IEExample& ex : build_ie_examples(pair, ens.vocab, ens.cfg.max_dist)) {
      for (int lab : ex.labels)
        if (lab != kEpsLabel) text_keys.insert({ex.entity, ex.value, RecordType(lab)});
      int pred = ensemble_predict(ens, ex);
      if (pred == kEpsLabel) continue;
      RelationKey key{ex.entity, ex.value, RecordType(pred)};
      if (db_keys.count(key)) correct.insert(key);
    }
    rep.correct += (long long)(correct.size());
    rep.db_total += (long long)(db_keys.size());
    rep.text_total += (long long)(text_keys.size());
  }
  rep.vs_db = rep.db_total > 0 ? double(rep.correct) / double(rep.db_total) : 0.0;
  rep.vs_text = rep.text_total > 0 ? double(rep.correct) / double(rep.text_total) : 0.0;
  return rep;
}

}  // namespace d2d
