#include "d2d/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "d2d/spanner.hpp"

namespace d2d {

using nn::Array;
using nn::Tape;
using nn::Var;

// --- config ---------------------------------------------------------------

nlohmann::json GenConfig::to_json() const {
  return {{"dim", dim},
          {"layers", layers},
          {"copy_mode", copy_mode},
          {"recon",
           {{"enabled", recon.enabled},
            {"block", recon.block},
            {"heads", recon.heads},
            {"filters", recon.filters},
            {"mlp", recon.mlp},
            {"tvd_weight", recon.tvd_weight},
            {"tvd_sign", recon.tvd_sign}}},
          {"bptt_block", bptt_block},
          {"batch", batch},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"decay_patience", decay_patience},
          {"dropout", dropout},
          {"clip", clip},
          {"epochs", epochs},
          {"stop_ppl", stop_ppl},
          {"max_value", max_value},
          {"min_count", min_count},
          {"beam", beam},
          {"max_len", max_len},
          {"seed", seed}};
}

namespace {

void validate(const GenConfig& c) {
  if (c.dim <= 0 || c.layers < 1 || c.batch < 1 || c.bptt_block < 1 || c.epochs < 1 ||
      c.max_value < 1 || c.beam < 1 || c.max_len < 1 || c.lr <= 0.0)
    throw SchemaError("generator config out of range");
  if (c.dropout < 0.0 || c.dropout >= 1.0)
    throw SchemaError(cat("generator dropout ", c.dropout, " out of [0,1)"));
  if (c.stop_ppl < 0.0) throw SchemaError("stop_ppl must be >= 0");
  if (c.decay_patience < 1) throw SchemaError("decay_patience must be >= 1");
  if (c.copy_mode != "none" && c.copy_mode != "joint" && c.copy_mode != "conditional")
    throw SchemaError(cat("unknown copy_mode '", c.copy_mode, "'"));
  if (c.recon.block < 1 || c.recon.block > 100 || c.recon.heads < 1 || c.recon.filters < 1 ||
      c.recon.mlp < 1)
    throw SchemaError("reconstruction config out of range");
  if (c.recon.tvd_sign != "penalize" && c.recon.tvd_sign != "encourage")
    throw SchemaError(cat("unknown tvd_sign '", c.recon.tvd_sign, "'"));
}

}  // namespace

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig c;  // absent keys keep their defaults
  if (!j.is_object()) throw SchemaError("generator config must be an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "dim") c.dim = val.get<int>();
    else if (key == "layers") c.layers = val.get<int>();
    else if (key == "copy_mode") c.copy_mode = val.get<std::string>();
    else if (key == "recon") {
      if (!val.is_object()) throw SchemaError("recon config must be an object");
      for (const auto& [rkey, rval] : val.items()) {
        if (rkey == "enabled") c.recon.enabled = rval.get<bool>();
        else if (rkey == "block") c.recon.block = rval.get<int>();
        else if (rkey == "heads") c.recon.heads = rval.get<int>();
        else if (rkey == "filters") c.recon.filters = rval.get<int>();
        else if (rkey == "mlp") c.recon.mlp = rval.get<int>();
        else if (rkey == "tvd_weight") c.recon.tvd_weight = rval.get<double>();
        else if (rkey == "tvd_sign") c.recon.tvd_sign = rval.get<std::string>();
        else throw SchemaError(cat("unknown recon config key '", rkey, "'"));
      }
    } else if (key == "bptt_block") c.bptt_block = val.get<int>();
    else if (key == "batch") c.batch = val.get<int>();
    else if (key == "lr") c.lr = val.get<double>();
    else if (key == "lr_decay") c.lr_decay = val.get<double>();
    else if (key == "decay_patience") c.decay_patience = val.get<int>();
    else if (key == "dropout") c.dropout = val.get<double>();
    else if (key == "clip") c.clip = val.get<double>();
    else if (key == "epochs") c.epochs = val.get<int>();
    else if (key == "stop_ppl") c.stop_ppl = val.get<double>();
    else if (key == "max_value") c.max_value = val.get<int>();
    else if (key == "min_count") c.min_count = val.get<int>();
    else if (key == "beam") c.beam = val.get<int>();
    else if (key == "max_len") c.max_len = val.get<int>();
    else if (key == "seed") c.seed = val.get<uint64_t>();
    else throw SchemaError(cat("unknown generator config key '", key, "'"));
  }
  validate(c);
  return c;
}

// --- symbol tables ----------------------------------------------------------

int EntityTable::id(const std::string& name) const {
  auto it = std::lower_bound(names.begin(), names.end(), name);
  if (it != names.end() && *it == name) return int(it - names.begin());
  return int(names.size());
}

int ValueTable::id(const Value& v) const {
  if (is_numeric(v)) {
    int x = num(v);
    if (x >= 0 && x <= max_value) return x;
    if (x > max_value && x <= max_value + 100) return max_value + 1;
    if (x > max_value + 100 && x <= max_value + 200) return max_value + 2;
    return max_value + 3;  // larger overflow and negatives
  }
  const std::string& s = str(v);
  auto it = std::lower_bound(strings.begin(), strings.end(), s);
  if (it != strings.end() && *it == s) return max_value + 4 + int(it - strings.begin());
  return max_value + 4 + int(strings.size());
}

// --- model ------------------------------------------------------------------

namespace {

void register_params(GenModel& m) {
  const GenConfig& c = m.cfg;
  nn::ParamStore& s = m.params;
  int d = c.dim;
  s.add("emb.word", {m.words.size(), d});
  s.add("emb.ent", {m.entities.size(), d});
  s.add("emb.val", {m.values.size(), d});
  s.add("emb.type", {kNumRecordTypes, d});
  s.add("emb.home", {2, d});
  s.add("enc.W", {4 * d, d});
  s.add("enc.b", {d});
  s.add("init.W", {d, 2 * c.layers * d});
  s.add("init.b", {2 * c.layers * d});
  for (int l = 0; l < c.layers; ++l) {
    int in = (l == 0 ? 2 * d : d) + d;
    s.add(cat("dec.l", l, ".W"), {in, 4 * d});
    s.add(cat("dec.l", l, ".b"), {4 * d});
  }
  s.add("att.gen.W", {d, d});
  s.add("att.out.W", {2 * d, d});
  s.add("att.out.b", {d});
  s.add("out.W", {d, m.words.size()});
  s.add("out.b", {m.words.size()});
  if (c.copy_mode != "none") s.add("att.copy.W", {d, d});
  if (c.copy_mode == "conditional") {
    s.add("sw.W1", {2 * d, d});
    s.add("sw.b1", {d});
    s.add("sw.W2", {d, 1});
    s.add("sw.b2", {1});
  }
  if (c.recon.enabled) {
    int F = c.recon.filters, M = c.recon.mlp;
    s.add("rec.w3.W", {3 * d, F});
    s.add("rec.w3.b", {F});
    s.add("rec.w5.W", {5 * d, F});
    s.add("rec.w5.b", {F});
    for (int k = 0; k < c.recon.heads; ++k) {
      s.add(cat("rec.k", k, ".W1"), {2 * F, 3 * M});
      s.add(cat("rec.k", k, ".b1"), {3 * M});
      s.add(cat("rec.k", k, ".ent.W"), {M, m.entities.size()});
      s.add(cat("rec.k", k, ".ent.b"), {m.entities.size()});
      s.add(cat("rec.k", k, ".val.W"), {M, m.values.size()});
      s.add(cat("rec.k", k, ".val.b"), {m.values.size()});
      s.add(cat("rec.k", k, ".type.W"), {M, kNumRecordTypes});
      s.add(cat("rec.k", k, ".type.b"), {kNumRecordTypes});
    }
  }
}

}  // namespace

GenModel GenModel::init(std::span<const ExamplePair> train, const GenConfig& cfg) {
  validate(cfg);
  if (train.empty()) throw ContractError("generator init without training games");
  GenModel m;
  m.cfg = cfg;
  m.words = build_vocab(train, cfg.min_count);
  std::set<std::string> ents, strs;
  for (const ExamplePair& pair : train)
    for (const Record& r : pair.db.records) {
      ents.insert(r.entity);
      if (!is_numeric(r.value)) strs.insert(str(r.value));
    }
  m.entities.names.assign(ents.begin(), ents.end());
  m.values.max_value = cfg.max_value;
  m.values.strings.assign(strs.begin(), strs.end());
  register_params(m);
  Rng rng(cfg.seed);
  m.params.init_uniform(rng, 0.1f);
  return m;
}

void GenModel::save(const std::filesystem::path& file) const {
  nlohmann::json hyper{{"arch", "gen"},          {"config", cfg.to_json()},
                       {"words", words.tokens()}, {"entities", entities.names},
                       {"value_strings", values.strings}};
  params.save(file, hyper);
}

GenModel GenModel::load(const std::filesystem::path& file) {
  nlohmann::json hyper;
  GenModel m;
  m.params = nn::ParamStore::load(file, &hyper);
  const std::string ctx = file.string();
  try {
    if (hyper.value("arch", "") != "gen")
      throw SchemaError(cat(ctx, ": not a generator model"));
    m.cfg = GenConfig::from_json(hyper.at("config"));
    const auto& toks = hyper.at("words");
    for (size_t i = 0; i < toks.size(); ++i) {
      int id = m.words.add(toks[i].get<std::string>());
      if (id != int(i)) throw SchemaError(cat(ctx, ": word ids not dense at ", i));
    }
    m.entities.names = hyper.at("entities").get<std::vector<std::string>>();
    m.values.strings = hyper.at("value_strings").get<std::vector<std::string>>();
    m.values.max_value = m.cfg.max_value;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(cat(ctx, ": bad generator header: ", e.what()));
  }
  return m;
}

// --- encoder ----------------------------------------------------------------

EncodedDB encode_records(Tape& t, const GenModel& m, const GameDatabase& db) {
  const auto& recs = db.records;
  if (recs.empty()) throw ContractError(cat("encode_records: game ", db.id, " has no records"));
  int J = int(recs.size());
  int d = m.cfg.dim;
  std::vector<int> tid(static_cast<size_t>(J)), eid(static_cast<size_t>(J)), vid(static_cast<size_t>(J)), hid(static_cast<size_t>(J));
  for (int j = 0; j < J; ++j) {
    const Record& r = recs[size_t(j)];
    tid[size_t(j)] = int(r.type);
    eid[size_t(j)] = m.entities.id(r.entity);
    vid[size_t(j)] = m.values.id(r.value);
    hid[size_t(j)] = r.is_home ? 1 : 0;
  }
  Var parts[4] = {t.rows(t.param("emb.type"), tid), t.rows(t.param("emb.ent"), eid),
                  t.rows(t.param("emb.val"), vid), t.rows(t.param("emb.home"), hid)};
  Var X = t.concat_cols(parts);
  Var R = t.relu(t.add_rowwise(t.matmul(X, t.param("enc.W")), t.param("enc.b")));

  // entity pools in first-appearance order; their mean seeds the decoder
  std::vector<std::string> order;
  std::map<std::string, std::vector<int>> groups;
  for (int j = 0; j < J; ++j) {
    auto [it, fresh] = groups.try_emplace(recs[size_t(j)].entity);
    if (fresh) order.push_back(recs[size_t(j)].entity);
    it->second.push_back(j);
  }
  std::vector<Var> pools;
  pools.reserve(order.size());
  for (const std::string& name : order) pools.push_back(t.mean_rows(t.rows(R, groups[name])));

  EncodedDB enc;
  enc.records = R;
  enc.ent_pooled = t.stack_rows(pools);
  enc.rec_mean = t.mean_rows(R);
  Var init = t.linear(t.mean_rows(enc.ent_pooled), t.param("init.W"), t.param("init.b"));
  for (int l = 0; l < m.cfg.layers; ++l) {
    enc.h0.push_back(t.slice(init, 2 * l * d, (2 * l + 1) * d));
    enc.c0.push_back(t.slice(init, (2 * l + 1) * d, (2 * l + 2) * d));
  }
  for (int j = 0; j < J; ++j) {
    if (!is_numeric(recs[size_t(j)].value)) continue;
    std::string text = std::to_string(num(recs[size_t(j)].value));
    enc.by_text[text].push_back(int(enc.copyable.size()));
    enc.copyable.push_back(j);
    enc.copy_text.push_back(std::move(text));
  }
  return enc;
}

DecState initial_state(Tape& t, const GenModel& m, const EncodedDB& enc) {
  DecState st;
  st.h = enc.h0;
  st.c = enc.c0;
  st.feed = t.input(Array({m.cfg.dim}));  // zero vector
  return st;
}

// --- decoder ----------------------------------------------------------------

StepOutput decode_step(Tape& t, const GenModel& m, const EncodedDB& enc, int prev_token,
                       const DecState& state) {
  if (int(state.h.size()) != m.cfg.layers || int(state.c.size()) != m.cfg.layers ||
      !state.feed.valid())
    throw ContractError("decode_step on uninitialized state");
  int pid = prev_token;
  if (pid < 0 || pid >= m.words.size()) pid = Vocab::kUnk;

  Var xparts[2] = {t.row(t.param("emb.word"), pid), state.feed};
  Var cur = t.concat(xparts);
  StepOutput out;
  out.state.h.resize(size_t(m.cfg.layers));
  out.state.c.resize(size_t(m.cfg.layers));
  for (int l = 0; l < m.cfg.layers; ++l) {
    if (l > 0) cur = t.dropout(cur, m.cfg.dropout);  // between LSTM layers
    auto [h, c] = t.lstm_cell(cur, state.h[size_t(l)], state.c[size_t(l)],
                              t.param(cat("dec.l", l, ".W")), t.param(cat("dec.l", l, ".b")));
    out.state.h[size_t(l)] = h;
    out.state.c[size_t(l)] = c;
    cur = h;
  }
  Var top = cur;

  nn::Attention att = nn::attention(t, t.matmul(top, t.param("att.gen.W")), enc.records);
  Var hparts[2] = {top, att.context};
  Var htil = t.tanh_(t.linear(t.concat(hparts), t.param("att.out.W"), t.param("att.out.b")));
  out.gen_logits = t.linear(t.dropout(htil, m.cfg.dropout), t.param("out.W"), t.param("out.b"));

  if (m.cfg.copy_mode != "none" && !enc.copyable.empty()) {
    // the second, identically structured attention layer; only its
    // unnormalized scores are consumed
    Var scores = t.matmul(enc.records, t.matmul(top, t.param("att.copy.W")));
    out.copy_scores = t.gather(scores, enc.copyable);
  }
  if (m.cfg.copy_mode == "conditional") {
    Var sparts[2] = {enc.rec_mean, top};
    Var sh = t.relu(t.linear(t.concat(sparts), t.param("sw.W1"), t.param("sw.b1")));
    out.switch_logit = t.linear(sh, t.param("sw.W2"), t.param("sw.b2"));
    out.switch_prob = t.sigmoid(out.switch_logit);
  }
  out.state.feed = htil;
  return out;
}

// --- copy supervision ---------------------------------------------------------

namespace {

bool canonical_digits(const std::string& tok) {
  if (tok.empty() || tok.size() > 9) return false;
  for (char ch : tok)
    if (!std::isdigit((unsigned char)ch)) return false;
  return tok.size() == 1 || tok[0] != '0';  // match the digit rendering exactly
}

}  // namespace

CopySupervision copy_supervision(const Document& doc, const GameDatabase& db) {
  CopySupervision sup;
  sup.z.assign(doc.tokens.size(), 0);
  sup.records.resize(doc.tokens.size());
  for (size_t si = 0; si < doc.sentences.size(); ++si) {
    auto [s, e] = doc.sentences[si];
    std::span<const std::string> sent(doc.tokens.data() + s, size_t(e - s));
    std::set<std::string> present;
    for (const EntitySpan& es : entity_spans(sent, int(si), db)) present.insert(es.canonical);
    for (int i = s; i < e; ++i) {
      const std::string& tok = doc.tokens[size_t(i)];
      if (!canonical_digits(tok)) continue;
      int v = std::stoi(tok);
      for (size_t j = 0; j < db.records.size(); ++j) {
        const Record& r = db.records[j];
        if (is_numeric(r.value) && num(r.value) == v && present.count(r.entity))
          sup.records[size_t(i)].push_back(int(j));
      }
      sup.z[size_t(i)] = sup.records[size_t(i)].empty() ? 0 : 1;
    }
  }
  return sup;
}

GenTargets make_targets(const GenModel& m, const ExamplePair& pair) {
  GenTargets tgt;
  tgt.tokens = pair.summary.tokens;
  tgt.tokens.emplace_back();  // EOS sentinel
  tgt.ids.reserve(tgt.tokens.size());
  for (const std::string& tok : pair.summary.tokens) tgt.ids.push_back(m.words.id(tok));
  tgt.ids.push_back(Vocab::kEos);
  tgt.sup = copy_supervision(pair.summary, pair.db);
  tgt.sup.z.push_back(0);
  tgt.sup.records.emplace_back();
  return tgt;
}

// --- losses -------------------------------------------------------------------

namespace {

int copy_cell_of(const EncodedDB& enc, int record_index) {
  auto it = std::lower_bound(enc.copyable.begin(), enc.copyable.end(), record_index);
  if (it == enc.copyable.end() || *it != record_index)
    throw ContractError(cat("record ", record_index, " is not copyable"));
  return int(it - enc.copyable.begin());
}

}  // namespace

BlockResult nll_block(Tape& t, const GenModel& m, const EncodedDB& enc, const GenTargets& tgt,
                      int begin, int end, DecState state) {
  if (begin < 0 || end > int(tgt.ids.size()) || begin >= end)
    throw ContractError(cat("nll_block range [", begin, ",", end, ")"));
  BlockResult out;
  std::vector<Var> losses;
  for (int p = begin; p < end; ++p) {
    int prev = p == 0 ? Vocab::kBos : tgt.ids[size_t(p - 1)];
    StepOutput so = decode_step(t, m, enc, prev, state);
    state = so.state;
    out.hidden.push_back(state.h.back());
    int y = tgt.ids[size_t(p)];

    Var lt;
    if (m.cfg.copy_mode == "joint" && so.copy_scores.valid()) {
      // one normalization over vocabulary cells and record cells; the
      // marginal for y_t sums its gen cell with every matching copy cell
      Var both[2] = {so.gen_logits, so.copy_scores};
      Var lp = t.log_softmax(t.concat(both));
      std::vector<int> cells{y};
      auto it = enc.by_text.find(tgt.tokens[size_t(p)]);
      if (it != enc.by_text.end())
        for (int c : it->second) cells.push_back(m.words.size() + c);
      lt = t.marginal_nll(lp, cells);
    } else if (m.cfg.copy_mode == "conditional" && so.copy_scores.valid()) {
      if (tgt.sup.z[size_t(p)] == 1) {
        const auto& rset = tgt.sup.records[size_t(p)];
        if (rset.empty())
          throw ContractError(cat("copy supervision: z=1 with empty r(y_t) at ", p));
        std::vector<int> cells;
        for (int j : rset) cells.push_back(copy_cell_of(enc, j));
        Var lcopy = t.marginal_nll(t.log_softmax(so.copy_scores), cells);
        lt = t.add(t.scale(t.log_sigmoid(so.switch_logit), -1.0), lcopy);
      } else {
        Var lgen = t.nll(t.log_softmax(so.gen_logits), y);
        Var lz0 = t.log_sigmoid(t.scale(so.switch_logit, -1.0));
        lt = t.add(t.scale(lz0, -1.0), lgen);
      }
    } else {
      // copy_mode == "none", or a source with nothing to copy
      lt = t.nll(t.log_softmax(so.gen_logits), y);
    }
    losses.push_back(lt);
  }
  out.loss = t.sum(t.concat(losses));
  out.state = state;
  return out;
}

namespace {

Var whole_doc_nll(Tape& t, const GenModel& m, const GameDatabase& db, const Document& doc) {
  EncodedDB enc = encode_records(t, m, db);
  GenTargets tgt = make_targets(m, ExamplePair{db, doc});
  return nll_block(t, m, enc, tgt, 0, int(tgt.ids.size()), initial_state(t, m, enc)).loss;
}

}  // namespace

Var joint_copy_nll(Tape& t, const GenModel& m, const GameDatabase& db, const Document& doc) {
  if (m.cfg.copy_mode != "joint") throw ContractError("joint_copy_nll on a non-joint model");
  return whole_doc_nll(t, m, db, doc);
}

Var cond_copy_nll(Tape& t, const GenModel& m, const GameDatabase& db, const Document& doc) {
  if (m.cfg.copy_mode != "conditional")
    throw ContractError("cond_copy_nll on a non-conditional model");
  return whole_doc_nll(t, m, db, doc);
}

// --- reconstruction -------------------------------------------------------------

ReconTargets recon_targets(const GenModel& m, const GameDatabase& db) {
  ReconTargets tg;
  for (const Record& r : db.records) {
    tg.ent.push_back(m.entities.id(r.entity));
    tg.val.push_back(m.values.id(r.value));
    tg.type.push_back(int(r.type));
  }
  return tg;
}

Var tvd_term(Tape& t, std::span<const std::array<Var, 3>> heads) {
  if (heads.empty()) throw ContractError("tvd_term with no heads");
  if (heads.size() == 1) return t.input(Array({1}));  // zero
  std::vector<Var> terms;
  for (size_t k = 0; k < heads.size(); ++k)
    for (size_t l = k + 1; l < heads.size(); ++l)
      for (int f = 0; f < 3; ++f) terms.push_back(t.abs_diff_sum(heads[k][size_t(f)], heads[l][size_t(f)]));
  return t.scale(t.sum(t.concat(terms)), 0.5 / double(terms.size()));
}

ReconOut recon_loss(Tape& t, const GenModel& m, std::span<const nn::Var> hidden,
                    const ReconTargets& targets) {
  const ReconConfig& rc = m.cfg.recon;
  if (!rc.enabled) throw ContractError("recon_loss on a model without reconstruction heads");
  if (hidden.empty()) throw ContractError("recon_loss on an empty block");
  if (targets.ent.empty()) throw ContractError("recon_loss without records");
  std::vector<Var> losses, tvds;
  for (int b0 = 0; b0 < int(hidden.size()); b0 += rc.block) {
    int b1 = std::min(b0 + rc.block, int(hidden.size()));
    Var X = t.stack_rows(hidden.subspan(size_t(b0), size_t(b1 - b0)));
    nn::ConvKernel kernels[2] = {{3, t.param("rec.w3.W"), t.param("rec.w3.b")},
                                 {5, t.param("rec.w5.W"), t.param("rec.w5.b")}};
    Var feats = t.conv1d_maxpool(X, kernels);
    std::vector<std::array<Var, 3>> dists;
    for (int k = 0; k < rc.heads; ++k) {
      Var hk = t.relu(t.linear(feats, t.param(cat("rec.k", k, ".W1")),
                               t.param(cat("rec.k", k, ".b1"))));
      Var logits[3] = {
          t.linear(t.slice(hk, 0, rc.mlp), t.param(cat("rec.k", k, ".ent.W")),
                   t.param(cat("rec.k", k, ".ent.b"))),
          t.linear(t.slice(hk, rc.mlp, 2 * rc.mlp), t.param(cat("rec.k", k, ".val.W")),
                   t.param(cat("rec.k", k, ".val.b"))),
          t.linear(t.slice(hk, 2 * rc.mlp, 3 * rc.mlp), t.param(cat("rec.k", k, ".type.W")),
                   t.param(cat("rec.k", k, ".type.b")))};
      // min over records of the factorized NLL = -max of the summed log probs
      Var score = t.add(t.add(t.gather(t.log_softmax(logits[0]), targets.ent),
                              t.gather(t.log_softmax(logits[1]), targets.val)),
                        t.gather(t.log_softmax(logits[2]), targets.type));
      losses.push_back(t.scale(t.reduce_max(score), -1.0));
      dists.push_back({t.softmax(logits[0]), t.softmax(logits[1]), t.softmax(logits[2])});
    }
    tvds.push_back(tvd_term(t, dists));
  }
  ReconOut out;
  out.loss = t.sum(t.concat(losses));
  out.tvd = t.sum(t.concat(tvds));
  return out;
}

// --- training --------------------------------------------------------------------

TrainGenResult train_generator(std::span<const ExamplePair> train,
                               std::span<const ExamplePair> valid, const GenConfig& cfg,
                               std::ostream* log) {
  if (train.empty()) throw ContractError("train_generator without data");
  TrainGenResult res;
  res.model = GenModel::init(train, cfg);
  GenModel& m = res.model;

  std::vector<GenTargets> targets;
  std::vector<ReconTargets> rtargets;
  targets.reserve(train.size());
  for (const ExamplePair& pair : train) {
    targets.push_back(make_targets(m, pair));
    if (cfg.recon.enabled) rtargets.push_back(recon_targets(m, pair.db));
  }
  if (log)
    *log << "[gen] " << train.size() << " train games, vocab " << m.words.size()
         << " words / " << m.entities.size() << " entities / " << m.values.size()
         << " values, copy_mode " << cfg.copy_mode << "\n";

  Rng rng = Rng(cfg.seed).fork(7);  // init consumed the base stream
  double lr = cfg.lr;
  double best_ppl = std::numeric_limits<double>::infinity();
  int stale = 0;  // consecutive epochs without a validation improvement
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  struct Carry {
    std::vector<Array> h, c;
    Array feed;
    int pos = 0;
    bool started = false;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double nll_sum = 0.0, recon_sum = 0.0, tvd_sum = 0.0;
    long long tok_sum = 0, block_count = 0;

    for (size_t bs = 0; bs < order.size(); bs += size_t(cfg.batch)) {
      size_t be = std::min(bs + size_t(cfg.batch), order.size());
      std::vector<Carry> carries(be - bs);
      for (int blk = 0;; ++blk) {
        int active = 0;
        for (size_t i = bs; i < be; ++i)
          if (carries[i - bs].pos < int(targets[size_t(order[i])].ids.size())) ++active;
        if (active == 0) break;

        for (size_t i = bs; i < be; ++i) {
          int g = order[i];
          Carry& cr = carries[i - bs];
          const GenTargets& tgt = targets[size_t(g)];
          if (cr.pos >= int(tgt.ids.size())) continue;
          int end = std::min(cr.pos + cfg.bptt_block, int(tgt.ids.size()));

          Tape t(&m.params, true, rng.next_u64());
          EncodedDB enc = encode_records(t, m, train[size_t(g)].db);
          DecState st;
          if (!cr.started) {
            st = initial_state(t, m, enc);
          } else {  // carried state enters the new tape as data: detached
            for (int l = 0; l < cfg.layers; ++l) {
              st.h.push_back(t.input(cr.h[size_t(l)]));
              st.c.push_back(t.input(cr.c[size_t(l)]));
            }
            st.feed = t.input(cr.feed);
          }
          BlockResult br = nll_block(t, m, enc, tgt, cr.pos, end, st);
          nll_sum += t.scalar(br.loss);
          Var total = br.loss;
          if (cfg.recon.enabled) {
            ReconOut ro = recon_loss(t, m, br.hidden, rtargets[size_t(g)]);
            double sign = cfg.recon.tvd_sign == "encourage" ? -1.0 : 1.0;
            total = t.add(total, t.add(ro.loss, t.scale(ro.tvd, sign * cfg.recon.tvd_weight)));
            recon_sum += t.scalar(ro.loss);
            tvd_sum += t.scalar(ro.tvd);
            ++block_count;
          }
          int ntok = end - cr.pos;
          tok_sum += ntok;
          Var norm = t.scale(total, 1.0 / double(ntok));
          if (!std::isfinite(t.scalar(norm)))
            throw TrainError(
                cat("non-finite loss in game ", train[size_t(g)].db.id, " block ", blk));
          t.backward(norm);

          cr.h.clear();
          cr.c.clear();
          for (int l = 0; l < cfg.layers; ++l) {
            cr.h.push_back(t.val(br.state.h[size_t(l)]));
            cr.c.push_back(t.val(br.state.c[size_t(l)]));
          }
          cr.feed = t.val(br.state.feed);
          cr.pos = end;
          cr.started = true;
        }
        m.params.scale_grads(1.0 / double(active));
        m.params.sgd_step(lr, cfg.clip);
      }
    }

    res.train_nll.push_back(tok_sum > 0 ? nll_sum / double(tok_sum) : 0.0);
    res.train_recon.push_back(block_count > 0 ? recon_sum / double(block_count) : 0.0);
    res.train_tvd.push_back(block_count > 0 ? tvd_sum / double(block_count) : 0.0);
    if (!valid.empty()) {
      double ppl = perplexity(m, valid);
      res.val_ppl.push_back(ppl);
      if (ppl < best_ppl - 1e-12) {
        best_ppl = ppl;
        stale = 0;
      } else if (++stale >= cfg.decay_patience) {
        lr *= cfg.lr_decay;  // halve on plateau
        stale = 0;
      }
    }
    if (log) {
      *log << "[gen] epoch " << epoch << "/" << cfg.epochs << " nll/tok "
           << res.train_nll.back();
      if (!valid.empty()) *log << " val-ppl " << res.val_ppl.back() << " lr " << lr;
      if (cfg.recon.enabled)
        *log << " recon " << res.train_recon.back() << " tvd " << res.train_tvd.back();
      *log << "\n";
    }
    if (cfg.stop_ppl > 0.0 && !res.val_ppl.empty() && res.val_ppl.back() < cfg.stop_ppl) break;
  }
  return res;
}

// --- evaluation & decoding ----------------------------------------------------------

namespace {

std::vector<double> softmax_double(const Array& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float x : logits.data) mx = std::max(mx, double(x));
  std::vector<double> p(logits.data.size());
  double z = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(double(logits.data[i]) - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

}  // namespace

double StepMarginal::total() const {
  double s = std::accumulate(vocab.begin(), vocab.end(), 0.0);
  for (const auto& [tok, p] : extra) s += p;
  return s;
}

double StepMarginal::prob(const std::string& token, const Vocab& words) const {
  if (words.contains(token)) return vocab[size_t(words.id(token))];
  auto it = extra.find(token);
  if (it != extra.end()) return it->second;
  return vocab[size_t(Vocab::kUnk)];
}

StepMarginal step_marginal(Tape& t, const GenModel& m, const EncodedDB& enc,
                           const StepOutput& step) {
  StepMarginal sm;
  const Array& gl = t.val(step.gen_logits);
  if (m.cfg.copy_mode == "none" || !step.copy_scores.valid()) {
    sm.vocab = softmax_double(gl);
    return sm;
  }
  auto fold = [&](int cell, double mass) {
    const std::string& s = enc.copy_text[size_t(cell)];
    if (m.words.contains(s)) sm.vocab[size_t(m.words.id(s))] += mass;
    else sm.extra[s] += mass;
  };
  if (m.cfg.copy_mode == "joint") {
    const Array& cs = t.val(step.copy_scores);
    Array both({gl.len() + cs.len()});
    std::copy(gl.data.begin(), gl.data.end(), both.data.begin());
    std::copy(cs.data.begin(), cs.data.end(), both.data.begin() + gl.len());
    std::vector<double> p = softmax_double(both);
    sm.vocab.assign(p.begin(), p.begin() + gl.len());
    for (int c = 0; c < cs.len(); ++c) fold(c, p[size_t(gl.len() + c)]);
  } else {  // conditional
    double s = double(t.val(step.switch_logit).data[0]);
    double pz = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    std::vector<double> pg = softmax_double(gl);
    std::vector<double> pc = softmax_double(t.val(step.copy_scores));
    sm.vocab.resize(pg.size());
    for (size_t i = 0; i < pg.size(); ++i) sm.vocab[i] = (1.0 - pz) * pg[i];
    for (size_t c = 0; c < pc.size(); ++c) fold(int(c), pz * pc[c]);
  }
  return sm;
}

double perplexity(const GenModel& m, std::span<const ExamplePair> data) {
  if (data.empty()) throw ContractError("perplexity over an empty split");
  double nll = 0.0;
  long long n = 0;
  for (const ExamplePair& pair : data) {
    Tape t(const_cast<nn::ParamStore*>(&m.params));  // forward only
    EncodedDB enc = encode_records(t, m, pair.db);
    GenTargets tgt = make_targets(m, pair);
    DecState st = initial_state(t, m, enc);
    for (size_t p = 0; p < tgt.ids.size(); ++p) {
      int prev = p == 0 ? Vocab::kBos : tgt.ids[p - 1];
      StepOutput so = decode_step(t, m, enc, prev, st);
      st = so.state;
      StepMarginal sm = step_marginal(t, m, enc, so);
      double pr = p + 1 == tgt.ids.size() ? sm.vocab[size_t(Vocab::kEos)]
                                          : sm.prob(tgt.tokens[p], m.words);
      nll += -std::log(std::max(pr, 1e-300));
      ++n;
    }
  }
  return std::exp(nll / double(n));
}

Document beam_search(const GameDatabase& db, const GenModel& m, int beam_width, int max_len) {
  if (beam_width < 1 || max_len < 1)
    throw ContractError(cat("beam_search width ", beam_width, " max_len ", max_len));
  Tape t(const_cast<nn::ParamStore*>(&m.params));  // forward only
  EncodedDB enc = encode_records(t, m, db);

  std::vector<Hypothesis> beam(1);
  beam[0].state = initial_state(t, m, enc);
  std::vector<Hypothesis> done;

  struct Cand {
    int hyp;
    double logp;
    std::string tok;
    int id;
  };

  for (int step = 0; step < max_len && !beam.empty(); ++step) {
    std::vector<StepOutput> outs(beam.size());
    std::vector<Cand> cands;
    for (size_t hi = 0; hi < beam.size(); ++hi) {
      const Hypothesis& hyp = beam[hi];
      int prev = hyp.ids.empty() ? Vocab::kBos : hyp.ids.back();
      outs[hi] = decode_step(t, m, enc, prev, hyp.state);
      StepMarginal sm = step_marginal(t, m, enc, outs[hi]);
      for (int id = 0; id < int(sm.vocab.size()); ++id) {
        if (id == Vocab::kPad || id == Vocab::kBos) continue;
        if (sm.vocab[size_t(id)] <= 0.0) continue;
        cands.push_back(
            {int(hi), hyp.logp + std::log(sm.vocab[size_t(id)]), m.words.token(id), id});
      }
      for (const auto& [tok, p] : sm.extra) {
        if (p <= 0.0) continue;
        cands.push_back({int(hi), hyp.logp + std::log(p), tok, Vocab::kUnk});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.tok < b.tok;
    });

    // top beam_width candidates overall; EOS candidates retire to done
    std::vector<Hypothesis> next;
    int taken = 0;
    for (const Cand& c : cands) {
      if (taken >= beam_width) break;
      ++taken;
      Hypothesis h = beam[size_t(c.hyp)];
      h.logp = c.logp;
      h.state = outs[size_t(c.hyp)].state;
      if (c.id == Vocab::kEos) {
        h.done = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.tok);
        h.ids.push_back(c.id);
        next.push_back(std::move(h));
      }
    }
    beam = std::move(next);
    if (!done.empty() && !beam.empty()) {
      // unnormalized log-probs only decrease, so once the best finished
      // hypothesis beats every live one the search cannot improve
      double best_done = done[0].logp, best_live = beam[0].logp;
      for (const Hypothesis& h : done) best_done = std::max(best_done, h.logp);
      for (const Hypothesis& h : beam) best_live = std::max(best_live, h.logp);
      if (int(done.size()) >= beam_width && best_done >= best_live) break;
    }
  }

  const Hypothesis* best = nullptr;
  for (const Hypothesis& h : done)
    if (!best || h.logp > best->logp) best = &h;
  if (!best)
    for (const Hypothesis& h : beam)
      if (!best || h.logp > best->logp) best = &h;
  Document out;
  if (best) {
    out.tokens = best->tokens;
    out.sentences = split_sentences(out.tokens);
  }
  return out;
}

}  // namespace d2d
