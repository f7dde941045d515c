// Acceptance gate: ten end-to-end criteria, one PASS/FAIL line each.
// Usage: acceptance <path-to-d2d-cli>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "d2d/extractor.hpp"
#include "d2d/generator.hpp"
#include "d2d/gradsuite.hpp"
#include "d2d/metrics.hpp"
#include "d2d/spanner.hpp"
#include "d2d/synth.hpp"
#include "d2d/templater.hpp"

using namespace d2d;
namespace fs = std::filesystem;

namespace {

std::string g_cli;         // path to the d2d binary, for the determinism check
fs::path g_work;           // scratch directory
int g_failures = 0;

double now_seconds() {
  using clk = std::chrono::steady_clock;
  static const clk::time_point t0 = clk::now();
  return std::chrono::duration<double>(clk::now() - t0).count();
}

void report(int n, bool pass, const std::string& detail, double secs) {
  if (!pass) ++g_failures;
  std::printf("C%d %s (%s; %.1fs)\n", n, pass ? "PASS" : "FAIL", detail.c_str(), secs);
  std::fflush(stdout);
}

void run_criterion(int n, const std::function<std::pair<bool, std::string>()>& fn) {
  double t0 = now_seconds();
  try {
    auto [pass, detail] = fn();
    report(n, pass, detail, now_seconds() - t0);
  } catch (const std::exception& e) {
    report(n, false, std::string("exception: ") + e.what(), now_seconds() - t0);
  }
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- C1: grads

std::pair<bool, std::string> c1_gradients() {
  const std::set<std::string> wanted = {
      "linear",       "conv1d_maxpool", "lstm_step",     "bilstm_maxpool", "attention",
      "marginal_loss", "joint_copy_nll", "cond_copy_nll", "recon_loss",     "tvd_term"};
  double t0 = now_seconds();
  auto suite = run_grad_suite(1);
  double secs = now_seconds() - t0;

  std::set<std::string> seen;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& e : suite) {
    seen.insert(e.op);
    if (e.report.max_rel_err > worst) {
      worst = e.report.max_rel_err;
      worst_op = e.op + "/" + e.report.worst_param;
    }
  }
  bool cover = std::includes(seen.begin(), seen.end(), wanted.begin(), wanted.end());
  bool pass = cover && worst < 1e-3 && secs < 120.0;
  return {pass, fmt("%zu ops, worst rel err %.2e at %s, %.2fs", suite.size(), worst,
                    worst_op.c_str(), secs)};
}

// ----------------------------------------------------- C2: edit distance

// Reference OSA by the textbook recursion, no tables shared with the library.
int osa_ref(const std::vector<int>& a, const std::vector<int>& b, int la, int lb) {
  if (la == 0) return lb;
  if (lb == 0) return la;
  int best = osa_ref(a, b, la - 1, lb) + 1;
  best = std::min(best, osa_ref(a, b, la, lb - 1) + 1);
  best = std::min(best, osa_ref(a, b, la - 1, lb - 1) + (a[la - 1] != b[lb - 1] ? 1 : 0));
  if (la >= 2 && lb >= 2 && a[la - 1] == b[lb - 2] && a[la - 2] == b[lb - 1])
    best = std::min(best, osa_ref(a, b, la - 2, lb - 2) + 1);
  return best;
}

std::pair<bool, std::string> c2_edit_distance() {
  // every sequence of length <= 5 over {0,1,2}
  std::vector<std::vector<int>> seqs = {{}};
  for (int len = 1; len <= 5; ++len) {
    size_t begin = 0, end = seqs.size();
    for (size_t i = begin; i < end; ++i)
      if (int(seqs[i].size()) == len - 1)
        for (int s = 0; s < 3; ++s) {
          auto ext = seqs[i];
          ext.push_back(s);
          seqs.push_back(std::move(ext));
        }
  }
  long long pairs = 0;
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      int want = osa_ref(a, b, int(a.size()), int(b.size()));
      int got = dld(a, b);
      ++pairs;
      if (got != want)
        return {false, fmt("mismatch after %lld pairs: dld=%d oracle=%d", pairs, got, want)};
    }

  // metric axioms on random pairs (OSA violates the triangle inequality,
  // so that one is deliberately not asserted)
  std::mt19937_64 gen(99);
  auto rand_seq = [&] {
    std::vector<int> s(gen() % 13);
    for (auto& x : s) x = int(gen() % 4);
    return s;
  };
  for (int i = 0; i < 10000; ++i) {
    auto a = rand_seq(), b = rand_seq();
    int d = dld(a, b);
    if (d < 0) return {false, "negative distance"};
    if (d != dld(b, a)) return {false, "asymmetric"};
    if (d > int(std::max(a.size(), b.size()))) return {false, "exceeds max length"};
    if ((d == 0) != (a == b)) return {false, "zero iff equal violated"};
    if (dld(a, a) != 0) return {false, "self distance nonzero"};
  }
  return {true, fmt("%lld exhaustive pairs exact, axioms on 10000 random pairs", pairs)};
}

// ------------------------------------------------------- C3: gold identity

std::pair<bool, std::string> c3_gold_identity() {
  DatasetSplit ds = synth_games(24, 23, NoiseConfig::none());
  std::vector<ExamplePair> pairs = ds.train;

  std::vector<std::vector<RelationKey>> rel;
  std::vector<std::vector<std::string>> toks;
  for (const auto& p : pairs) {
    rel.push_back(render_summary(p.db).realized);
    toks.push_back(p.summary.tokens);
  }
  MetricsReport r = evaluate_relations(rel, rel, toks, pairs);
  bool pass = r.cs_precision && *r.cs_precision == 100.0 && r.cs_recall &&
              *r.cs_recall == 100.0 && r.co_score == 100.0 && r.bleu_score == 100.0;
  return {pass, fmt("CS %.6g/%.6g CO %.6g BLEU %.6g over %d docs",
                    r.cs_precision.value_or(-1), r.cs_recall.value_or(-1), r.co_score,
                    r.bleu_score, r.n_docs)};
}

// --------------------------------------------- C4: extractor learnability

TrainIEResult g_c4;          // reused by C5
std::vector<ExamplePair> g_c4_test;

std::pair<bool, std::string> c4_extractor() {
  DatasetSplit ds = synth_games(500, 5, NoiseConfig::none());
  g_c4_test = ds.test;

  Vocab vocab;
  for (const auto& p : ds.train)
    for (const auto& tok : p.summary.tokens) vocab.add(tok);

  std::vector<IEExample> examples;
  for (const auto& p : ds.train) {
    auto ex = build_ie_examples(p, vocab);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }

  ExtractorConfig cfg = ExtractorConfig().quarter();
  cfg.epochs = 30;
  cfg.seed = 9;

  double t0 = now_seconds();
  g_c4 = train_extractor(examples, cfg, vocab, nullptr);
  double secs = now_seconds() - t0;

  bool pass = g_c4.heldout_accuracy >= 0.95 && secs < 600.0 &&
              g_c4.ensemble.models.size() == 6;
  return {pass, fmt("heldout acc %.4f on %d examples, %zu members, train %.1fs",
                    g_c4.heldout_accuracy, g_c4.heldout_examples,
                    g_c4.ensemble.models.size(), secs)};
}

// ----------------------------------------------- C5: template fidelity

std::pair<bool, std::string> c5_template() {
  if (g_c4.ensemble.models.empty()) return {false, "no ensemble (C4 did not run)"};
  long long supported = 0, unique_extracted = 0;
  int worst_gap = 0;
  for (const auto& p : g_c4_test) {
    TemplateOutput out = render_summary(p.db);

    // oracle alignment scores 100 exactly
    RgResult oracle = rg(out.realized, p.db);
    if (!oracle.precision || *oracle.precision != 1.0)
      return {false, fmt("oracle alignment precision %.6f on %s",
                         oracle.precision.value_or(-1), p.db.id.c_str())};

    std::vector<RelationKey> keys;
    for (const auto& e : extract_sequence(out.doc, p.db, g_c4.ensemble))
      keys.push_back({e.entity, e.value, e.type});
    RgResult r = rg(keys, p.db);
    supported += r.supported;
    unique_extracted += r.unique_extracted;

    std::set<RelationKey> uniq(out.realized.begin(), out.realized.end());
    worst_gap = std::max(worst_gap, std::abs(r.supported - int(uniq.size())));
  }
  double precision = unique_extracted > 0 ? double(supported) / double(unique_extracted) : 0.0;
  bool pass = precision >= 0.95 && worst_gap <= 1;
  return {pass, fmt("ensemble RG precision %.4f (%lld/%lld), worst count gap %d, %zu games",
                    precision, supported, unique_extracted, worst_gap, g_c4_test.size())};
}

// ------------------------------------------------- C6: probability laws

std::pair<bool, std::string> c6_probability() {
  DatasetSplit ds = synth_games(7, 11, NoiseConfig::none());
  double worst = 0.0;
  long long steps = 0;
  std::mt19937_64 gen(5);
  for (const std::string mode : {"joint", "conditional"}) {
    GenConfig cfg;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.copy_mode = mode;
    cfg.dropout = 0.0;
    cfg.seed = 21;
    GenModel m = GenModel::init(ds.train, cfg);
    long long mode_steps = 0;
    while (mode_steps < 10000) {
      for (const auto& p : ds.train) {
        nn::Tape t(&m.params);
        EncodedDB enc = encode_records(t, m, p.db);
        DecState st = initial_state(t, m, enc);
        int prev = Vocab::kBos;
        for (int i = 0; i < 40; ++i) {
          StepOutput step = decode_step(t, m, enc, prev, st);
          double total = step_marginal(t, m, enc, step).total();
          worst = std::max(worst, std::fabs(total - 1.0));
          st = step.state;
          prev = int(gen() % uint64_t(m.words.size()));
          ++mode_steps;
          ++steps;
        }
        if (mode_steps >= 10000) break;
      }
    }
  }
  bool pass = worst <= 1e-5;
  return {pass, fmt("%lld steps across both copy models, worst |sum-1| = %.2e", steps, worst)};
}

// --------------------------------------------------- C7: overfit capability

std::pair<bool, std::string> c7_overfit() {
  DatasetSplit ds = synth_games(7, 11, NoiseConfig::none());

  GenConfig cfg;
  cfg.dim = 64;
  cfg.layers = 2;
  cfg.copy_mode = "conditional";
  cfg.batch = 1;
  cfg.lr = 1.0;
  cfg.lr_decay = 0.5;
  cfg.decay_patience = 300;  // never triggers: constant-lr run
  cfg.clip = 1.0;            // tight clip damps batch-1 oscillation so the fit anneals
  cfg.dropout = 0.0;
  cfg.epochs = 300;
  cfg.stop_ppl = 1.03;
  cfg.seed = 3;

  double t0 = now_seconds();
  TrainGenResult res = train_generator(ds.train, ds.train, cfg);
  double secs = now_seconds() - t0;

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  for (size_t i = 0; i < res.val_ppl.size(); ++i)
    if (res.val_ppl[i] < best) {
      best = res.val_ppl[i];
      best_epoch = int(i) + 1;
    }

  long long total = 0, matched = 0;
  for (const auto& p : ds.train) {
    Document doc = beam_search(p.db, res.model, 1, 400);
    const auto& gold = p.summary.tokens;
    for (size_t i = 0; i < std::min(doc.tokens.size(), gold.size()); ++i)
      if (doc.tokens[i] == gold[i]) ++matched;
    total += static_cast<long long>(gold.size());
  }
  double match = total > 0 ? double(matched) / double(total) : 0.0;

  bool pass = best < 1.5 && match >= 0.9 && secs < 900.0;
  return {pass, fmt("ppl %.4f at epoch %d/%zu, greedy token match %.4f, train %.1fs", best,
                    best_epoch, res.val_ppl.size(), match, secs)};
}

// ------------------------------------------- C8: reconstruction behavior

std::pair<bool, std::string> c8_reconstruction() {
  DatasetSplit ds = synth_games(7, 11, NoiseConfig::none());

  GenConfig cfg;
  cfg.dim = 64;
  cfg.layers = 2;
  cfg.copy_mode = "conditional";
  cfg.batch = 5;  // batched means keep the per-epoch reconstruction curve smooth
  cfg.lr = 1.0;
  cfg.dropout = 0.0;
  cfg.epochs = 10;
  cfg.seed = 3;
  cfg.recon.enabled = true;
  cfg.recon.heads = 3;
  cfg.recon.block = 50;

  TrainGenResult res = train_generator(ds.train, {}, cfg);
  if (res.train_recon.size() != 10) return {false, "missing reconstruction trace"};
  for (size_t i = 1; i < res.train_recon.size(); ++i)
    if (!(res.train_recon[i] < res.train_recon[i - 1]))
      return {false, fmt("recon rose at epoch %zu: %.6f -> %.6f", i + 1,
                         res.train_recon[i - 1], res.train_recon[i])};

  // identical heads have zero total variation, exactly
  nn::Tape t;
  nn::Var p = t.input(nn::Array::vec({0.25f, 0.5f, 0.25f}));
  std::array<nn::Var, 3> head = {p, p, p};
  std::array<nn::Var, 3> heads[] = {head, head, head};
  double tvd = t.scalar(tvd_term(t, heads));
  if (tvd != 0.0) return {false, fmt("tvd of identical heads = %.3e", tvd)};

  return {true, fmt("recon %.4f -> %.4f strictly decreasing over 10 epochs, tvd(identical)=0",
                    res.train_recon.front(), res.train_recon.back())};
}

// ------------------------------------------------------ C9: determinism

int sh(const std::string& cmd) { return std::system(cmd.c_str()); }

bool pipeline(const fs::path& dir, std::string* err) {
  const std::string d = dir.string();
  std::vector<std::string> cmds = {
      g_cli + " synth --games 12 --seed 7 --out " + d,
      g_cli + " make-ie --data " + d + " --out " + d + "/ie --split all",
      g_cli + " train-ie --examples " + d + "/ie/ie-train.jsonl --vocab " + d +
          "/ie/ie-vocab.json --out " + d + "/ens.d2e --quarter --epochs 2 --eval-every 0 --seed 4",
      g_cli + " template --data " + d + " --split test --out " + d +
          "/tmpl.jsonl --align " + d + "/tmpl-align.jsonl",
      g_cli + " train-gen --data " + d + " --out " + d +
          "/gen.d2m --dim 16 --epochs 2 --copy joint --batch 4 --seed 2",
      g_cli + " generate --data " + d + " --split test --model " + d + "/gen.d2m --out " + d +
          "/gen.jsonl --beam 2 --max-len 60",
      g_cli + " extract --data " + d + " --split test --ensemble " + d + "/ens.d2e --gen " + d +
          "/gen.jsonl --out " + d + "/rel.jsonl",
      g_cli + " eval --data " + d + " --split test --ensemble " + d + "/ens.d2e --gen " + d +
          "/gen.jsonl --out " + d + "/report.json",
  };
  for (const auto& c : cmds)
    if (sh(c + " > /dev/null 2>&1") != 0) {
      *err = "command failed: " + c;
      return false;
    }
  return true;
}

std::map<std::string, std::string> artifact_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string name = e.path().filename().string();
    if (name.rfind("manifest-", 0) == 0) continue;  // wall-clock, exempt by design
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

std::pair<bool, std::string> c9_determinism() {
  fs::path a = g_work / "runA", b = g_work / "runB";
  fs::remove_all(a);
  fs::remove_all(b);
  std::string err;
  if (!pipeline(a, &err)) return {false, err};
  if (!pipeline(b, &err)) return {false, err};

  auto fa = artifact_bytes(a), fb = artifact_bytes(b);
  if (fa.size() != fb.size())
    return {false, fmt("artifact counts differ: %zu vs %zu", fa.size(), fb.size())};
  for (const auto& [rel, bytes] : fa) {
    auto it = fb.find(rel);
    if (it == fb.end()) return {false, "missing artifact " + rel};
    if (it->second != bytes) return {false, "bytes differ: " + rel};
  }
  return {true, fmt("%zu artifacts byte-identical across reruns (manifests exempt)", fa.size())};
}

// -------------------------------------------------- C10: BLEU correctness

double ref_bleu(const std::vector<std::vector<std::string>>& cands,
                const std::vector<std::vector<std::string>>& refs) {
  double logp = 0.0;
  long long c_len = 0, r_len = 0;
  for (size_t i = 0; i < cands.size(); ++i) {
    c_len += static_cast<long long>(cands[i].size());
    r_len += static_cast<long long>(refs[i].size());
  }
  for (int n = 1; n <= 4; ++n) {
    long long match = 0, total = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
      std::map<std::vector<std::string>, long long> rc, cc;
      for (size_t j = 0; j + n <= refs[i].size(); ++j)
        ++rc[{refs[i].begin() + j, refs[i].begin() + j + n}];
      for (size_t j = 0; j + n <= cands[i].size(); ++j)
        ++cc[{cands[i].begin() + j, cands[i].begin() + j + n}];
      for (const auto& [g, c] : cc) {
        total += c;
        auto it = rc.find(g);
        if (it != rc.end()) match += std::min(c, it->second);
      }
    }
    if (match == 0 || total == 0) return 0.0;
    logp += 0.25 * std::log(double(match) / double(total));
  }
  if (c_len == 0) return 0.0;
  double bp = c_len < r_len ? std::exp(1.0 - double(r_len) / double(c_len)) : 1.0;
  return 100.0 * bp * std::exp(logp);
}

std::pair<bool, std::string> c10_bleu() {
  std::vector<std::vector<std::string>> refs = {
      {"the", "cat", "sat", "on", "the", "mat", "."},
      {"a", "quick", "brown", "fox", "jumps", "over", "the", "lazy", "dog", "."},
      {"numbers", "like", "102", "and", "99", "rarely", "rhyme", "."},
      {"short", "one", "here", "."},
      {"the", "home", "team", "won", "by", "seven", "points", "."},
  };
  std::vector<std::vector<std::string>> cands = {
      {"the", "cat", "sat", "on", "a", "mat", "."},
      {"a", "quick", "brown", "fox", "leaps", "over", "a", "lazy", "dog"},
      {"numbers", "like", "102", "and", "99", "rarely", "rhyme", "."},
      {"short", "here", "."},
      {"the", "away", "team", "won", "by", "seven", "."},
  };
  double lib = bleu(cands, refs);
  double ref = ref_bleu(cands, refs);
  double ident = bleu(refs, refs);
  bool pass = std::fabs(lib - ref) < 0.01 && ident == 100.0;
  return {pass, fmt("library %.4f vs reference %.4f (|diff| %.2e), identity %.6g", lib, ref,
                    std::fabs(lib - ref), ident)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-d2d-cli>\n");
    return 2;
  }
  g_cli = argv[1];
  g_work = fs::temp_directory_path() / "d2d_acceptance";
  fs::create_directories(g_work);

  run_criterion(1, c1_gradients);
  run_criterion(2, c2_edit_distance);
  run_criterion(3, c3_gold_identity);
  run_criterion(4, c4_extractor);
  run_criterion(5, c5_template);
  run_criterion(6, c6_probability);
  run_criterion(7, c7_overfit);
  run_criterion(8, c8_reconstruction);
  run_criterion(9, c9_determinism);
  run_criterion(10, c10_bleu);

  std::printf("%d/10 criteria passed\n", 10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
