#include "d2d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "d2d/extractor.hpp"

namespace d2d {

namespace {

std::set<RelationKey> as_set(std::span<const RelationKey> keys) {
  return {keys.begin(), keys.end()};
}

int intersection_size(const std::set<RelationKey>& a, const std::set<RelationKey>& b) {
  int n = 0;
  for (const auto& k : a) n += b.count(k) ? 1 : 0;
  return n;
}

}  // namespace

RgResult rg(std::span<const RelationKey> extracted, const GameDatabase& db) {
  RgResult r;
  auto keys = as_set(extracted);
  r.unique_extracted = int(keys.size());
  if (keys.empty()) return r;  // precision stays undefined
  auto db_keys = db.relation_keys();
  r.supported = intersection_size(keys, db_keys);
  r.precision = double(r.supported) / double(keys.size());
  return r;
}

CsResult cs(std::span<const RelationKey> generated, std::span<const RelationKey> gold) {
  CsResult r;
  auto g = as_set(generated), t = as_set(gold);
  int inter = intersection_size(g, t);
  if (!g.empty()) r.precision = double(inter) / double(g.size());
  if (!t.empty()) r.recall = double(inter) / double(t.size());
  return r;
}

int dld(std::span<const int> a, std::span<const int> b) {
  int n = int(a.size()), m = int(b.size());
  std::vector<std::vector<int>> d(size_t(n + 1), std::vector<int>(size_t(m + 1), 0));
  for (int i = 0; i <= n; ++i) d[size_t(i)][0] = i;
  for (int j = 0; j <= m; ++j) d[0][size_t(j)] = j;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      int sub = a[size_t(i - 1)] == b[size_t(j - 1)] ? 0 : 1;
      int best = std::min({d[size_t(i - 1)][size_t(j)] + 1, d[size_t(i)][size_t(j - 1)] + 1,
                           d[size_t(i - 1)][size_t(j - 1)] + sub});
      if (i > 1 && j > 1 && a[size_t(i - 1)] == b[size_t(j - 2)] &&
          a[size_t(i - 2)] == b[size_t(j - 1)])
        best = std::min(best, d[size_t(i - 2)][size_t(j - 2)] + 1);
      d[size_t(i)][size_t(j)] = best;
    }
  }
  return d[size_t(n)][size_t(m)];
}

double co(std::span<const RelationKey> generated, std::span<const RelationKey> gold) {
  if (generated.empty() && gold.empty()) return 100.0;
  if (generated.empty() || gold.empty()) return 0.0;
  std::map<RelationKey, int> intern;
  auto encode = [&](std::span<const RelationKey> seq) {
    std::vector<int> ids;
    ids.reserve(seq.size());
    for (const auto& k : seq) {
      auto [it, fresh] = intern.emplace(k, int(intern.size()));
      ids.push_back(it->second);
    }
    return ids;
  };
  auto g = encode(generated), t = encode(gold);
  double denom = double(std::max(g.size(), t.size()));
  return 100.0 * (1.0 - double(dld(g, t)) / denom);
}

double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references) {
  if (candidates.size() != references.size())
    throw ContractError(cat("bleu: ", candidates.size(), " candidates vs ",
                            references.size(), " references"));
  constexpr int kMaxN = 4;
  long long match[kMaxN] = {0}, total[kMaxN] = {0};
  long long cand_len = 0, ref_len = 0;

  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    cand_len += (long long)c.size();
    ref_len += (long long)r.size();
    for (int n = 1; n <= kMaxN; ++n) {
      std::map<std::string, int> ref_counts;
      for (size_t j = 0; j + size_t(n) <= r.size(); ++j)
        ref_counts[join_tokens(r, j, j + size_t(n), "\x1f")]++;
      std::map<std::string, int> cand_counts;
      for (size_t j = 0; j + size_t(n) <= c.size(); ++j)
        cand_counts[join_tokens(c, j, j + size_t(n), "\x1f")]++;
      for (const auto& [gram, cnt] : cand_counts) {
        total[n - 1] += cnt;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) match[n - 1] += std::min(cnt, it->second);
      }
    }
  }

  double log_prec = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    if (match[n] == 0 || total[n] == 0) return 0.0;
    log_prec += std::log(double(match[n]) / double(total[n])) / kMaxN;
  }
  double bp = cand_len < ref_len ? std::exp(1.0 - double(ref_len) / double(cand_len)) : 1.0;
  return 100.0 * bp * std::exp(log_prec);
}

MetricsReport evaluate_relations(std::span<const std::vector<RelationKey>> gen_relations,
                                 std::span<const std::vector<RelationKey>> gold_relations,
                                 std::span<const std::vector<std::string>> gen_tokens,
                                 std::span<const ExamplePair> pairs) {
  size_t n = pairs.size();
  if (gen_relations.size() != n || gold_relations.size() != n || gen_tokens.size() != n)
    throw ContractError("evaluate_relations: misaligned inputs");

  MetricsReport rep;
  rep.n_docs = int(n);
  double rg_sum = 0, rg_cnt_sum = 0, cs_p_sum = 0, cs_r_sum = 0, co_sum = 0;
  int rg_n = 0, cs_p_n = 0, cs_r_n = 0;

  for (size_t i = 0; i < n; ++i) {
    DocScores ds;
    ds.game_id = pairs[i].db.id;
    ds.rg = rg(gen_relations[i], pairs[i].db);
    ds.cs = cs(gen_relations[i], gold_relations[i]);
    ds.co = co(gen_relations[i], gold_relations[i]);
    rg_cnt_sum += ds.rg.supported;
    if (ds.rg.precision) { rg_sum += *ds.rg.precision; ++rg_n; } else ++rep.undefined_rg;
    if (ds.cs.precision) { cs_p_sum += *ds.cs.precision; ++cs_p_n; } else ++rep.undefined_cs_p;
    if (ds.cs.recall) { cs_r_sum += *ds.cs.recall; ++cs_r_n; } else ++rep.undefined_cs_r;
    co_sum += ds.co;
    rep.per_doc.push_back(std::move(ds));
  }

  if (rg_n > 0) rep.rg_precision = 100.0 * rg_sum / rg_n;
  rep.rg_count = n > 0 ? rg_cnt_sum / double(n) : 0.0;
  if (cs_p_n > 0) rep.cs_precision = 100.0 * cs_p_sum / cs_p_n;
  if (cs_r_n > 0) rep.cs_recall = 100.0 * cs_r_sum / cs_r_n;
  rep.co_score = n > 0 ? co_sum / double(n) : 0.0;

  std::vector<std::vector<std::string>> refs;
  refs.reserve(n);
  for (const auto& p : pairs) refs.push_back(p.summary.tokens);
  rep.bleu_score = bleu(gen_tokens, refs);
  return rep;
}

MetricsReport evaluate_system(std::span<const Document> gen_docs,
                              std::span<const ExamplePair> pairs, const Ensemble& ens) {
  if (gen_docs.size() != pairs.size())
    throw ContractError(cat("evaluate_system: ", gen_docs.size(), " docs vs ",
                            pairs.size(), " pairs"));
  std::vector<std::vector<RelationKey>> gen_rel, gold_rel;
  std::vector<std::vector<std::string>> gen_toks;
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto to_keys = [](const std::vector<ExtractedRecord>& recs) {
      std::vector<RelationKey> keys;
      keys.reserve(recs.size());
      for (const auto& r : recs) keys.push_back({r.entity, r.value, r.type});
      return keys;
    };
    gen_rel.push_back(to_keys(extract_sequence(gen_docs[i], pairs[i].db, ens)));
    gold_rel.push_back(to_keys(extract_sequence(pairs[i].summary, pairs[i].db, ens)));
    gen_toks.push_back(gen_docs[i].tokens);
  }
  return evaluate_relations(gen_rel, gold_rel, gen_toks, pairs);
}

std::string format_report(const MetricsReport& r, const std::string& label) {
  auto pct = [](const std::optional<double>& v) {
    char buf[16];
    if (v) std::snprintf(buf, sizeof buf, "%7.2f", *v);
    else std::snprintf(buf, sizeof buf, "%7s", "--");
    return std::string(buf);
  };
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %s %7.2f %s %s %7.2f %s %7.2f",
                label.c_str(), pct(r.rg_precision).c_str(), r.rg_count,
                pct(r.cs_precision).c_str(), pct(r.cs_recall).c_str(), r.co_score,
                pct(r.perplexity).c_str(), r.bleu_score);
  return std::string(buf);
}

}  // namespace d2d
