#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>

#include "d2d/dataset.hpp"
#include "d2d/nn/graph.hpp"

namespace d2d {

struct ReconConfig {
  bool enabled = false;
  int block = 100;   // B: decoder hidden states per reconstruction block
  int heads = 3;     // K: independent record predictors
  int filters = 64;  // per conv width (widths are 3 and 5)
  int mlp = 64;      // per-factor feature width
  double tvd_weight = 1.0;
  std::string tvd_sign = "penalize";  // or "encourage"
};

struct GenConfig {
  int dim = 64;     // d: embeddings, record vectors, decoder states
  int layers = 2;   // decoder LSTM layers
  std::string copy_mode = "conditional";  // "none" | "joint" | "conditional"
  ReconConfig recon;
  int bptt_block = 100;   // truncation length; state is detached between blocks
  int batch = 16;         // games per parameter update
  double lr = 1.0;
  double lr_decay = 0.5;    // applied when validation perplexity fails to improve
  int decay_patience = 1;   // consecutive non-improving epochs before a decay
  double dropout = 0.5;   // between LSTM layers and before the output decoder
  double clip = 5.0;
  int epochs = 30;
  double stop_ppl = 0.0;  // stop once validation perplexity drops below (0 = off)
  int max_value = 200;  // value table covers 0..max_value plus overflow buckets
  int min_count = 1;    // word vocabulary cutoff
  int beam = 1;
  int max_len = 400;
  uint64_t seed = 1;

  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

// Sorted canonical entity names; the last id is the unknown slot.
struct EntityTable {
  std::vector<std::string> names;

  int id(const std::string& name) const;
  int size() const { return int(names.size()) + 1; }
};

// Record values: integers 0..max_value keep their own ids, larger or
// negative ones fall into three overflow buckets, then sorted string values,
// then an unknown-string slot.
struct ValueTable {
  int max_value = 200;
  std::vector<std::string> strings;

  int id(const Value& v) const;
  int size() const { return max_value + 4 + int(strings.size()) + 1; }
};

struct GenModel {
  GenConfig cfg;
  Vocab words;
  EntityTable entities;
  ValueTable values;
  nn::ParamStore params;

  // Builds vocabularies from the training games, registers the parameters
  // and initializes them uniform(-0.1, 0.1) from cfg.seed.
  static GenModel init(std::span<const ExamplePair> train, const GenConfig& cfg);

  void save(const std::filesystem::path& file) const;
  static GenModel load(const std::filesystem::path& file);
};

// Encoded source records: one vector per db record in schema order, entity
// mean-pools, and the decoder's initial states.
struct EncodedDB {
  nn::Var records;               // [J, d]
  nn::Var ent_pooled;            // [E, d], entities in first-appearance order
  nn::Var rec_mean;              // [d], mean over all records (switch input)
  std::vector<nn::Var> h0, c0;   // per decoder layer
  std::vector<int> copyable;     // record indexes with integer values
  std::vector<std::string> copy_text;           // their digit renderings
  std::map<std::string, std::vector<int>> by_text;  // digit string -> copy cell ids
};

EncodedDB encode_records(nn::Tape& t, const GenModel& m, const GameDatabase& db);

struct DecState {
  std::vector<nn::Var> h, c;  // per layer
  nn::Var feed;               // input-fed attentional hidden from the last step
};

DecState initial_state(nn::Tape& t, const GenModel& m, const EncodedDB& enc);

struct StepOutput {
  nn::Var gen_logits;    // [|words|], unnormalized
  nn::Var copy_scores;   // [|copyable|], unnormalized; invalid when copy_mode=none
  nn::Var switch_logit;  // [1], pre-sigmoid; conditional mode only
  nn::Var switch_prob;   // [1], sigmoid(switch_logit)
  DecState state;
};

StepOutput decode_step(nn::Tape& t, const GenModel& m, const EncodedDB& enc, int prev_token,
                       const DecState& state);

// z_t and r(y_t) per target position: a digit token is copied iff some db
// record carries that value with its entity mentioned in the same sentence.
struct CopySupervision {
  std::vector<int> z;                       // 0/1 per position
  std::vector<std::vector<int>> records;    // db record indexes, empty when z=0
};

CopySupervision copy_supervision(const Document& doc, const GameDatabase& db);

// Target-side view of one training pair: summary tokens plus EOS.
struct GenTargets {
  std::vector<std::string> tokens;  // realized strings ("" sentinel for EOS)
  std::vector<int> ids;             // word-vocab ids, last is Vocab::kEos
  CopySupervision sup;              // EOS position: z=0, no records
};

GenTargets make_targets(const GenModel& m, const ExamplePair& pair);

// Decodes target positions [begin, end) with teacher forcing, summing the
// per-step negative log-likelihood under the model's copy mode.
struct BlockResult {
  nn::Var loss;                  // scalar sum over the block
  std::vector<nn::Var> hidden;   // top-layer h_t per step
  DecState state;
};

BlockResult nll_block(nn::Tape& t, const GenModel& m, const EncodedDB& enc,
                      const GenTargets& tgt, int begin, int end, DecState state);

// Whole-document losses (teacher-forced, one block); the model's copy_mode
// must match the op.
nn::Var joint_copy_nll(nn::Tape& t, const GenModel& m, const GameDatabase& db,
                       const Document& doc);
nn::Var cond_copy_nll(nn::Tape& t, const GenModel& m, const GameDatabase& db,
                      const Document& doc);

// Per-record target ids for the reconstruction heads.
struct ReconTargets {
  std::vector<int> ent, val, type;  // aligned with db.records
};

ReconTargets recon_targets(const GenModel& m, const GameDatabase& db);

// Mean over unordered head pairs and the three factors of the total
// variation distance 0.5 * sum |p - q|. Zero when K = 1.
nn::Var tvd_term(nn::Tape& t, std::span<const std::array<nn::Var, 3>> heads);

// Segments the hidden states into blocks of at most cfg.recon.block, runs
// the conv -> K-head record predictors per block, and sums the min-over-
// records factorized NLL. tvd is the summed per-block tvd_term.
struct ReconOut {
  nn::Var loss;
  nn::Var tvd;
};

ReconOut recon_loss(nn::Tape& t, const GenModel& m, std::span<const nn::Var> hidden,
                    const ReconTargets& targets);

struct TrainGenResult {
  GenModel model;
  std::vector<double> val_ppl;      // per epoch; empty when valid is empty
  std::vector<double> train_nll;    // per epoch, mean per token
  std::vector<double> train_recon;  // per epoch, mean per block; 0 when disabled
  std::vector<double> train_tvd;
};

// Truncated-BPTT SGD over cfg.bptt_block-token chunks: each chunk re-encodes
// the source, carries decoder state forward detached, and backprops through
// the chunk and the encoder. Learning rate halves when validation
// perplexity fails to improve. Non-finite losses raise TrainError with the
// game and block.
TrainGenResult train_generator(std::span<const ExamplePair> train,
                               std::span<const ExamplePair> valid, const GenConfig& cfg,
                               std::ostream* log = nullptr);

// Next-token marginal (z and records summed out) as probabilities over word
// ids plus extra mass on out-of-vocabulary digit strings.
struct StepMarginal {
  std::vector<double> vocab;
  std::map<std::string, double> extra;

  double total() const;
  double prob(const std::string& token, const Vocab& words) const;
};

StepMarginal step_marginal(nn::Tape& t, const GenModel& m, const EncodedDB& enc,
                           const StepOutput& step);

// exp of the mean per-token negative log marginal likelihood (EOS included).
double perplexity(const GenModel& m, std::span<const ExamplePair> data);

struct Hypothesis {
  std::vector<std::string> tokens;  // realized surface strings
  std::vector<int> ids;             // fed-back word ids (UNK for OOV digits)
  double logp = 0.0;                // exact sum of per-step log marginals
  DecState state;
  bool done = false;
};

// Length-unnormalized beam over the per-step marginal; copied cells realize
// as digit tokens. B=1 is greedy decoding.
Document beam_search(const GameDatabase& db, const GenModel& m, int beam_width, int max_len);

}  // namespace d2d
