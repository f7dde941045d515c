#pragma once

#include <filesystem>
#include <iosfwd>

#include "d2d/nn/tape.hpp"
#include "d2d/spanner.hpp"

namespace d2d {

struct ExtractorConfig {
  int word_emb = 200;
  int dist_emb = 100;
  std::vector<std::pair<int, int>> kernels = {{2, 200}, {3, 200}, {5, 200}};  // (width, filters)
  int conv_mlp = 500;
  int lstm_hidden = 500;  // per direction
  int lstm_mlp = 700;
  int n_conv = 3;
  int n_lstm = 3;
  int max_dist = 40;       // distance clipping bound (declared default)
  int epochs = 30;
  double lr = 0.1;         // per-example steps; 1.0 thrashes (declared default)
  double clip = 5.0;
  double heldout_frac = 0.1;  // held out by game id (declared default)
  // early stopping: stop a member when its held-out accuracy reaches
  // stop_accuracy, or plateaus for plateau_patience consecutive checks
  double stop_accuracy = 0.97;
  int plateau_patience = 3;
  int eval_every = 4000;  // mid-epoch accuracy checks, in updates (0 = off)
  uint64_t seed = 1;

  ExtractorConfig quarter() const;

  nlohmann::json to_json() const;
  static ExtractorConfig from_json(const nlohmann::json& j);
};

struct IEModel {
  std::string arch;  // "conv" or "blstm"
  nn::ParamStore params;
};

struct Ensemble {
  ExtractorConfig cfg;
  Vocab vocab;
  std::vector<IEModel> models;

  void save(const std::filesystem::path& file) const;
  static Ensemble load(const std::filesystem::path& file);
};

// Registers one member's parameters (uninitialized) in the store.
void build_ie_params(nn::ParamStore& store, const std::string& arch, int vocab_size,
                     const ExtractorConfig& cfg);

// Log-probabilities over the 40 labels for one example. Token ids outside
// the vocabulary fall back to UNK.
nn::Var ie_forward(nn::Tape& tape, const IEExample& ex, const std::string& arch,
                   const ExtractorConfig& cfg);

// -log sum_{t in labels} p(t); the latent-variable marginal loss.
nn::Var marginal_loss(nn::Tape& tape, nn::Var logprobs, std::span<const int> labels);

// Mean-probability ensemble vote; ties break to the lowest label id.
int ensemble_predict(const Ensemble& ens, const IEExample& ex);

double ensemble_accuracy(const Ensemble& ens, std::span<const IEExample> examples);

// Split by game id so no game contributes to both sides.
std::pair<std::vector<IEExample>, std::vector<IEExample>> split_by_game(
    std::span<const IEExample> examples, double heldout_frac, uint64_t seed);

struct TrainIEResult {
  Ensemble ensemble;
  double heldout_accuracy = 0.0;  // ensemble vote on the held-out slice
  int heldout_examples = 0;
};

// Trains n_conv + n_lstm members with per-example SGD on the marginal loss.
// threads > 1 trains members concurrently (outputs are independent of the
// thread count). log receives per-epoch lines when non-null.
TrainIEResult train_extractor(std::span<const IEExample> examples, const ExtractorConfig& cfg,
                              const Vocab& vocab, std::ostream* log = nullptr,
                              int threads = 1);

// Classifies every candidate pair of the document; keeps non-EPS
// predictions in (sentence, entity start, number start) order.
std::vector<ExtractedRecord> extract_sequence(const Document& doc, const GameDatabase& db,
                                              const Ensemble& ens);

struct RecallReport {
  double vs_db = 0.0;    // correct unique relations / all numeric db relations
  double vs_text = 0.0;  // ... / relations whose entity and value co-occur in a sentence
  long long correct = 0, db_total = 0, text_total = 0;
};

// Corpus-level recall of gold-summary extraction under both bases.
RecallReport extractor_recall(const Ensemble& ens, std::span<const ExamplePair> pairs);

}  // namespace d2d
