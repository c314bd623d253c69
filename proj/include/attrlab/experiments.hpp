#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "attrlab/dataio.hpp"
#include "attrlab/explain.hpp"
#include "attrlab/metrics.hpp"
#include "attrlab/model.hpp"
#include "attrlab/train.hpp"

namespace attrlab {

// Error categories drive the CLI exit code: config/usage 2, missing data 3,
// everything else 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;

  // data
  std::string mnist_dir = "data/mnist";
  std::string cache_dir = "data/cache";
  bool glyph_fallback = true;
  int glyph_train = 12000;
  int glyph_test = 2000;
  int mnist_limit = 0;  // 0 = use every example
  int syn_total = 2500;  // split 80/20 into train/eval
  int syn_vocab = 12;
  int syn_seq_len = 12;
  int syn_classes = 4;

  // layout
  std::string out_dir = "runs/out";
  std::string checkpoint_dir = "checkpoints";

  // models
  QkvConfig qkv{.seq_len = 196, .d_model = 32, .n_classes = 10};
  int encoder_d_model = 32;
  int encoder_layers = 6;
  int encoder_ffn_hidden = 64;

  TrainConfig train_cfg;  // seed is overwritten with the run seed

  // explainers
  double epsilon = 1e-6;
  int ig_steps = 50;
  bool rollout_residual = false;

  // metrics
  int eval_n = 200;
  int chunk = 1;

  AblationPlan ablation{AblationFamily::Single, 1};

  EncoderConfig encoder_config() const;
  std::string json_snapshot() const;  // canonical JSON of every field above
  std::string digest() const;        // FNV-1a 64 of the snapshot, hex
};

ExperimentConfig load_config(const std::string& path);  // empty path = defaults

struct CliOverrides {
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string out;
  int eval_n = -1;
  double epsilon = -1.0;
  int ig_steps = -1;
};
void apply_overrides(ExperimentConfig& cfg, const CliOverrides& ov);

// --- data and model resolution ---------------------------------------------------

// Cache -> MNIST IDX -> glyph fallback (written as IDX, then loaded through
// the same parser). Throws DataError when nothing is available.
std::pair<ImageDataset, ImageDataset> load_or_prepare_images(const ExperimentConfig& cfg);
std::pair<SequenceDataset, SequenceDataset> load_or_prepare_sequences(
    const ExperimentConfig& cfg);

// Loads the named checkpoint when present, otherwise trains and saves it.
PairTrainResult require_qkv_pair(const ExperimentConfig& cfg);
ModelGraph require_encoder(const ExperimentConfig& cfg);

// --- commands --------------------------------------------------------------------

void cmd_prepare_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg, const std::string& which);  // qkv|encoder|all

// Prints relevances for both scalar factorizations plus LOO and a PASS/FAIL
// verdict; returns false on FAIL. Canonical inputs (2,3,4) check the exact
// expected tuples; other inputs check mass conservation and mirror symmetry.
bool cmd_counterexample(const ExperimentConfig& cfg, std::ostream& out, double x1 = 2.0,
                        double x2 = 3.0, double x3 = 4.0);

struct Rq1Row {
  std::string explainer;
  double l_vs_r = 0.0;
  double l_vs_loo = 0.0;
  double r_vs_loo = 0.0;
};
std::vector<Rq1Row> cmd_rq1(const ExperimentConfig& cfg);
std::vector<MetricsRow> cmd_rq2(const ExperimentConfig& cfg);

struct Rq3Row {
  std::string family;
  std::string removed_layers;
  MetricsRow metrics;
};
std::vector<Rq3Row> cmd_rq3(const ExperimentConfig& cfg);

struct ExplainRequest {
  std::string model = "encoder";  // encoder | qkv-av | qkv-kv
  std::string method = "attnlrp"; // loo | ig | rollout | attnlrp | cplrp | random
  int example = 0;
};
void cmd_explain(const ExperimentConfig& cfg, const ExplainRequest& req);

void cmd_eval(const ExperimentConfig& cfg, const std::string& model,
              const std::vector<std::string>& methods);

}  // namespace attrlab
