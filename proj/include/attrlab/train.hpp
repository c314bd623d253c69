#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attrlab/dataio.hpp"
#include "attrlab/model.hpp"

namespace attrlab {

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 5;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

struct AdamState {
  std::map<std::string, Matrix> m1;  // first moment
  std::map<std::string, Matrix> m2;  // second moment
  long t = 0;
};

// One bias-corrected Adam update over every parameter present in `grads`.
void adam_step(std::map<std::string, Matrix>& params,
               const std::map<std::string, Matrix>& grads, AdamState& state,
               const TrainConfig& cfg);

struct EpochStats {
  double loss = 0.0;      // mean cross-entropy over the epoch
  double accuracy = 0.0;  // training accuracy over the epoch
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  double test_accuracy = 0.0;
};

// Deterministic mini-batch training with cross-entropy loss. Aborts with a
// diagnostic if the loss turns non-finite.
TrainHistory train(ModelGraph& m, const ImageDataset& train_set,
                   const ImageDataset& test_set, const TrainConfig& cfg);
TrainHistory train(ModelGraph& m, const SequenceDataset& train_set,
                   const SequenceDataset& test_set, const TrainConfig& cfg);

double accuracy(const ModelGraph& m, const ImageDataset& data);
double accuracy(const ModelGraph& m, const SequenceDataset& data);

// Trains the cheaper KVFirst grouping once, then instantiates both graphs
// from the shared parameters. Identical functions, different trace shapes.
struct PairTrainResult {
  ModelGraph av_first;
  ModelGraph kv_first;
  TrainHistory history;
};
PairTrainResult train_shared_pair(const QkvConfig& qcfg, const ImageDataset& train_set,
                                  const ImageDataset& test_set, const TrainConfig& cfg);

// --- Checkpoints ----------------------------------------------------------------
// Versioned binary: magic, JSON architecture/metadata header, then raw
// little-endian f64 parameter blocks (see docs/formats.md).

struct CheckpointMeta {
  TrainConfig config;
  double final_accuracy = 0.0;
  std::string note;  // free-form label, e.g. the model family
};

void save_checkpoint(const std::string& path, const ModelGraph& m,
                     const CheckpointMeta& meta);

struct Checkpoint {
  ModelGraph model;
  CheckpointMeta meta;
};
Checkpoint load_checkpoint(const std::string& path);

void write_history_csv(std::ostream& out, const TrainHistory& history);

}  // namespace attrlab
