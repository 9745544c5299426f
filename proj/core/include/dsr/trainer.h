#pragma once

#include <string>
#include <vector>

#include "dsr/distill.h"
#include "dsr/dsrnet.h"
#include "dsr/losses.h"
#include "dsr/synthgen.h"

namespace dsr::train {

enum class Mode {
  teacher_full,     // rec + dep + perceptual + adversarial, alternating critic
  teacher_rec_dep,  // rec + dep (the "plus" recipe)
  teacher_rec_only, // rec only, depth input zeroed
  teacher_rec_gt,   // rec only, ground-truth depth injected into the DMM
  student_plain,    // student architecture, rec only
  student_distill,  // rec + output distillation + attention distillation
};

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

struct TrainConfig {
  Mode mode = Mode::teacher_rec_dep;
  double lr0 = 2e-4;
  double eta_min = 1e-7;
  int epochs = 250;
  int batch_size = 1;
  int steps = 0;  // > 0 overrides epochs * dataset size
  uint64_t seed = 0;
  loss::LossWeights weights;
  distill::StudentWeights student_weights;
  double grad_clip = 10.0;
  int threads = 2;
  int log_every = 1;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int adm_embed = 16;

  void validate() const;
  int64_t total_steps(size_t dataset_size) const;
};

// eta_min + (lr0 - eta_min) * (1 + cos(pi t / T)) / 2
double lr_schedule(int64_t t, int64_t T, double lr0, double eta_min);

struct TrainResult {
  std::string checkpoint_dir;
  std::string log_path;
  double final_loss = 0.0;
  int64_t steps_run = 0;
};

TrainResult train_teacher(net::DsrNet& model, const std::vector<synth::SampleRecord>& data,
                          const TrainConfig& cfg, const std::string& out_dir);

// teacher may be null for the plain (rec-only) student mode.
TrainResult train_student_distill(net::DsrNet& student, const net::DsrNet* teacher,
                                  const std::vector<synth::SampleRecord>& data,
                                  const TrainConfig& cfg, const std::string& out_dir);

// Checkpoint directory: weights.bin (flat little-endian float32 in registry
// order), arch.json (parameter registry + config echo), meta.json (step,
// seed, schedule state, weights checksum).
void checkpoint_save(const net::DsrNet& model, const std::string& dir, int64_t step,
                     int64_t total_steps, uint64_t seed);

struct CheckpointMeta {
  int64_t step = 0;
  int64_t total_steps = 0;
  uint64_t seed = 0;
};

CheckpointMeta checkpoint_load(net::DsrNet& model, const std::string& dir);

// Reads the architecture echo so callers can construct a matching model.
net::ModelConfig checkpoint_model_config(const std::string& dir);

}  // namespace dsr::train
