#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsr/tensor.h"

namespace dsr::synth {

struct Pose {
  double x = 0.0, y = 0.0, z = 0.0;     // meters, pipe axis = +z
  double pitch = 0.0, yaw = 0.0;        // radians, applied to the forward axis
};

struct Decal {
  int type = 0;            // 0 stain, 1 streak, 2 deposit
  double z_pos = 0.0;      // axial position, meters
  double theta_center = 0.0;
  double theta_extent = 0.5;  // radians
  double z_extent = 0.2;      // meters
};

struct SceneParams {
  double pipe_radius = 0.3;
  Pose camera;
  uint64_t texture_seed = 0;
  std::vector<Decal> decals;
  double far_clip = 6.0;

  void validate() const;  // throws InvalidScene
};

struct RenderResult {
  Tensor image;  // [3,H,W] in [0,1]
  Tensor depth;  // [1,H,W] strictly positive, <= far_clip
};

// Deterministic textured cylinder render with exact per-pixel ray depth.
RenderResult render_frame(const SceneParams& params, int width, int height);

struct SampleRecord {
  Tensor hr, ref;                        // [3,H,W]
  Tensor lr, ref_down;                   // [3,H/4,W/4]
  Tensor depth_lr_gt, depth_refdown_gt;  // [1,H/4,W/4]
  std::string sample_id;

  bool equals(const SampleRecord& o) const;
};

// hr at the given pose, ref at pose advanced by `step`; lr/ref_down are
// bicubic 1/4 downsamples; depth ground truth rendered at LR resolution.
SampleRecord synthesize_sample(const SceneParams& params, const Pose& step, int hr_w,
                               int hr_h, const std::string& id);

struct SynthConfig {
  int count = 16;
  uint64_t seed = 0;
  int hr_w = 448, hr_h = 320;  // lr dims are locked to hr/4
  double camera_step = 0.15;   // axial advance to the reference pose
};

// Randomized scenes; sample i is a pure function of (seed, i).
std::vector<SampleRecord> generate_dataset(const SynthConfig& cfg);
SampleRecord generate_sample(const SynthConfig& cfg, int index);

void dataset_write(const std::vector<SampleRecord>& records, const std::string& path,
                   uint64_t seed);
std::vector<SampleRecord> dataset_read(const std::string& path);

}  // namespace dsr::synth
