#include "dsr/synthgen.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dsr/errors.h"
#include "dsr/image.h"
#include "dsr/rng.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dsr::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kFovHalfTan = 0.7002075382097097;  // tan(70deg/2)

struct Vec3 {
  double x, y, z;
};

Vec3 rotate(const Vec3& v, double pitch, double yaw) {
  // yaw about y, then pitch about x
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  Vec3 a{cy * v.x + sy * v.z, v.y, -sy * v.x + cy * v.z};
  return {a.x, cp * a.y - sp * a.z, sp * a.y + cp * a.z};
}

// Smoothed multi-octave lattice noise on (arc, z), seeded per scene.
double value_noise(uint64_t seed, double u, double v) {
  auto lattice = [seed](int64_t xi, int64_t yi, int oct) {
    uint64_t h = hash_combine(seed, static_cast<uint64_t>(oct) * 0x9e37ULL);
    h = hash_combine(h, static_cast<uint64_t>(xi) * 0x85ebca6bULL);
    h = hash_combine(h, static_cast<uint64_t>(yi));
    return hash01(h);
  };
  double acc = 0.0, amp = 0.55, freq = 2.0;
  for (int oct = 0; oct < 3; ++oct) {
    const double su = u * freq, sv = v * freq;
    const double fu = std::floor(su), fv = std::floor(sv);
    double tu = su - fu, tv = sv - fv;
    tu = tu * tu * (3.0 - 2.0 * tu);
    tv = tv * tv * (3.0 - 2.0 * tv);
    const int64_t x0 = static_cast<int64_t>(fu), y0 = static_cast<int64_t>(fv);
    const double n00 = lattice(x0, y0, oct), n10 = lattice(x0 + 1, y0, oct);
    const double n01 = lattice(x0, y0 + 1, oct), n11 = lattice(x0 + 1, y0 + 1, oct);
    acc += amp * ((n00 * (1 - tu) + n10 * tu) * (1 - tv) + (n01 * (1 - tu) + n11 * tu) * tv);
    amp *= 0.5;
    freq *= 2.3;
  }
  return acc;
}

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a < -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace

void SceneParams::validate() const {
  if (pipe_radius <= 0.0) throw InvalidScene("pipe_radius must be positive");
  if (far_clip <= pipe_radius) throw InvalidScene("far_clip must exceed pipe_radius");
  const double r2 = camera.x * camera.x + camera.y * camera.y;
  if (r2 >= pipe_radius * pipe_radius)
    throw InvalidScene("camera position outside the cylinder");
}

RenderResult render_frame(const SceneParams& params, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidScene("non-positive frame dims");
  params.validate();

  const double R = params.pipe_radius;
  const Vec3 origin{params.camera.x, params.camera.y, params.camera.z};
  const Vec3 forward = rotate({0, 0, 1}, params.camera.pitch, params.camera.yaw);
  const double tan_h = kFovHalfTan;
  const double tan_v = tan_h * static_cast<double>(height) / width;

  RenderResult out{Tensor({3, height, width}), Tensor({1, height, width})};

  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      const double ndc_x = (px + 0.5) / width * 2.0 - 1.0;
      const double ndc_y = (py + 0.5) / height * 2.0 - 1.0;
      Vec3 d{ndc_x * tan_h, ndc_y * tan_v, 1.0};
      const double inv_len = 1.0 / std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
      d = {d.x * inv_len, d.y * inv_len, d.z * inv_len};
      d = rotate(d, params.camera.pitch, params.camera.yaw);

      // |o_xy + t d_xy|^2 = R^2, camera strictly inside -> one positive root
      const double a = d.x * d.x + d.y * d.y;
      const double b = 2.0 * (origin.x * d.x + origin.y * d.y);
      const double c = origin.x * origin.x + origin.y * origin.y - R * R;
      double t_hit = -1.0;
      if (a > 1e-12) {
        const double disc = b * b - 4.0 * a * c;
        t_hit = (-b + std::sqrt(disc)) / (2.0 * a);
      }

      double depth;
      double albedo;
      double shade;
      if (t_hit > 0.0) {
        const Vec3 q{origin.x + t_hit * d.x, origin.y + t_hit * d.y,
                     origin.z + t_hit * d.z};
        depth = t_hit * (d.x * forward.x + d.y * forward.y + d.z * forward.z);
        depth = std::clamp(depth, 1e-6, params.far_clip);

        const double theta = std::atan2(q.y, q.x);
        const double arc = theta * R;
        double tex = 0.45 + 0.35 * value_noise(params.texture_seed, arc, q.z);
        // axial bands keyed to position so texture frequency encodes depth
        tex += 0.12 * std::sin(q.z * (14.0 + 3.0 * std::sin(q.z))) +
               0.08 * std::sin(arc * 40.0);

        // joint rings every ~0.8 m and two longitudinal seams. Ramped
        // profiles a few HR pixels wide: sharper than a bicubic x4 can
        // reproduce, smooth enough to stay band-limited at the HR grid.
        auto band = [](double d, double half_width, double ramp) {
          const double a = std::fabs(d);
          if (a >= half_width + ramp) return 0.0;
          if (a <= half_width) return 1.0;
          const double t = (a - half_width) / ramp;
          return 1.0 - t * t * (3.0 - 2.0 * t);
        };
        const double joint_phase = q.z - 0.8 * std::floor(q.z / 0.8) - 0.4;
        tex *= 1.0 - 0.55 * band(joint_phase, 0.035, 0.045);
        const double seam0 = 0.6 + 1.2 * hash01(params.texture_seed ^ 0x5ea1ULL);
        tex *= 1.0 - 0.45 * band(wrap_angle(theta - seam0), 0.025, 0.035);
        tex *= 1.0 - 0.45 * band(wrap_angle(theta + seam0), 0.025, 0.035);

        for (const auto& dc : params.decals) {
          const double dth = wrap_angle(theta - dc.theta_center);
          const double dz = q.z - dc.z_pos;
          if (std::fabs(dth) < dc.theta_extent && std::fabs(dz) < dc.z_extent) {
            const double fall = (1.0 - std::fabs(dth) / dc.theta_extent) *
                                (1.0 - std::fabs(dz) / dc.z_extent);
            switch (dc.type) {
              case 0: tex *= 1.0 - 0.6 * fall; break;
              case 1:
                if (std::fabs(dz) < 0.15 * dc.z_extent) tex *= 1.0 - 0.8 * fall;
                break;
              default: tex = tex + (1.0 - tex) * 0.7 * fall; break;
            }
          }
        }
        albedo = std::clamp(tex, 0.0, 1.0);

        // headlight: inward normal vs ray, quadratic distance falloff
        const Vec3 n{-q.x / R, -q.y / R, 0.0};
        const double cosi = std::max(0.0, -(d.x * n.x + d.y * n.y + d.z * n.z));
        const double atten = 1.0 / (1.0 + 0.35 * t_hit * t_hit);
        shade = (0.25 + 0.75 * cosi) * atten;
      } else {
        // looking straight down the pipe: far plane
        depth = params.far_clip;
        albedo = 0.08 + 0.04 * value_noise(params.texture_seed, ndc_x, ndc_y);
        shade = 0.5;
      }

      const double v = albedo * shade;
      out.image.at(0, py, px) = std::clamp(v * 1.00, 0.0, 1.0);
      out.image.at(1, py, px) = std::clamp(v * 0.92, 0.0, 1.0);
      out.image.at(2, py, px) = std::clamp(v * 0.78, 0.0, 1.0);
      out.depth.at(0, py, px) = depth;
    }
  }
  return out;
}

bool SampleRecord::equals(const SampleRecord& o) const {
  return sample_id == o.sample_id && hr.same_shape(o.hr) && hr.max_abs_diff(o.hr) == 0.0 &&
         ref.max_abs_diff(o.ref) == 0.0 && lr.max_abs_diff(o.lr) == 0.0 &&
         ref_down.max_abs_diff(o.ref_down) == 0.0 &&
         depth_lr_gt.max_abs_diff(o.depth_lr_gt) == 0.0 &&
         depth_refdown_gt.max_abs_diff(o.depth_refdown_gt) == 0.0;
}

namespace {

// snap to float32 so .f32 blobs round trip exactly
Tensor snap_f32(Tensor t) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(t[i]);
  return t;
}

}  // namespace

SampleRecord synthesize_sample(const SceneParams& params, const Pose& step, int hr_w,
                               int hr_h, const std::string& id) {
  if (hr_w % 4 != 0 || hr_h % 4 != 0)
    throw InvalidScene("hr dims must be divisible by the downsample scale 4");
  SceneParams ref_params = params;
  ref_params.camera.x += step.x;
  ref_params.camera.y += step.y;
  ref_params.camera.z += step.z;
  ref_params.camera.pitch += step.pitch;
  ref_params.camera.yaw += step.yaw;
  ref_params.validate();

  const int lr_w = hr_w / 4, lr_h = hr_h / 4;

  SampleRecord rec;
  rec.sample_id = id;
  RenderResult hr = render_frame(params, hr_w, hr_h);
  RenderResult ref = render_frame(ref_params, hr_w, hr_h);
  rec.hr = img::quantize_u8_grid(hr.image);
  rec.ref = img::quantize_u8_grid(ref.image);
  rec.lr = img::quantize_u8_grid(img::bicubic_resample(rec.hr, 0.25));
  rec.ref_down = img::quantize_u8_grid(img::bicubic_resample(rec.ref, 0.25));
  rec.depth_lr_gt = snap_f32(render_frame(params, lr_w, lr_h).depth);
  rec.depth_refdown_gt = snap_f32(render_frame(ref_params, lr_w, lr_h).depth);
  return rec;
}

SampleRecord generate_sample(const SynthConfig& cfg, int index) {
  Rng rng(Rng::derive(cfg.seed, static_cast<uint64_t>(index)));
  SceneParams sp;
  sp.pipe_radius = rng.uniform(0.25, 0.45);
  sp.texture_seed = rng.next_u64();
  sp.far_clip = rng.uniform(4.0, 7.0);
  sp.camera.x = rng.uniform(-0.3, 0.3) * sp.pipe_radius;
  sp.camera.y = rng.uniform(-0.3, 0.3) * sp.pipe_radius;
  sp.camera.z = rng.uniform(0.0, 2.0);
  sp.camera.pitch = rng.uniform(-0.06, 0.06);
  sp.camera.yaw = rng.uniform(-0.06, 0.06);
  const int n_decals = rng.uniform_int(0, 3);
  for (int i = 0; i < n_decals; ++i) {
    Decal dc;
    dc.type = rng.uniform_int(0, 2);
    dc.z_pos = sp.camera.z + rng.uniform(0.3, 3.0);
    dc.theta_center = rng.uniform(-kPi, kPi);
    dc.theta_extent = rng.uniform(0.2, 0.8);
    dc.z_extent = rng.uniform(0.1, 0.5);
    sp.decals.push_back(dc);
  }
  Pose step;
  step.z = cfg.camera_step;
  char id[32];
  std::snprintf(id, sizeof(id), "s%06d", index);
  return synthesize_sample(sp, step, cfg.hr_w, cfg.hr_h, id);
}

std::vector<SampleRecord> generate_dataset(const SynthConfig& cfg) {
  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(cfg.count));
  for (int i = 0; i < cfg.count; ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

void dataset_write(const std::vector<SampleRecord>& records, const std::string& path,
                   uint64_t seed) {
  fs::create_directories(fs::path(path) / "samples");
  json manifest;
  manifest["format"] = "dsr-dataset-v1";
  manifest["seed"] = seed;
  manifest["count"] = records.size();
  manifest["samples"] = json::array();

  for (const auto& rec : records) {
    const fs::path dir = fs::path(path) / "samples" / rec.sample_id;
    fs::create_directories(dir);
    img::write_png_rgb8((dir / "hr.png").string(), rec.hr);
    img::write_png_rgb8((dir / "ref.png").string(), rec.ref);
    img::write_png_rgb8((dir / "lr.png").string(), rec.lr);
    img::write_png_rgb8((dir / "ref_lr.png").string(), rec.ref_down);
    img::write_f32((dir / "depth_lr.f32").string(), rec.depth_lr_gt);
    img::write_f32((dir / "depth_reflr.f32").string(), rec.depth_refdown_gt);

    json meta;
    meta["id"] = rec.sample_id;
    meta["hr_w"] = rec.hr.dim(2);
    meta["hr_h"] = rec.hr.dim(1);
    meta["lr_w"] = rec.lr.dim(2);
    meta["lr_h"] = rec.lr.dim(1);
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

    json entry;
    entry["id"] = rec.sample_id;
    entry["hr_w"] = rec.hr.dim(2);
    entry["hr_h"] = rec.hr.dim(1);
    entry["lr_w"] = rec.lr.dim(2);
    entry["lr_h"] = rec.lr.dim(1);
    json files;
    for (const char* f : {"hr.png", "ref.png", "lr.png", "ref_lr.png", "depth_lr.f32",
                          "depth_reflr.f32", "meta.json"})
      files[f] = img::file_crc32((dir / f).string());
    entry["files"] = files;
    manifest["samples"].push_back(entry);
  }
  std::ofstream(fs::path(path) / "manifest.json") << manifest.dump(2) << "\n";
}

std::vector<SampleRecord> dataset_read(const std::string& path) {
  const fs::path mpath = fs::path(path) / "manifest.json";
  if (!fs::exists(mpath)) throw MissingManifest("no manifest.json under " + path);
  json manifest;
  try {
    std::ifstream in(mpath);
    in >> manifest;
  } catch (const std::exception& e) {
    throw CorruptDataset(std::string("unreadable manifest: ") + e.what());
  }

  std::vector<SampleRecord> out;
  for (const auto& entry : manifest.at("samples")) {
    const std::string id = entry.at("id");
    const fs::path dir = fs::path(path) / "samples" / id;
    for (const auto& [fname, crc] : entry.at("files").items()) {
      const fs::path fp = dir / fname;
      if (!fs::exists(fp)) throw CorruptDataset("missing file " + fp.string());
      if (img::file_crc32(fp.string()) != crc.get<uint32_t>())
        throw CorruptDataset("checksum mismatch for " + fp.string());
    }
    SampleRecord rec;
    rec.sample_id = id;
    rec.hr = img::read_png_rgb8((dir / "hr.png").string());
    rec.ref = img::read_png_rgb8((dir / "ref.png").string());
    rec.lr = img::read_png_rgb8((dir / "lr.png").string());
    rec.ref_down = img::read_png_rgb8((dir / "ref_lr.png").string());
    const int lr_h = entry.at("lr_h"), lr_w = entry.at("lr_w");
    rec.depth_lr_gt = img::read_f32((dir / "depth_lr.f32").string(), {1, lr_h, lr_w});
    rec.depth_refdown_gt = img::read_f32((dir / "depth_reflr.f32").string(), {1, lr_h, lr_w});
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dsr::synth
