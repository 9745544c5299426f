#include "dsr/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "dsr/image.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dsr::train {

Mode mode_from_string(const std::string& s) {
  if (s == "teacher-full") return Mode::teacher_full;
  if (s == "teacher-rec-dep") return Mode::teacher_rec_dep;
  if (s == "teacher-rec-only") return Mode::teacher_rec_only;
  if (s == "teacher-rec-gt") return Mode::teacher_rec_gt;
  if (s == "student-plain") return Mode::student_plain;
  if (s == "student-distill") return Mode::student_distill;
  throw ConfigError("unknown training mode: " + s);
}

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::teacher_full: return "teacher-full";
    case Mode::teacher_rec_dep: return "teacher-rec-dep";
    case Mode::teacher_rec_only: return "teacher-rec-only";
    case Mode::teacher_rec_gt: return "teacher-rec-gt";
    case Mode::student_plain: return "student-plain";
    case Mode::student_distill: return "student-distill";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
  if (eta_min < 0.0 || eta_min > lr0) throw ConfigError("eta_min must be in [0, lr0]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size != 1) throw ConfigError("only batch_size 1 is supported");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  weights.validate();
}

int64_t TrainConfig::total_steps(size_t dataset_size) const {
  if (steps > 0) return steps;
  return static_cast<int64_t>(epochs) * static_cast<int64_t>(dataset_size);
}

double lr_schedule(int64_t t, int64_t T, double lr0, double eta_min) {
  if (t < 0 || t > T) throw RangeError("lr_schedule: step " + std::to_string(t) +
                                       " outside [0, " + std::to_string(T) + "]");
  constexpr double kPi = 3.14159265358979323846;
  const double c = std::cos(kPi * static_cast<double>(t) / static_cast<double>(T));
  return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + c);
}

namespace {

net::DepthSource source_for(Mode m) {
  switch (m) {
    case Mode::teacher_rec_only: return net::DepthSource::zeros;
    case Mode::teacher_rec_gt: return net::DepthSource::ground_truth;
    default: return net::DepthSource::network;
  }
}

// seed-determined per-epoch sample order
std::vector<int> epoch_order(size_t n, uint64_t seed, int64_t epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(seed ^ 0x6f72646572ULL, static_cast<uint64_t>(epoch)));
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
  return order;
}

double row_entropy(const Tensor& p) {
  double h = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void apply_thread_count(int threads) {
#ifdef _OPENMP
  omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

}  // namespace

// ---- checkpoints ----

void checkpoint_save(const net::DsrNet& model, const std::string& dir, int64_t step,
                     int64_t total_steps, uint64_t seed) {
  fs::create_directories(dir);
  const auto wpath = fs::path(dir) / "weights.bin";
  {
    std::ofstream f(wpath, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot write " + wpath.string());
    for (const auto& [name, p] : model.params().items()) {
      std::vector<float> data(static_cast<size_t>(p->val.numel()));
      for (int64_t i = 0; i < p->val.numel(); ++i)
        data[static_cast<size_t>(i)] = static_cast<float>(p->val[i]);
      f.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
  }

  json arch;
  arch["format"] = "dsr-ckpt-v1";
  arch["model"] = net::model_config_to_json(model.config());
  arch["params"] = json::array();
  for (const auto& [name, p] : model.params().items())
    arch["params"].push_back({{"name", name}, {"shape", p->val.shape()}});
  std::ofstream(fs::path(dir) / "arch.json") << arch.dump(2) << "\n";

  json meta;
  meta["step"] = step;
  meta["total_steps"] = total_steps;
  meta["seed"] = seed;
  meta["weights_crc32"] = img::file_crc32(wpath.string());
  std::ofstream(fs::path(dir) / "meta.json") << meta.dump(2) << "\n";
}

net::ModelConfig checkpoint_model_config(const std::string& dir) {
  const auto apath = fs::path(dir) / "arch.json";
  if (!fs::exists(apath)) throw CorruptCheckpoint("missing arch.json in " + dir);
  json arch;
  std::ifstream(apath) >> arch;
  return net::model_config_from_json(arch.at("model"));
}

CheckpointMeta checkpoint_load(net::DsrNet& model, const std::string& dir) {
  const auto apath = fs::path(dir) / "arch.json";
  const auto wpath = fs::path(dir) / "weights.bin";
  const auto mpath = fs::path(dir) / "meta.json";
  if (!fs::exists(apath) || !fs::exists(wpath) || !fs::exists(mpath))
    throw CorruptCheckpoint("incomplete checkpoint directory " + dir);

  json arch, meta;
  try {
    std::ifstream(apath) >> arch;
    std::ifstream(mpath) >> meta;
  } catch (const std::exception& e) {
    throw CorruptCheckpoint(std::string("unreadable checkpoint metadata: ") + e.what());
  }

  if (img::file_crc32(wpath.string()) != meta.at("weights_crc32").get<uint32_t>())
    throw CorruptCheckpoint("weights checksum mismatch in " + dir);

  const auto& items = model.params().items();
  const auto& plist = arch.at("params");
  if (plist.size() != items.size())
    throw ConfigError("checkpoint architecture mismatch: " + std::to_string(plist.size()) +
                      " params vs model " + std::to_string(items.size()));
  for (size_t i = 0; i < items.size(); ++i) {
    if (plist[i].at("name") != items[i].first ||
        plist[i].at("shape").get<std::vector<int>>() != items[i].second->val.shape())
      throw ConfigError("checkpoint architecture mismatch at parameter " + items[i].first);
  }

  std::ifstream f(wpath, std::ios::binary);
  for (const auto& [name, p] : items) {
    std::vector<float> data(static_cast<size_t>(p->val.numel()));
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)))
      throw CorruptCheckpoint("weights.bin truncated in " + dir);
    for (int64_t i = 0; i < p->val.numel(); ++i) p->val[i] = data[static_cast<size_t>(i)];
  }

  CheckpointMeta out;
  out.step = meta.at("step");
  out.total_steps = meta.at("total_steps");
  out.seed = meta.at("seed");
  return out;
}

// ---- teacher ----

TrainResult train_teacher(net::DsrNet& model, const std::vector<synth::SampleRecord>& data,
                          const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train_teacher: empty dataset");
  if (cfg.mode == Mode::student_plain || cfg.mode == Mode::student_distill)
    throw ConfigError("train_teacher: student modes go through train_student_distill");
  apply_thread_count(cfg.threads);
  fs::create_directories(out_dir);

  const int64_t T = cfg.total_steps(data.size());
  const net::DepthSource source = source_for(cfg.mode);
  const bool use_dep = cfg.mode == Mode::teacher_full || cfg.mode == Mode::teacher_rec_dep;
  const bool use_gan = cfg.mode == Mode::teacher_full;

  loss::ConvExtractor extractor(16, 0x70657263ULL);
  nn::Adam g_opt, d_opt;
  auto not_critic = [](const std::string& n) { return n.rfind("critic.", 0) != 0; };
  auto is_critic = [](const std::string& n) { return n.rfind("critic.", 0) == 0; };

  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  std::ofstream log(log_path);
  log << "step,l_dep,l_rec,l_per,l_g,l_d,l_adv,total,lr\n";

  TrainResult result;
  result.log_path = log_path;
  std::vector<int> order;

  for (int64_t t = 0; t < T; ++t) {
    const size_t n = data.size();
    if (t % static_cast<int64_t>(n) == 0)
      order = epoch_order(n, cfg.seed, t / static_cast<int64_t>(n));
    const auto& rec = data[static_cast<size_t>(order[static_cast<size_t>(t % static_cast<int64_t>(n))])];
    const double lr = lr_schedule(t, T, cfg.lr0, cfg.eta_min);

    model.params().zero_grads();
    auto fwd = model.forward(rec.lr, rec.ref, rec.ref_down, source, &rec.depth_lr_gt,
                             &rec.depth_refdown_gt);
    nn::Var hr = nn::leaf(rec.hr);

    nn::Var l_rec = loss::reconstruction_loss(fwd.sr, hr);
    nn::Var l_dep = use_dep
                        ? loss::depth_loss(fwd.d_lr, fwd.d_refdown,
                                           nn::leaf(rec.depth_lr_gt),
                                           nn::leaf(rec.depth_refdown_gt))
                        : nn::leaf(Tensor({1}, 0.0));
    nn::Var l_per = nn::leaf(Tensor({1}, 0.0));
    nn::Var l_g = nn::leaf(Tensor({1}, 0.0));
    nn::Var l_d = nn::leaf(Tensor({1}, 0.0));
    nn::Var l_adv = nn::leaf(Tensor({1}, 0.0));

    if (use_gan) {
      l_per = loss::perceptual_loss(fwd.sr, hr, extractor);
      auto adv = loss::adversarial_losses(model.critic(), hr, fwd.sr, cfg.weights);
      l_g = adv.g;
      l_d = adv.d;
      l_adv = adv.adv;
    }

    nn::Var total = loss::total_loss(l_dep, l_rec, l_per, nn::scale(l_g, cfg.weights.g),
                                     cfg.weights);
    nn::backward(total);
    if (cfg.grad_clip > 0.0) nn::clip_grad_global_norm(model.params(), cfg.grad_clip);
    g_opt.step(model.params(), lr, not_critic);

    if (use_gan) {
      model.params().zero_grads();
      nn::Var sr_det = nn::leaf(fwd.sr->val);
      auto adv = loss::adversarial_losses(model.critic(), hr, sr_det, cfg.weights);
      l_d = adv.d;
      nn::Var d_total = nn::scale(adv.d, cfg.weights.adv * cfg.weights.d);
      if (!d_total->val.all_finite()) throw NonFiniteLoss("discriminator loss not finite");
      nn::backward(d_total);
      if (cfg.grad_clip > 0.0) nn::clip_grad_global_norm(model.params(), cfg.grad_clip);
      d_opt.step(model.params(), lr, is_critic);
    }

    result.final_loss = nn::scalar(total);
    result.steps_run = t + 1;
    if (t % cfg.log_every == 0 || t == T - 1) {
      log << t << ',' << fmt(nn::scalar(l_dep)) << ',' << fmt(nn::scalar(l_rec)) << ','
          << fmt(nn::scalar(l_per)) << ',' << fmt(nn::scalar(l_g)) << ','
          << fmt(nn::scalar(l_d)) << ',' << fmt(nn::scalar(l_adv)) << ','
          << fmt(result.final_loss) << ',' << fmt(lr) << '\n';
    }
    if (cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 && t != T - 1)
      checkpoint_save(model, (fs::path(out_dir) / ("ckpt_step" + std::to_string(t + 1))).string(),
                      t + 1, T, cfg.seed);
  }

  result.checkpoint_dir = (fs::path(out_dir) / "ckpt_final").string();
  checkpoint_save(model, result.checkpoint_dir, T, T, cfg.seed);
  return result;
}

// ---- student distillation ----

TrainResult train_student_distill(net::DsrNet& student, const net::DsrNet* teacher,
                                  const std::vector<synth::SampleRecord>& data,
                                  const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train_student_distill: empty dataset");
  if (cfg.mode != Mode::student_plain && cfg.mode != Mode::student_distill)
    throw ConfigError("train_student_distill: expected a student mode");
  const bool use_distill = cfg.mode == Mode::student_distill;
  if (use_distill && teacher == nullptr)
    throw ConfigError("train_student_distill: distillation needs a teacher");
  apply_thread_count(cfg.threads);
  fs::create_directories(out_dir);

  const int64_t T = cfg.total_steps(data.size());

  const int tc = use_distill ? teacher->config().encoder.base_channels
                             : student.config().encoder.base_channels;
  const int sc = student.config().encoder.base_channels;
  nn::ParamStore adm_ps;
  Rng adm_rng(Rng::derive(cfg.seed, 0xad));
  distill::ADM enc_adm(adm_ps, "adm.enc", {tc, tc, tc}, {sc, sc, sc}, cfg.adm_embed,
                       adm_rng);
  distill::ADM dep_adm(adm_ps, "adm.dep", {tc, tc, tc}, {sc, sc, sc}, cfg.adm_embed,
                       adm_rng);

  nn::Adam s_opt, adm_opt;

  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  std::ofstream log(log_path);
  log << "step,l_rec,l_kd,l_ad,total,lr,ent_e0,ent_e1,ent_e2,ent_d0,ent_d1,ent_d2\n";

  TrainResult result;
  result.log_path = log_path;
  std::vector<int> order;

  for (int64_t t = 0; t < T; ++t) {
    const size_t n = data.size();
    if (t % static_cast<int64_t>(n) == 0)
      order = epoch_order(n, cfg.seed, t / static_cast<int64_t>(n));
    const auto& rec = data[static_cast<size_t>(order[static_cast<size_t>(t % static_cast<int64_t>(n))])];
    const double lr = lr_schedule(t, T, cfg.lr0, cfg.eta_min);

    student.params().zero_grads();
    adm_ps.zero_grads();

    auto sf = student.forward(rec.lr, rec.ref, rec.ref_down, net::DepthSource::network);
    nn::Var hr = nn::leaf(rec.hr);
    nn::Var l_rec = loss::reconstruction_loss(sf.sr, hr);
    nn::Var l_kd = nn::leaf(Tensor({1}, 0.0));
    nn::Var l_ad = nn::leaf(Tensor({1}, 0.0));
    std::vector<double> entropies(6, 0.0);

    if (use_distill) {
      std::vector<nn::Var> t_enc, t_dep;
      nn::Var sr_t;
      {
        nn::NoGradGuard ng;
        auto tf = teacher->forward(rec.lr, rec.ref, rec.ref_down, net::DepthSource::network);
        sr_t = tf.sr;
        for (const auto& v : tf.enc_taps) t_enc.push_back(nn::leaf(v->val));
        for (const auto& v : tf.depth_taps) t_dep.push_back(nn::leaf(v->val));
      }
      l_kd = distill::output_distill_loss(sf.sr, sr_t);
      l_ad = distill::attention_distill_loss(t_enc, sf.enc_taps, t_dep, sf.depth_taps,
                                             enc_adm, dep_adm);
      auto a_e = enc_adm.attention_weights(t_enc, sf.enc_taps);
      auto a_d = dep_adm.attention_weights(t_dep, sf.depth_taps);
      for (int i = 0; i < 3; ++i) {
        entropies[static_cast<size_t>(i)] = row_entropy(a_e[static_cast<size_t>(i)]->val);
        entropies[static_cast<size_t>(3 + i)] = row_entropy(a_d[static_cast<size_t>(i)]->val);
      }
    }

    nn::Var total = distill::student_objective(l_rec, l_kd, l_ad, cfg.student_weights);
    nn::backward(total);
    if (cfg.grad_clip > 0.0) {
      nn::clip_grad_global_norm(student.params(), cfg.grad_clip);
      nn::clip_grad_global_norm(adm_ps, cfg.grad_clip);
    }
    auto not_critic = [](const std::string& nme) { return nme.rfind("critic.", 0) != 0; };
    s_opt.step(student.params(), lr, not_critic);
    if (use_distill) adm_opt.step(adm_ps, lr);

    result.final_loss = nn::scalar(total);
    result.steps_run = t + 1;
    if (t % cfg.log_every == 0 || t == T - 1) {
      log << t << ',' << fmt(nn::scalar(l_rec)) << ',' << fmt(nn::scalar(l_kd)) << ','
          << fmt(nn::scalar(l_ad)) << ',' << fmt(result.final_loss) << ',' << fmt(lr);
      for (double e : entropies) log << ',' << fmt(e);
      log << '\n';
    }
    if (cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 && t != T - 1)
      checkpoint_save(student,
                      (fs::path(out_dir) / ("ckpt_step" + std::to_string(t + 1))).string(),
                      t + 1, T, cfg.seed);
  }

  result.checkpoint_dir = (fs::path(out_dir) / "ckpt_final").string();
  checkpoint_save(student, result.checkpoint_dir, T, T, cfg.seed);
  return result;
}

}  // namespace dsr::train
