#include "dsr/cli.h"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsr/config.h"
#include "dsr/dmm.h"
#include "dsr/evalkit.h"
#include "dsr/image.h"
#include "dsr/trainer.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dsr::cli {

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  std::string data;
  std::string ckpt;
  std::string teacher_ckpt;
  std::string mode;
  int n = -1;
  int64_t seed = -1;
  std::vector<std::string> overrides;
};

json resolve_config(const CommonArgs& a) {
  json cfg = cfg::resolve(a.config_path, a.overrides);
  if (a.seed >= 0) {
    cfg["train"]["seed"] = a.seed;
    cfg["synth"]["seed"] = a.seed;
  }
  if (a.n >= 0) cfg["synth"]["count"] = a.n;
  if (!a.mode.empty()) cfg["train"]["mode"] = a.mode;
  return cfg;
}

void write_provenance(const std::string& out_dir, const std::string& command,
                      const json& resolved) {
  fs::create_directories(out_dir);
  json j;
  j["command"] = command;
  j["version"] = "0.1.0";
  j["config"] = resolved;
  std::ofstream(fs::path(out_dir) / "resolved_config.json") << j.dump(2) << "\n";
}

net::DepthSource depth_source_for_mode(train::Mode m) {
  switch (m) {
    case train::Mode::teacher_rec_only: return net::DepthSource::zeros;
    case train::Mode::teacher_rec_gt: return net::DepthSource::ground_truth;
    default: return net::DepthSource::network;
  }
}

int cmd_synth(const CommonArgs& a) {
  json cfg = resolve_config(a);
  write_provenance(a.out, "synth", cfg);
  auto sc = cfg::synth_config(cfg);
  auto records = synth::generate_dataset(sc);
  synth::dataset_write(records, a.out, sc.seed);
  std::cout << "wrote " << records.size() << " samples to " << a.out << "\n";
  return 0;
}

int cmd_train(const CommonArgs& a) {
  json cfg = resolve_config(a);
  if (a.data.empty()) throw ConfigError("train: --data is required");
  write_provenance(a.out, "train", cfg);

  auto data = synth::dataset_read(a.data);
  auto tc = cfg::train_config(cfg);
  const bool student = tc.mode == train::Mode::student_plain;
  if (tc.mode == train::Mode::student_distill)
    throw ConfigError("train: use the distill command for student-distill");
  net::DsrNet model(cfg::model_config(cfg, student));

  train::TrainResult res;
  if (student)
    res = train::train_student_distill(model, nullptr, data, tc, a.out);
  else
    res = train::train_teacher(model, data, tc, a.out);
  std::cout << "trained " << res.steps_run << " steps, final loss " << res.final_loss
            << ", checkpoint " << res.checkpoint_dir << "\n";
  return 0;
}

int cmd_distill(const CommonArgs& a) {
  json cfg = resolve_config(a);
  if (a.data.empty()) throw ConfigError("distill: --data is required");
  if (a.teacher_ckpt.empty()) throw ConfigError("distill: --teacher-ckpt is required");
  write_provenance(a.out, "distill", cfg);

  auto data = synth::dataset_read(a.data);
  net::DsrNet teacher(train::checkpoint_model_config(a.teacher_ckpt));
  train::checkpoint_load(teacher, a.teacher_ckpt);

  auto tc = cfg::train_config(cfg);
  tc.mode = train::Mode::student_distill;
  net::DsrNet student(cfg::model_config(cfg, true));
  auto res = train::train_student_distill(student, &teacher, data, tc, a.out);
  std::cout << "distilled " << res.steps_run << " steps, final loss " << res.final_loss
            << ", checkpoint " << res.checkpoint_dir << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  json cfg = resolve_config(a);
  if (a.ckpt.empty()) throw ConfigError("eval: --ckpt is required");
  if (a.data.empty()) throw ConfigError("eval: --data is required");
  write_provenance(a.out, "eval", cfg);

  net::DsrNet model(train::checkpoint_model_config(a.ckpt));
  train::checkpoint_load(model, a.ckpt);
  auto data = synth::dataset_read(a.data);

  net::DepthSource src = net::DepthSource::network;
  if (!a.mode.empty()) src = depth_source_for_mode(train::mode_from_string(a.mode));
  auto rep = eval::evaluate_dataset(model, data, src);
  rep.provenance = {{"checkpoint", a.ckpt}, {"data", a.data}, {"config", cfg}};
  eval::write_report(rep, a.out);
  std::cout << "psnr_sr " << rep.mean_psnr_sr << " dB, psnr_bicubic " << rep.mean_psnr_bicubic
            << " dB, report in " << a.out << "\n";
  return 0;
}

int cmd_infer(const CommonArgs& a) {
  json cfg = resolve_config(a);
  if (a.ckpt.empty()) throw ConfigError("infer: --ckpt is required");
  if (a.data.empty()) throw ConfigError("infer: --data is required");
  write_provenance(a.out, "infer", cfg);

  net::DsrNet model(train::checkpoint_model_config(a.ckpt));
  train::checkpoint_load(model, a.ckpt);
  auto data = synth::dataset_read(a.data);
  const size_t count = a.n > 0 ? std::min<size_t>(data.size(), static_cast<size_t>(a.n))
                               : data.size();

  net::DepthSource src = net::DepthSource::network;
  if (!a.mode.empty()) src = depth_source_for_mode(train::mode_from_string(a.mode));

  json log = json::array();
  nn::NoGradGuard ng;
  for (size_t i = 0; i < count; ++i) {
    const auto& rec = data[i];
    auto fwd = model.forward(rec.lr, rec.ref, rec.ref_down, src, &rec.depth_lr_gt,
                             &rec.depth_refdown_gt);
    Tensor sr = fwd.sr->val;
    for (int64_t k = 0; k < sr.numel(); ++k) sr[k] = std::clamp(sr[k], 0.0, 1.0);
    const std::string path = (fs::path(a.out) / ("sr_" + rec.sample_id + ".png")).string();
    img::write_png_rgb8(path, sr);
    log.push_back({{"id", rec.sample_id}, {"psnr", eval::psnr(sr, rec.hr)}, {"file", path}});
  }
  std::ofstream(fs::path(a.out) / "infer_log.json") << log.dump(2) << "\n";
  std::cout << "wrote " << count << " sr images to " << a.out << "\n";
  return 0;
}

int cmd_bench(const CommonArgs& a) {
  json cfg = resolve_config(a);
  write_provenance(a.out, "bench", cfg);
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  json rows = json::array();
  Rng rng(1);

  {
    synth::SceneParams sp;
    sp.texture_seed = 1;
    auto t0 = clock::now();
    auto r = synth::render_frame(sp, 112, 80);
    rows.push_back({{"name", "render_112x80"}, {"ms", ms_since(t0)}});
    t0 = clock::now();
    img::bicubic_resize(r.image, 320, 448, true);
    rows.push_back({{"name", "bicubic_up4"}, {"ms", ms_since(t0)}});
  }
  {
    Tensor a({8, 16, 16}), b({8, 16, 16});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform();
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform();
    dmm::MatchConfig mc;
    mc.block_h = mc.block_w = 8;
    auto t0 = clock::now();
    auto m = dmm::match_features(a, b, mc);
    rows.push_back({{"name", "match_16x16x8"}, {"ms", ms_since(t0)}});
    Tensor ref({8, 64, 64});
    for (int64_t i = 0; i < ref.numel(); ++i) ref[i] = rng.uniform();
    t0 = clock::now();
    dmm::gather_weight_fold_ref(ref, m, 4, dmm::stacked_scores(m));
    rows.push_back({{"name", "gather_fold_s4"}, {"ms", ms_since(t0)}});
  }
  {
    nn::ParamStore ps;
    Rng r2(2);
    nn::Conv2d conv(ps, "c", 16, 16, 3, 1, 1, r2);
    auto x = nn::param(Tensor::full({16, 48, 64}, 0.5));
    auto t0 = clock::now();
    auto y = conv.forward(x);
    rows.push_back({{"name", "conv3x3_16ch_48x64_fwd"}, {"ms", ms_since(t0)}});
    t0 = clock::now();
    nn::backward(nn::mean_all(nn::square(y)));
    rows.push_back({{"name", "conv3x3_16ch_48x64_bwd"}, {"ms", ms_since(t0)}});
  }

  std::ofstream(fs::path(a.out) / "bench.json") << rows.dump(2) << "\n";
  for (const auto& row : rows)
    std::cout << row["name"].get<std::string>() << ": " << row["ms"].get<double>() << " ms\n";
  return 0;
}

int cmd_ablate(CommonArgs a) {
  // size for seconds-scale runs unless the caller picked a preset explicitly
  bool has_preset = !a.config_path.empty();
  for (const auto& ov : a.overrides)
    if (ov.rfind("preset=", 0) == 0) has_preset = true;
  if (!has_preset) a.overrides.insert(a.overrides.begin(), "preset=micro");

  json cfg = resolve_config(a);
  write_provenance(a.out, "ablate", cfg);

  // data: reuse --data or synthesize train+val micro sets
  std::vector<synth::SampleRecord> train_data, val_data;
  if (!a.data.empty()) {
    train_data = synth::dataset_read(a.data);
    const size_t n_val = std::max<size_t>(1, train_data.size() / 6);
    val_data.assign(train_data.end() - static_cast<long>(n_val), train_data.end());
    train_data.resize(train_data.size() - n_val);
  } else {
    auto sc = cfg::synth_config(cfg);
    train_data = synth::generate_dataset(sc);
    synth::SynthConfig vc = sc;
    vc.seed = sc.seed + 917;
    vc.count = std::max(2, sc.count / 6);
    val_data = synth::generate_dataset(vc);
  }

  auto tc = cfg::train_config(cfg);
  json rows = json::array();

  auto eval_row = [&](const std::string& name, net::DsrNet& model, net::DepthSource src) {
    auto rep = eval::evaluate_dataset(model, val_data, src);
    rows.push_back({{"name", name},
                    {"psnr", rep.mean_psnr_sr},
                    {"ssim", rep.mean_ssim_sr},
                    {"psnr_bicubic", rep.mean_psnr_bicubic}});
    std::cout << name << ": psnr " << rep.mean_psnr_sr << " ssim " << rep.mean_ssim_sr
              << "\n";
  };

  // depth ablation grid
  const std::pair<const char*, train::Mode> depth_grid[] = {
      {"rec-only", train::Mode::teacher_rec_only},
      {"rec+depth-gt", train::Mode::teacher_rec_gt},
      {"rec+depth-net", train::Mode::teacher_rec_dep}};
  std::string teacher_ckpt;
  for (const auto& [name, mode] : depth_grid) {
    net::DsrNet model(cfg::model_config(cfg, false));
    train::TrainConfig rc = tc;
    rc.mode = mode;
    auto res = train::train_teacher(model, train_data, rc,
                                    (fs::path(a.out) / name).string());
    if (mode == train::Mode::teacher_rec_dep) teacher_ckpt = res.checkpoint_dir;
    eval_row(name, model, depth_source_for_mode(mode));
  }

  // distillation loss grid against the depth-net teacher
  net::DsrNet teacher(train::checkpoint_model_config(teacher_ckpt));
  train::checkpoint_load(teacher, teacher_ckpt);
  const std::tuple<const char*, double, double> loss_grid[] = {
      {"student-rec", 0.0, 0.0},
      {"student-rec+kd", 0.5, 0.0},
      {"student-rec+ad", 0.0, 0.1},
      {"student-rec+kd+ad", 0.5, 0.1}};
  for (const auto& [name, kd, ad] : loss_grid) {
    net::DsrNet student(cfg::model_config(cfg, true));
    train::TrainConfig rc = tc;
    rc.mode = (kd == 0.0 && ad == 0.0) ? train::Mode::student_plain
                                       : train::Mode::student_distill;
    rc.student_weights.kd = kd;
    rc.student_weights.ad = ad;
    train::train_student_distill(student, rc.mode == train::Mode::student_plain ? nullptr : &teacher,
                                 train_data, rc, (fs::path(a.out) / name).string());
    eval_row(name, student, net::DepthSource::network);
  }

  std::ofstream(fs::path(a.out) / "ablate.json") << rows.dump(2) << "\n";
  std::ofstream csv(fs::path(a.out) / "ablate.csv");
  csv << "name,psnr,ssim,psnr_bicubic\n";
  for (const auto& row : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f",
                  row["name"].get<std::string>().c_str(), row["psnr"].get<double>(),
                  row["ssim"].get<double>(), row["psnr_bicubic"].get<double>());
    csv << buf << "\n";
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Depth-guided reference super-resolution lab"};
  app.require_subcommand(1);

  CommonArgs a;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "JSON config file");
    sub->add_option("--seed", a.seed, "seed override");
    sub->add_option("--out", a.out, "output directory");
    sub->add_option("--n", a.n, "sample count / limit");
    sub->add_option("--ckpt", a.ckpt, "checkpoint directory");
    sub->add_option("--data", a.data, "dataset directory");
    sub->add_option("--teacher-ckpt", a.teacher_ckpt, "teacher checkpoint directory");
    sub->add_option("--mode", a.mode, "training mode / eval depth source");
    sub->add_option("overrides", a.overrides, "dotted key=value config overrides");
  };

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* train_cmd = app.add_subcommand("train", "train a teacher (or plain student)");
  auto* distill_cmd = app.add_subcommand("distill", "distill a student from a teacher");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  auto* infer_cmd = app.add_subcommand("infer", "run super-resolution on samples");
  auto* bench_cmd = app.add_subcommand("bench", "time the core kernels");
  auto* ablate_cmd = app.add_subcommand("ablate", "run the depth and loss ablation grids");
  for (auto* sub : {synth_cmd, train_cmd, distill_cmd, eval_cmd, infer_cmd, bench_cmd,
                    ablate_cmd})
    add_common(sub);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(a);
    if (train_cmd->parsed()) return cmd_train(a);
    if (distill_cmd->parsed()) return cmd_distill(a);
    if (eval_cmd->parsed()) return cmd_eval(a);
    if (infer_cmd->parsed()) return cmd_infer(a);
    if (bench_cmd->parsed()) return cmd_bench(a);
    if (ablate_cmd->parsed()) return cmd_ablate(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help() << "\n";
  return 2;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace dsr::cli
