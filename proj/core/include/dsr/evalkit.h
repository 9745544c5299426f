#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dsr/dsrnet.h"
#include "dsr/synthgen.h"

namespace dsr::eval {

// 10 log10(1 / MSE) over all channels, peak 1.0; +inf for identical images.
double psnr(const Tensor& a, const Tensor& b);

// Mean local SSIM on luminance, 11x11 Gaussian window sigma 1.5,
// K1 = 0.01, K2 = 0.03, L = 1, valid positions only.
double ssim(const Tensor& a, const Tensor& b);

struct DeltaMetrics {
  double d_lr, d_sr, d_hr;
};
// (lr - hr, sr - lr, hr - sr); always sums to zero.
DeltaMetrics delta_metrics(double lr_score, double sr_score, double hr_score);

// Parameter/MAC counts of the inference path at the given LR input.
net::ModelStats model_stats(const net::DsrNet& model, int lr_h, int lr_w);

struct SampleEval {
  std::string id;
  double psnr_sr = 0.0, ssim_sr = 0.0;
  double psnr_bicubic = 0.0, ssim_bicubic = 0.0;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  double mean_psnr_sr = 0.0, mean_ssim_sr = 0.0;
  double mean_psnr_bicubic = 0.0, mean_ssim_bicubic = 0.0;
  net::ModelStats stats;
  nlohmann::json provenance;  // config echo, seed, checkpoint path
};

EvalReport evaluate_dataset(const net::DsrNet& model,
                            const std::vector<synth::SampleRecord>& data,
                            net::DepthSource source = net::DepthSource::network);

// report.json (full precision) and report.csv (two-decimal method table).
void write_report(const EvalReport& report, const std::string& out_dir);

}  // namespace dsr::eval
