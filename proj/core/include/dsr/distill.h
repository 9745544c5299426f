#pragma once

#include <vector>

#include "dsr/layers.h"

namespace dsr::distill {

// Attention-based distillation module: per-teacher query transforms,
// per-student key and pairing transforms, learned position embeddings
// (initialized to zero), shared embedding width.
class ADM {
public:
  ADM(nn::ParamStore& ps, const std::string& prefix, const std::vector<int>& teacher_ch,
      const std::vector<int>& student_ch, int embed, Rng& rng);

  // alpha rows, one per teacher feature, each softmaxed over students.
  std::vector<nn::Var> attention_weights(const std::vector<nn::Var>& teacher,
                                         const std::vector<nn::Var>& student) const;

  int teacher_count() const { return static_cast<int>(wq_.size()); }
  int student_count() const { return static_cast<int>(wk_.size()); }

private:
  int embed_;
  std::vector<nn::LinearLayer> wq_, wk_, wqk_;
  std::vector<nn::Var> pos_t_, pos_s_;
};

// Per-pixel L2 across channels divided by the channel count.
nn::Var channel_pool(const nn::Var& f);

// Pool-then-resize ordering; bilinear to the teacher grid.
nn::Var resize_student(const nn::Var& pooled, int target_h, int target_w);

// Sum over pairs of alpha-weighted RMS distances between pooled teacher maps
// and resized pooled student maps.
nn::Var attention_set_loss(const std::vector<nn::Var>& teacher,
                           const std::vector<nn::Var>& student, const ADM& adm);

// (encoder part + depth-encoder part) / 2.
nn::Var attention_distill_loss(const std::vector<nn::Var>& enc_t,
                               const std::vector<nn::Var>& enc_s,
                               const std::vector<nn::Var>& dep_t,
                               const std::vector<nn::Var>& dep_s, const ADM& enc_adm,
                               const ADM& dep_adm);

nn::Var output_distill_loss(const nn::Var& sr_student, const nn::Var& sr_teacher);

struct StudentWeights {
  double rec = 1.0;
  double kd = 0.5;
  double ad = 0.1;
};

nn::Var student_objective(const nn::Var& l_rec, const nn::Var& l_kd, const nn::Var& l_ad,
                          const StudentWeights& w);

}  // namespace dsr::distill
