#include "dsr/distill.h"

#include <cmath>

#include "dsr/errors.h"
#include "dsr/losses.h"

namespace dsr::distill {

using nn::Var;

ADM::ADM(nn::ParamStore& ps, const std::string& prefix, const std::vector<int>& teacher_ch,
         const std::vector<int>& student_ch, int embed, Rng& rng)
    : embed_(embed) {
  if (teacher_ch.empty() || student_ch.empty())
    throw ConfigError("ADM needs nonempty teacher and student feature sets");
  if (embed <= 0) throw ConfigError("ADM embedding width must be positive");
  for (size_t m = 0; m < teacher_ch.size(); ++m) {
    wq_.emplace_back(ps, prefix + ".wq" + std::to_string(m), teacher_ch[m], embed, rng);
    pos_t_.push_back(ps.add(prefix + ".pt" + std::to_string(m), Tensor::zeros({embed})));
  }
  for (size_t n = 0; n < student_ch.size(); ++n) {
    wk_.emplace_back(ps, prefix + ".wk" + std::to_string(n), student_ch[n], embed, rng);
    wqk_.emplace_back(ps, prefix + ".wqk" + std::to_string(n), embed, embed, rng);
    pos_s_.push_back(ps.add(prefix + ".ps" + std::to_string(n), Tensor::zeros({embed})));
  }
}

std::vector<Var> ADM::attention_weights(const std::vector<Var>& teacher,
                                        const std::vector<Var>& student) const {
  if (teacher.size() != wq_.size() || student.size() != wk_.size())
    throw ShapeError("ADM: feature set sizes do not match the configured transforms");
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(embed_));

  std::vector<Var> queries, keys;
  for (size_t m = 0; m < teacher.size(); ++m)
    queries.push_back(nn::relu(wq_[m].forward(nn::global_avg_pool(teacher[m]))));
  for (size_t n = 0; n < student.size(); ++n)
    keys.push_back(nn::relu(wk_[n].forward(nn::global_avg_pool(student[n]))));

  std::vector<Var> rows;
  for (size_t m = 0; m < teacher.size(); ++m) {
    std::vector<Var> logits;
    for (size_t n = 0; n < student.size(); ++n) {
      Var bilinear = nn::dot(queries[m], nn::matvec(wqk_[n].w, keys[n]));
      Var positional = nn::dot(pos_t_[m], pos_s_[n]);
      logits.push_back(nn::scale(nn::add(bilinear, positional), inv_sqrt_c));
    }
    rows.push_back(nn::softmax_vec(nn::concat_flat(logits)));
  }
  return rows;
}

Var channel_pool(const Var& f) { return nn::channel_l2_pool(f); }

Var resize_student(const Var& pooled, int target_h, int target_w) {
  if (pooled->val.dim(1) == target_h && pooled->val.dim(2) == target_w) return pooled;
  return nn::bilinear_resize(pooled, target_h, target_w);
}

Var attention_set_loss(const std::vector<Var>& teacher, const std::vector<Var>& student,
                       const ADM& adm) {
  auto alpha = adm.attention_weights(teacher, student);
  std::vector<Var> pooled_t;
  for (const auto& t : teacher) pooled_t.push_back(channel_pool(t));

  Var acc;
  for (size_t m = 0; m < teacher.size(); ++m) {
    std::vector<Var> dists;
    for (const auto& s : student) {
      Var ps = resize_student(channel_pool(s), pooled_t[m]->val.dim(1),
                              pooled_t[m]->val.dim(2));
      dists.push_back(loss::l2_mean(pooled_t[m], ps));
    }
    Var row = nn::dot(alpha[m], nn::concat_flat(dists));
    acc = acc ? nn::add(acc, row) : row;
  }
  return acc;
}

Var attention_distill_loss(const std::vector<Var>& enc_t, const std::vector<Var>& enc_s,
                           const std::vector<Var>& dep_t, const std::vector<Var>& dep_s,
                           const ADM& enc_adm, const ADM& dep_adm) {
  Var e = attention_set_loss(enc_t, enc_s, enc_adm);
  Var d = attention_set_loss(dep_t, dep_s, dep_adm);
  return nn::scale(nn::add(e, d), 0.5);
}

Var output_distill_loss(const Var& sr_student, const Var& sr_teacher) {
  return loss::l1_mean(sr_teacher, sr_student);
}

Var student_objective(const Var& l_rec, const Var& l_kd, const Var& l_ad,
                      const StudentWeights& w) {
  for (const Var& v : {l_rec, l_kd, l_ad})
    if (!v->val.all_finite()) throw NonFiniteLoss("student objective component not finite");
  Var acc = nn::scale(l_rec, w.rec);
  acc = nn::add(acc, nn::scale(l_kd, w.kd));
  return nn::add(acc, nn::scale(l_ad, w.ad));
}

}  // namespace dsr::distill
