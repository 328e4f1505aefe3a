#include "lecnav/lec.hpp"

#include <string>

namespace lecnav::lec {

TeacherPdf teacher_pdf(const teacher::TeacherKnowledge& knowledge, int ue,
                       env::Coord pos) {
  const auto counts = knowledge.action_counts(ue, pos);
  int total = 0;
  for (int c : counts) total += c;
  TeacherPdf pdf;
  if (total == 0) return pdf;
  pdf.support_hit = true;
  for (int a = 0; a < env::kActionCount; ++a)
    pdf.probs[a] = static_cast<double>(counts[a]) / total;
  return pdf;
}

ad::Tensor kd_term(const ad::Tensor& q_values, const TeacherPdf& pdf,
                   double smoothing_eps) {
  if (smoothing_eps <= 0.0 || smoothing_eps >= 1.0 / env::kActionCount)
    throw ConfigError("kd_term: smoothing_eps outside (0, 1/8)");
  if (!pdf.support_hit) return ad::Tensor::scalar(0.0);
  std::vector<double> teacher(env::kActionCount);
  const double z = 1.0 + env::kActionCount * smoothing_eps;
  for (int a = 0; a < env::kActionCount; ++a)
    teacher[a] = (pdf.probs[a] + smoothing_eps) / z;
  return ad::kld(q_values, teacher);
}

ec::DistillHooks make_hooks(const teacher::TeacherKnowledge& knowledge,
                            const KdConfig& cfg) {
  if (cfg.lambda < 0.0) throw ConfigError("make_hooks: lambda must be non-negative");
  if (cfg.smoothing_eps <= 0.0 || cfg.smoothing_eps >= 1.0 / env::kActionCount)
    throw ConfigError("make_hooks: smoothing_eps outside (0, 1/8)");
  ec::DistillHooks hooks;
  hooks.lambda = cfg.lambda;
  hooks.bonus = cfg.bonus;
  if (cfg.lambda > 0.0) {
    const double eps = cfg.smoothing_eps;
    hooks.kd = [&knowledge, eps](int ue, env::Coord pos, const ad::Tensor& q) {
      const TeacherPdf pdf = teacher_pdf(knowledge, ue, pos);
      if (!pdf.support_hit) return ad::Tensor();
      return kd_term(q, pdf, eps);
    };
  }
  if (cfg.bonus != 0.0) {
    hooks.bonus_hit = [&knowledge](int ue, env::Coord pos) {
      return knowledge.hit(ue, pos);
    };
  }
  return hooks;
}

ad::Tensor lec_loss(const std::vector<ec::EpisodeRecord>& batch,
                    const ad::ParamSet& target, const ec::NetConfig& net,
                    double gamma, double lambda) {
  return ec::batch_loss(batch, target, net, gamma, lambda);
}

ec::TrainResult train_lec(const KdConfig& cfg, const env::GridWorld& world,
                          const chan::LinkBudget& budget,
                          const teacher::TeacherKnowledge& knowledge,
                          const std::function<void(const ec::CurveRow&)>&
                              on_episode) {
  if (knowledge.ues != static_cast<int>(cfg.train.starts.size()))
    throw ConfigError("train_lec: knowledge covers " +
                      std::to_string(knowledge.ues) + " UEs, config has " +
                      std::to_string(cfg.train.starts.size()));
  if (knowledge.width != world.width || knowledge.height != world.height)
    throw ConfigError("train_lec: knowledge grid does not match the world");
  const ec::DistillHooks hooks = make_hooks(knowledge, cfg);
  return ec::train(cfg.train, world, budget, hooks, on_episode);
}

}  // namespace lecnav::lec
