#pragma once

// Distillation of teacher trajectories into the EC learner: per-cell teacher
// action distributions, a smoothed KLD imitation term on the q-values, a
// reward bonus on teacher-visited cells, and the wrapped training loop.

#include <array>
#include <functional>
#include <vector>

#include "lecnav/autodiff.hpp"
#include "lecnav/common.hpp"
#include "lecnav/ec.hpp"
#include "lecnav/env.hpp"
#include "lecnav/teacher.hpp"

namespace lecnav::lec {

struct TeacherPdf {
  std::array<double, env::kActionCount> probs{};
  bool support_hit = false;  // the cell carries at least one recorded action
};

struct KdConfig {
  ec::TrainConfig train;
  double lambda = 1.0;         // KLD weight in the loss
  double smoothing_eps = 1e-3; // teacher-pdf floor, must sit in (0, 1/8)
  double bonus = env::kTeacherBonus;
};

// Empirical action distribution at `pos` over the UE's selected trajectories:
// prob(a) = (occurrences of pos acting a) / (all occurrences of pos with a
// recorded action). Cells that only appear as trajectory endpoints carry no
// action and yield support_hit=false, like cells off the trajectories.
TeacherPdf teacher_pdf(const teacher::TeacherKnowledge& knowledge, int ue,
                       env::Coord pos);

// D( softmax(q_values) || (pdf + eps)/(1 + 8*eps) ), or a constant zero when
// the cell has no teacher support.
ad::Tensor kd_term(const ad::Tensor& q_values, const TeacherPdf& pdf,
                   double smoothing_eps);

// Hooks that plug the knowledge into the EC loop. The knowledge is captured
// by reference and must outlive the returned hooks. lambda == 0 leaves the
// kd hook unset and bonus == 0 leaves the bonus hook unset, so the loop stays
// bit-identical to plain EC.
ec::DistillHooks make_hooks(const teacher::TeacherKnowledge& knowledge,
                            const KdConfig& cfg);

// Combined loss over a batch rolled out with the hooks above: the deep-Q term
// on the shaped rewards plus lambda times the recorded imitation terms.
ad::Tensor lec_loss(const std::vector<ec::EpisodeRecord>& batch,
                    const ad::ParamSet& target, const ec::NetConfig& net,
                    double gamma, double lambda);

// EC training loop with distillation hooks installed.
ec::TrainResult train_lec(const KdConfig& cfg, const env::GridWorld& world,
                          const chan::LinkBudget& budget,
                          const teacher::TeacherKnowledge& knowledge,
                          const std::function<void(const ec::CurveRow&)>&
                              on_episode = {});

}  // namespace lecnav::lec
