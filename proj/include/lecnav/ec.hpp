#pragma once

// Emergent-communication training: per-UE recurrent Q-networks that also emit
// uplink symbol messages, a base-station net that fuses them into a broadcast
// downlink, and the episode-batched deep-Q loop. Distillation plugs in through
// DistillHooks; with default hooks this is the plain EC baseline.

#include <functional>
#include <vector>

#include "lecnav/autodiff.hpp"
#include "lecnav/channel.hpp"
#include "lecnav/common.hpp"
#include "lecnav/env.hpp"

namespace lecnav::ec {

struct NetConfig {
  int msg_len = 8;      // complex symbols per message
  int hidden_dim = 64;  // recurrent state
  int enc_width = 128;  // two-layer encoder width
  int bs_hidden = 128;
  bool dest_delta = true;  // append normalized destination offset to the input
};

struct TrainConfig {
  NetConfig net;
  std::vector<env::Coord> starts;
  std::vector<env::Coord> dests;
  int episodes = 10000;
  int batch_episodes = 32;
  int target_sync_interval = 100;  // episodes between hard target syncs
  int t_max = 50;
  double lr = 1e-4;
  double gamma = 1.0;
  double eps0 = 0.05;
  double eps_decay = 0.999;  // applied once per batch
  bool train_noise = true;   // corrupt uplink messages during training rollouts
  uint64_t seed = 1;
};

// Optional distillation plumbing. `kd` returns the imitation penalty for a UE
// standing at `pos` with online q-values `q`, or an undefined tensor when the
// teacher has nothing for that cell. `bonus_hit` marks cells on the UE's own
// teacher paths; each hit adds `bonus` to the step reward. Unset hooks (or
// lambda == 0 / bonus == 0) leave the EC loop bit-identical to the baseline.
struct DistillHooks {
  std::function<ad::Tensor(int ue, env::Coord pos, const ad::Tensor& q)> kd;
  double lambda = 0.0;
  std::function<bool(int ue, env::Coord pos)> bonus_hit;
  double bonus = 0.0;
};

// Xavier-uniform weights, uniform(+-1/sqrt(fan_in)) biases, for `ues` CNets
// plus the BS net. Parameter names: ue<j>.{enc1,enc2}.{w,b},
// ue<j>.gru.{wz,bz,wr,br,wc,bc}, ue<j>.{q,msg}.{w,b}, bs.{h,out}.{w,b}.
ad::ParamSet init_params(const NetConfig& net, int ues, int width, int height,
                         Rng& rng);

struct CnetOut {
  ad::Tensor q;       // {8}
  ad::Tensor hidden;  // {hidden_dim}
  ad::Tensor ul;      // {2*msg_len}, L2 norm sqrt(msg_len) (unit symbol power)
};

// One CNet step: encode [obs, downlink, previous-action one-hot], advance the
// recurrent state, read out q-values and the normalized uplink message.
// prev_action -1 means none (zero one-hot).
CnetOut cnet_forward(const ad::ParamSet& params, int ue, const NetConfig& net,
                     const std::vector<double>& obs_enc, const ad::Tensor& hidden,
                     const ad::Tensor& dl_msg, int prev_action);

// Fuses per-UE received uplinks (zero vectors for silent UEs) into the
// broadcast downlink for the next step.
ad::Tensor bs_forward(const ad::ParamSet& params, const NetConfig& net,
                      const std::vector<ad::Tensor>& ul_received);

struct StepRecord {
  env::Coord from;
  env::Coord to;
  env::Action action = env::Action::North;
  int prev_action = -1;
  double reward = 0.0;
  bool valid = false;
  bool weak = false;
  bool explored = false;
  std::vector<double> obs_enc;   // kept in train mode for the target replay
  std::vector<double> ul_noise;  // recorded channel noise, train mode
  ad::Tensor q;                  // online q-values (graph retained in train mode)
  ad::Tensor kd;                 // imitation term, defined only when hooked
};

struct EpisodeRecord {
  std::vector<std::vector<StepRecord>> steps;  // [ue][t], live steps only
  std::vector<bool> arrived;
  std::vector<double> returns;  // per-UE reward sums
  double mean_return = 0.0;

  int t_used(int ue) const { return static_cast<int>(steps[ue].size()); }
};

// Runs one episode. Per step every live UE observes, runs its CNet, picks an
// eps-greedy action (greedy ties to the lowest index), and transmits its
// uplink through the inversion-controlled channel; the BS net then produces
// the next downlink. In train mode the noise is injected as an additive
// constant so gradients flow through messages, the BS hop, and the recurrent
// state; obs encodings and noise draws are recorded for the target replay.
// Eval mode (train_mode=false) records no graph; the channel stays noisy.
EpisodeRecord rollout_episode(const env::GridWorld& world,
                              const ad::ParamSet& params, const TrainConfig& cfg,
                              const chan::LinkBudget& budget, double eps,
                              bool train_mode, Rng& rng,
                              const DistillHooks& hooks = {});

struct TdItem {
  ad::Tensor q;  // online q-values at the step
  int action = 0;
  double y = 0.0;  // bootstrap target
};

// Replays an episode through the target params (same obs, actions, and noise)
// and emits one TdItem per recorded step: y = r + gamma*max_a q'(next), or r
// alone on the last recorded step (arrival or truncation).
std::vector<TdItem> dqn_targets(const EpisodeRecord& ep, const ad::ParamSet& target,
                                const NetConfig& net, double gamma);

// Sum over items of (y - q[action])^2.
ad::Tensor td_loss_sum(const std::vector<TdItem>& items);

// Deep-Q loss over a batch: sum of squared TD errors across episodes, UEs and
// steps, plus lambda times the recorded imitation terms when lambda > 0.
ad::Tensor batch_loss(const std::vector<EpisodeRecord>& batch,
                      const ad::ParamSet& target, const NetConfig& net,
                      double gamma, double lambda);

struct CurveRow {
  int episode = 0;
  double mean_return = 0.0;
  double epsilon = 0.0;
  double loss = 0.0;      // batch loss at the iteration covering this episode
  double kld_mean = 0.0;  // mean imitation term per step, 0 without hooks
};

struct TrainResult {
  ad::ParamSet params;
  std::vector<CurveRow> curve;
};

// Episode-batched training: collect batch_episodes rollouts at the current
// eps, minimize batch_loss with Adam, decay eps once per batch, and hard-sync
// the target params every target_sync_interval episodes. Throws TrainError on
// a non-finite loss or return. `on_episode` (optional) streams curve rows.
TrainResult train(const TrainConfig& cfg, const env::GridWorld& world,
                  const chan::LinkBudget& budget, const DistillHooks& hooks = {},
                  const std::function<void(const CurveRow&)>& on_episode = {});

// Greedy (eps=0) rollouts of a frozen policy over the still-noisy channel.
std::vector<EpisodeRecord> evaluate(const ad::ParamSet& params,
                                    const TrainConfig& cfg,
                                    const env::GridWorld& world,
                                    const chan::LinkBudget& budget, int episodes,
                                    Rng& rng);

}  // namespace lecnav::ec
