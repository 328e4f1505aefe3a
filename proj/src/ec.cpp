#include "lecnav/ec.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace lecnav::ec {

namespace {

std::string ue_prefix(int ue) { return "ue" + std::to_string(ue) + "."; }

ad::Tensor xavier(Rng& rng, int out, int in) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::vector<double> w(static_cast<size_t>(out) * in);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
  return ad::Tensor::param(std::move(w), {out, in});
}

// Torch-style bias init. A zero bias would let a dead relu layer and the zero
// initial hidden state push an exactly-zero message into the power
// normalization (undefined direction, exploding backward scale).
ad::Tensor bias_init(Rng& rng, int out, int fan_in) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> b(out);
  for (double& v : b) v = (2.0 * rng.uniform() - 1.0) * limit;
  return ad::Tensor::param(std::move(b), {out});
}

void add_linear(ad::ParamSet& p, const std::string& name, int out, int in, Rng& rng) {
  p.add(name + ".w", xavier(rng, out, in));
  p.add(name + ".b", bias_init(rng, out, in));
}

ad::Tensor linear(const ad::ParamSet& p, const std::string& name, const ad::Tensor& x) {
  return ad::add(ad::matmul(p.at(name + ".w"), x), p.at(name + ".b"));
}

ad::GruParams gru_params(const ad::ParamSet& p, const std::string& prefix) {
  return {p.at(prefix + "gru.wz"), p.at(prefix + "gru.bz"),
          p.at(prefix + "gru.wr"), p.at(prefix + "gru.br"),
          p.at(prefix + "gru.wc"), p.at(prefix + "gru.bc")};
}

int argmax_low(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

ad::Tensor zero_msg(int msg_len) {
  return ad::Tensor::constant(std::vector<double>(2 * msg_len, 0.0));
}

double episode_kld_mean(const EpisodeRecord& ep) {
  int steps = 0;
  double sum = 0.0;
  for (const auto& ue : ep.steps) {
    steps += static_cast<int>(ue.size());
    for (const auto& rec : ue)
      if (rec.kd.defined()) sum += rec.kd.item();
  }
  return steps > 0 ? sum / steps : 0.0;
}

}  // namespace

ad::ParamSet init_params(const NetConfig& net, int ues, int width, int height,
                         Rng& rng) {
  if (ues <= 0) throw ConfigError("init_params: need at least one UE");
  if (net.msg_len <= 0 || net.hidden_dim <= 0 || net.enc_width <= 0 ||
      net.bs_hidden <= 0)
    throw ConfigError("init_params: net dimensions must be positive");
  const int obs = env::Observation::encoded_size(width, height, net.dest_delta);
  const int in_dim = obs + 2 * net.msg_len + env::kActionCount;
  ad::ParamSet p;
  for (int j = 0; j < ues; ++j) {
    const std::string pre = ue_prefix(j);
    add_linear(p, pre + "enc1", net.enc_width, in_dim, rng);
    add_linear(p, pre + "enc2", net.enc_width, net.enc_width, rng);
    const int gin = net.enc_width + net.hidden_dim;
    for (const char* gate : {"z", "r", "c"}) {
      p.add(pre + "gru.w" + gate, xavier(rng, net.hidden_dim, gin));
      p.add(pre + "gru.b" + gate, bias_init(rng, net.hidden_dim, gin));
    }
    add_linear(p, pre + "q", env::kActionCount, net.hidden_dim, rng);
    add_linear(p, pre + "msg", 2 * net.msg_len, net.hidden_dim, rng);
  }
  add_linear(p, "bs.h", net.bs_hidden, ues * 2 * net.msg_len, rng);
  add_linear(p, "bs.out", 2 * net.msg_len, net.bs_hidden, rng);
  return p;
}

CnetOut cnet_forward(const ad::ParamSet& params, int ue, const NetConfig& net,
                     const std::vector<double>& obs_enc, const ad::Tensor& hidden,
                     const ad::Tensor& dl_msg, int prev_action) {
  const std::string pre = ue_prefix(ue);
  const int in_dim = params.at(pre + "enc1.w").shape()[1];
  const int obs_dim = in_dim - 2 * net.msg_len - env::kActionCount;
  if (static_cast<int>(obs_enc.size()) != obs_dim)
    throw ConfigError("cnet_forward: observation size " +
                      std::to_string(obs_enc.size()) + ", net expects " +
                      std::to_string(obs_dim));
  if (hidden.size() != net.hidden_dim || dl_msg.size() != 2 * net.msg_len)
    throw ConfigError("cnet_forward: hidden or downlink size mismatch");
  if (prev_action < -1 || prev_action >= env::kActionCount)
    throw ConfigError("cnet_forward: bad previous action");

  std::vector<double> onehot(env::kActionCount, 0.0);
  if (prev_action >= 0) onehot[prev_action] = 1.0;
  const ad::Tensor x = ad::concat(
      {ad::Tensor::constant(obs_enc), dl_msg, ad::Tensor::constant(onehot)});
  const ad::Tensor e1 = ad::relu(linear(params, pre + "enc1", x));
  const ad::Tensor e2 = ad::relu(linear(params, pre + "enc2", e1));
  const ad::Tensor h = ad::gru_cell(e2, hidden, gru_params(params, pre));
  CnetOut out;
  out.q = linear(params, pre + "q", h);
  out.ul = ad::scale_to_norm(linear(params, pre + "msg", h),
                             std::sqrt(static_cast<double>(net.msg_len)));
  out.hidden = h;
  return out;
}

ad::Tensor bs_forward(const ad::ParamSet& params, const NetConfig& net,
                      const std::vector<ad::Tensor>& ul_received) {
  const int slots = params.at("bs.h.w").shape()[1] / (2 * net.msg_len);
  if (static_cast<int>(ul_received.size()) != slots)
    throw ConfigError("bs_forward: expected " + std::to_string(slots) +
                      " uplink slots, got " + std::to_string(ul_received.size()));
  for (const auto& m : ul_received)
    if (m.size() != 2 * net.msg_len)
      throw ConfigError("bs_forward: uplink message size mismatch");
  const ad::Tensor x = ad::concat(ul_received);
  return linear(params, "bs.out", ad::relu(linear(params, "bs.h", x)));
}

EpisodeRecord rollout_episode(const env::GridWorld& world,
                              const ad::ParamSet& params, const TrainConfig& cfg,
                              const chan::LinkBudget& budget, double eps,
                              bool train_mode, Rng& rng,
                              const DistillHooks& hooks) {
  if (eps < 0.0 || eps > 1.0) throw ConfigError("rollout_episode: eps outside [0,1]");
  std::optional<ad::NoGradGuard> guard;
  if (!train_mode) guard.emplace();

  const NetConfig& net = cfg.net;
  const double eta = budget.eta();
  const double noise_std = chan::symbol_noise_std(budget);
  const bool noisy = train_mode ? cfg.train_noise : true;
  const bool bonus_on = static_cast<bool>(hooks.bonus_hit) && hooks.bonus != 0.0;
  const bool kd_on = train_mode && static_cast<bool>(hooks.kd) && hooks.lambda > 0.0;

  auto agents = env::reset(world, cfg.starts, cfg.dests);
  const int ues = static_cast<int>(agents.size());

  EpisodeRecord ep;
  ep.steps.resize(ues);
  ep.returns.assign(ues, 0.0);

  std::vector<ad::Tensor> hidden(ues);
  for (auto& h : hidden) h = ad::Tensor::zeros({net.hidden_dim});
  ad::Tensor dl = zero_msg(net.msg_len);
  std::vector<int> prev(ues, -1);

  for (int t = 0; t < cfg.t_max; ++t) {
    bool any_live = false;
    for (const auto& a : agents) any_live |= !a.done;
    if (!any_live) break;

    std::vector<ad::Tensor> uls(ues);
    std::vector<env::Action> actions(ues, env::Action::North);
    std::vector<int> live_ids;
    for (int j = 0; j < ues; ++j) {
      if (agents[j].done) {
        uls[j] = zero_msg(net.msg_len);
        continue;
      }
      const auto obs = env::observe(world, agents, j, eta);
      std::vector<double> enc = obs.encode(net.dest_delta);
      const CnetOut out = cnet_forward(params, j, net, enc, hidden[j], dl, prev[j]);
      hidden[j] = out.hidden;

      bool explored = false;
      if (eps > 0.0) explored = rng.uniform() < eps;
      const int action =
          explored ? rng.uniform_int(env::kActionCount) : argmax_low(out.q.data());

      std::vector<double> noise;
      if (noisy) {
        noise.resize(2 * static_cast<size_t>(net.msg_len));
        for (double& v : noise) v = noise_std * rng.normal();
        uls[j] = ad::add(out.ul, ad::Tensor::constant(noise));
      } else {
        uls[j] = out.ul;
      }

      StepRecord rec;
      rec.from = agents[j].pos;
      rec.action = static_cast<env::Action>(action);
      rec.prev_action = prev[j];
      rec.explored = explored;
      rec.q = out.q;
      if (train_mode) {
        rec.obs_enc = std::move(enc);
        rec.ul_noise = std::move(noise);
      }
      if (kd_on) rec.kd = hooks.kd(j, rec.from, out.q);
      ep.steps[j].push_back(std::move(rec));
      live_ids.push_back(j);
      actions[j] = static_cast<env::Action>(action);
      prev[j] = action;
    }

    const ad::Tensor dl_next = bs_forward(params, net, uls);
    const std::vector<bool> valid = env::step(world, agents, actions);
    for (const int j : live_ids) {
      StepRecord& rec = ep.steps[j].back();
      rec.valid = valid[static_cast<size_t>(j)];
      rec.to = agents[j].pos;
      rec.weak = chan::is_weak(world.gain_at(rec.to), eta);
      const bool hit = bonus_on && hooks.bonus_hit(j, rec.to);
      rec.reward = env::reward(agents[j], rec.valid, rec.weak, hit, bonus_on,
                               hooks.bonus);
      ep.returns[j] += rec.reward;
    }
    dl = dl_next;
  }

  ep.arrived.resize(ues);
  for (int j = 0; j < ues; ++j) ep.arrived[j] = agents[j].done;
  for (double r : ep.returns) ep.mean_return += r;
  ep.mean_return /= ues;
  return ep;
}

std::vector<TdItem> dqn_targets(const EpisodeRecord& ep, const ad::ParamSet& target,
                                const NetConfig& net, double gamma) {
  const int ues = static_cast<int>(ep.steps.size());
  int max_t = 0;
  for (const auto& ue : ep.steps) {
    max_t = std::max(max_t, static_cast<int>(ue.size()));
    for (const auto& rec : ue)
      if (rec.obs_enc.empty())
        throw ConfigError("dqn_targets: episode was not recorded in train mode");
  }

  // Target-net q-values, rebuilt over the recorded episode: same observations,
  // previous actions, and channel noise, so only the parameters differ.
  std::vector<std::vector<std::vector<double>>> qv(ues);
  {
    ad::NoGradGuard guard;
    std::vector<ad::Tensor> hidden(ues);
    for (auto& h : hidden) h = ad::Tensor::zeros({net.hidden_dim});
    ad::Tensor dl = zero_msg(net.msg_len);
    for (int t = 0; t < max_t; ++t) {
      std::vector<ad::Tensor> uls(ues);
      for (int j = 0; j < ues; ++j) {
        if (t >= static_cast<int>(ep.steps[j].size())) {
          uls[j] = zero_msg(net.msg_len);
          continue;
        }
        const StepRecord& rec = ep.steps[j][t];
        const CnetOut out =
            cnet_forward(target, j, net, rec.obs_enc, hidden[j], dl, rec.prev_action);
        hidden[j] = out.hidden;
        qv[j].push_back(out.q.data());
        uls[j] = rec.ul_noise.empty()
                     ? out.ul
                     : ad::add(out.ul, ad::Tensor::constant(rec.ul_noise));
      }
      dl = bs_forward(target, net, uls);
    }
  }

  std::vector<TdItem> items;
  for (int j = 0; j < ues; ++j) {
    const auto& steps = ep.steps[j];
    for (size_t t = 0; t < steps.size(); ++t) {
      TdItem item;
      item.q = steps[t].q;
      item.action = static_cast<int>(steps[t].action);
      item.y = steps[t].reward;
      if (t + 1 < steps.size())
        item.y += gamma * *std::max_element(qv[j][t + 1].begin(), qv[j][t + 1].end());
      items.push_back(std::move(item));
    }
  }
  return items;
}

ad::Tensor td_loss_sum(const std::vector<TdItem>& items) {
  ad::Tensor loss;
  for (const auto& item : items) {
    const ad::Tensor err =
        ad::square(ad::sub(ad::Tensor::scalar(item.y), ad::slice(item.q, item.action, 1)));
    loss = loss.defined() ? ad::add(loss, err) : err;
  }
  return loss.defined() ? loss : ad::Tensor::scalar(0.0);
}

ad::Tensor batch_loss(const std::vector<EpisodeRecord>& batch,
                      const ad::ParamSet& target, const NetConfig& net,
                      double gamma, double lambda) {
  std::vector<TdItem> items;
  for (const auto& ep : batch) {
    auto ep_items = dqn_targets(ep, target, net, gamma);
    items.insert(items.end(), std::make_move_iterator(ep_items.begin()),
                 std::make_move_iterator(ep_items.end()));
  }
  ad::Tensor loss = td_loss_sum(items);
  if (lambda > 0.0) {
    ad::Tensor kd;
    for (const auto& ep : batch)
      for (const auto& ue : ep.steps)
        for (const auto& rec : ue)
          if (rec.kd.defined()) kd = kd.defined() ? ad::add(kd, rec.kd) : rec.kd;
    if (kd.defined()) loss = ad::add(loss, ad::scale(kd, lambda));
  }
  return loss;
}

TrainResult train(const TrainConfig& cfg, const env::GridWorld& world,
                  const chan::LinkBudget& budget, const DistillHooks& hooks,
                  const std::function<void(const CurveRow&)>& on_episode) {
  if (cfg.starts.empty() || cfg.starts.size() != cfg.dests.size())
    throw ConfigError("train: starts and dests must be non-empty and match");
  if (cfg.eps0 < 0.0 || cfg.eps0 > 1.0) throw ConfigError("train: eps0 outside [0,1]");
  if (cfg.eps_decay <= 0.0 || cfg.eps_decay > 1.0)
    throw ConfigError("train: eps_decay outside (0,1]");
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0) throw ConfigError("train: gamma outside [0,1]");
  if (cfg.lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (cfg.episodes < 0 || cfg.batch_episodes <= 0 || cfg.t_max <= 0 ||
      cfg.target_sync_interval <= 0)
    throw ConfigError("train: episode, batch, t_max and sync counts must be positive");
  if (hooks.lambda < 0.0) throw ConfigError("train: lambda must be non-negative");

  Rng rng(cfg.seed);
  const int ues = static_cast<int>(cfg.starts.size());
  TrainResult res{init_params(cfg.net, ues, world.width, world.height, rng), {}};
  ad::ParamSet target = res.params.clone();

  double eps = cfg.eps0;
  int done = 0;
  int synced = 0;
  while (done < cfg.episodes) {
    const int n = std::min(cfg.batch_episodes, cfg.episodes - done);
    std::vector<EpisodeRecord> batch;
    batch.reserve(n);
    for (int i = 0; i < n; ++i)
      batch.push_back(
          rollout_episode(world, res.params, cfg, budget, eps, true, rng, hooks));

    const ad::Tensor loss =
        batch_loss(batch, target, cfg.net, cfg.gamma, hooks.lambda);
    const double loss_value = loss.item();
    for (const auto& ep : batch)
      if (!std::isfinite(ep.mean_return))
        throw TrainError("train: non-finite return near episode " +
                         std::to_string(done));
    if (!std::isfinite(loss_value))
      throw TrainError("train: non-finite loss at episode " + std::to_string(done));

    res.params.zero_grad();
    ad::backward(loss);
    ad::adam_step(res.params, cfg.lr);

    for (int i = 0; i < n; ++i) {
      CurveRow row{done + i, batch[i].mean_return, eps, loss_value,
                   episode_kld_mean(batch[i])};
      if (on_episode) on_episode(row);
      res.curve.push_back(row);
    }
    done += n;
    eps *= cfg.eps_decay;
    if (done / cfg.target_sync_interval > synced) {
      synced = done / cfg.target_sync_interval;
      target.copy_values_from(res.params);
    }
  }
  return res;
}

std::vector<EpisodeRecord> evaluate(const ad::ParamSet& params,
                                    const TrainConfig& cfg,
                                    const env::GridWorld& world,
                                    const chan::LinkBudget& budget, int episodes,
                                    Rng& rng) {
  if (episodes < 0) throw ConfigError("evaluate: negative episode count");
  std::vector<EpisodeRecord> out;
  out.reserve(episodes);
  for (int i = 0; i < episodes; ++i)
    out.push_back(rollout_episode(world, params, cfg, budget, 0.0, false, rng));
  return out;
}

}  // namespace lecnav::ec
