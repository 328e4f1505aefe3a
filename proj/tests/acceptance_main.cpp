// Acceptance gate: eight end-to-end checks over the gradient engine, the link
// layer, the teacher pipeline, training identities, the metric arithmetic,
// and the guided-versus-baseline study. Prints one [PASS]/[FAIL] line per
// check and exits nonzero if any fails. Optional argv indices select a
// subset, e.g. `acceptance 6 7`.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "lecnav/autodiff.hpp"
#include "lecnav/channel.hpp"
#include "lecnav/common.hpp"
#include "lecnav/ec.hpp"
#include "lecnav/env.hpp"
#include "lecnav/lec.hpp"
#include "lecnav/metrics.hpp"
#include "lecnav/teacher.hpp"

using namespace lecnav;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

std::string num(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// --- 1. gradient engine -------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kFdStep = 1e-5;

struct OpCase {
  const char* name;
  // builds one random instance and returns its worst relative gradient error
  std::function<double(Rng&)> run;
};

ad::Tensor rand_param(Rng& rng, int n) {
  return ad::Tensor::param(fd::rand_vec(rng, n), {n});
}

std::vector<OpCase> op_cases() {
  using ad::Tensor;
  std::vector<OpCase> ops;
  auto unary = [](const char* name, std::function<ad::Tensor(const ad::Tensor&)> op) {
    return OpCase{name, [op](Rng& rng) {
                    Tensor x = rand_param(rng, 6);
                    Tensor w = Tensor::constant(fd::rand_vec(rng, 6));
                    auto f = [&] { return ad::sum(ad::mul(op(x), w)); };
                    return fd::max_rel_err({x}, f, kFdStep);
                  }};
  };
  ops.push_back({"add", [](Rng& rng) {
                   Tensor a = rand_param(rng, 5), b = rand_param(rng, 5);
                   auto f = [&] { return ad::sum(ad::square(ad::add(a, b))); };
                   return fd::max_rel_err({a, b}, f, kFdStep);
                 }});
  ops.push_back({"sub", [](Rng& rng) {
                   Tensor a = rand_param(rng, 5), b = rand_param(rng, 5);
                   auto f = [&] { return ad::sum(ad::square(ad::sub(a, b))); };
                   return fd::max_rel_err({a, b}, f, kFdStep);
                 }});
  ops.push_back({"mul", [](Rng& rng) {
                   Tensor a = rand_param(rng, 5), b = rand_param(rng, 5);
                   auto f = [&] { return ad::sum(ad::mul(a, b)); };
                   return fd::max_rel_err({a, b}, f, kFdStep);
                 }});
  ops.push_back({"scale", [](Rng& rng) {
                   Tensor a = rand_param(rng, 5);
                   auto f = [&] { return ad::sum(ad::scale(a, -1.7)); };
                   return fd::max_rel_err({a}, f, kFdStep);
                 }});
  ops.push_back({"matmul_vec", [](Rng& rng) {
                   Tensor w = ad::Tensor::param(fd::rand_vec(rng, 12), {3, 4});
                   Tensor x = rand_param(rng, 4);
                   auto f = [&] { return ad::sum(ad::square(ad::matmul(w, x))); };
                   return fd::max_rel_err({w, x}, f, kFdStep);
                 }});
  ops.push_back({"matmul_mat", [](Rng& rng) {
                   Tensor a = ad::Tensor::param(fd::rand_vec(rng, 6), {2, 3});
                   Tensor b = ad::Tensor::param(fd::rand_vec(rng, 12), {3, 4});
                   auto f = [&] { return ad::sum(ad::square(ad::matmul(a, b))); };
                   return fd::max_rel_err({a, b}, f, kFdStep);
                 }});
  ops.push_back(unary("tanh", [](const Tensor& x) { return ad::tanh(x); }));
  ops.push_back(unary("relu", [](const Tensor& x) { return ad::relu(x); }));
  ops.push_back(unary("sigmoid", [](const Tensor& x) { return ad::sigmoid(x); }));
  ops.push_back(unary("softmax", [](const Tensor& x) { return ad::softmax(x); }));
  ops.push_back({"concat", [](Rng& rng) {
                   Tensor a = rand_param(rng, 3), b = rand_param(rng, 4);
                   Tensor w = Tensor::constant(fd::rand_vec(rng, 7));
                   auto f = [&] { return ad::sum(ad::mul(ad::concat({a, b}), w)); };
                   return fd::max_rel_err({a, b}, f, kFdStep);
                 }});
  ops.push_back({"slice", [](Rng& rng) {
                   Tensor a = rand_param(rng, 8);
                   auto f = [&] { return ad::sum(ad::square(ad::slice(a, 2, 4))); };
                   return fd::max_rel_err({a}, f, kFdStep);
                 }});
  ops.push_back({"sum", [](Rng& rng) {
                   Tensor a = rand_param(rng, 6);
                   auto f = [&] { return ad::sum(ad::mul(a, a)); };
                   return fd::max_rel_err({a}, f, kFdStep);
                 }});
  ops.push_back({"mean", [](Rng& rng) {
                   Tensor a = rand_param(rng, 6);
                   auto f = [&] { return ad::mean(ad::square(a)); };
                   return fd::max_rel_err({a}, f, kFdStep);
                 }});
  ops.push_back({"square", [](Rng& rng) {
                   Tensor a = rand_param(rng, 6);
                   auto f = [&] { return ad::sum(ad::square(a)); };
                   return fd::max_rel_err({a}, f, kFdStep);
                 }});
  ops.push_back({"scale_to_norm", [](Rng& rng) {
                   Tensor a = rand_param(rng, 6);
                   Tensor w = ad::Tensor::constant(fd::rand_vec(rng, 6));
                   auto f = [&] {
                     return ad::sum(ad::mul(ad::scale_to_norm(a, 2.0), w));
                   };
                   return fd::max_rel_err({a}, f, kFdStep);
                 }});
  ops.push_back({"kld", [](Rng& rng) {
                   Tensor logits = rand_param(rng, 8);
                   const std::vector<double> q = fd::rand_probs(rng, 8);
                   auto f = [&] { return ad::kld(logits, q); };
                   return fd::max_rel_err({logits}, f, kFdStep);
                 }});
  ops.push_back({"gru_cell", [](Rng& rng) {
                   const int in = 5, hid = 4;
                   ad::GruParams g;
                   g.wz = ad::Tensor::param(fd::rand_vec(rng, hid * (in + hid)), {hid, in + hid});
                   g.bz = rand_param(rng, hid);
                   g.wr = ad::Tensor::param(fd::rand_vec(rng, hid * (in + hid)), {hid, in + hid});
                   g.br = rand_param(rng, hid);
                   g.wc = ad::Tensor::param(fd::rand_vec(rng, hid * (in + hid)), {hid, in + hid});
                   g.bc = rand_param(rng, hid);
                   ad::Tensor x = rand_param(rng, in);
                   ad::Tensor h = rand_param(rng, hid);
                   auto f = [&] { return ad::sum(ad::square(ad::gru_cell(x, h, g))); };
                   return fd::max_rel_err({g.wz, g.bz, g.wr, g.br, g.wc, g.bc, x, h},
                                          f, kFdStep);
                 }});
  return ops;
}

double composite_fd(uint64_t seed) {
  ec::NetConfig net;
  net.msg_len = 2;
  net.hidden_dim = 4;
  net.enc_width = 6;
  net.bs_hidden = 5;
  const int obs_dim = env::Observation::encoded_size(4, 4, true);
  chan::LinkBudget budget{1.0, 0.02, 100.0};
  const double noise_std = chan::symbol_noise_std(budget);

  Rng rng(seed);
  ad::ParamSet p = ec::init_params(net, 2, 4, 4, rng);
  std::vector<std::vector<double>> obs0, obs1, noise;
  for (int j = 0; j < 2; ++j) {
    obs0.push_back(fd::rand_vec(rng, obs_dim));
    obs1.push_back(fd::rand_vec(rng, obs_dim));
    std::vector<double> n(2 * net.msg_len);
    for (double& v : n) v = noise_std * rng.normal();
    noise.push_back(n);
  }
  auto f = [&]() {
    std::vector<ad::Tensor> hidden{ad::Tensor::zeros({net.hidden_dim}),
                                   ad::Tensor::zeros({net.hidden_dim})};
    ad::Tensor dl = ad::Tensor::constant(std::vector<double>(2 * net.msg_len, 0.0));
    ad::Tensor score;
    for (int t = 0; t < 2; ++t) {
      std::vector<ad::Tensor> uls(2);
      for (int j = 0; j < 2; ++j) {
        const auto out = ec::cnet_forward(p, j, net, t == 0 ? obs0[j] : obs1[j],
                                          hidden[j], dl, t == 0 ? -1 : j);
        hidden[j] = out.hidden;
        uls[j] = ad::add(out.ul, ad::Tensor::constant(noise[j]));
        const auto part = ad::sum(out.q);
        score = score.defined() ? ad::add(score, part) : part;
      }
      dl = ec::bs_forward(p, net, uls);
    }
    return ad::add(score, ad::sum(dl));
  };
  std::vector<ad::Tensor> all;
  for (const std::string& name : p.names()) all.push_back(p.at(name));
  return fd::max_rel_err(all, f, kFdStep);
}

Outcome check_gradients() {
  Timer timer;
  double worst = 0.0;
  int instances = 0;
  for (const OpCase& op : op_cases()) {
    for (uint64_t seed = 1; seed <= 6; ++seed) {
      Rng rng(seed * 101 + instances);
      const double err = op.run(rng);
      worst = std::max(worst, err);
      ++instances;
      if (err >= kGradTol)
        return {false, std::string(op.name) + " rel err " + num(err) + " at seed " +
                           std::to_string(seed)};
    }
  }
  int composites = 0;
  for (uint64_t seed : {31u, 32u, 33u, 34u}) {
    const double err = composite_fd(seed);
    worst = std::max(worst, err);
    ++composites;
    if (err >= kGradTol)
      return {false, "composite rel err " + num(err) + " at seed " + std::to_string(seed)};
  }
  std::ostringstream d;
  d << instances << " op + " << composites << " composite instances, max rel err "
    << num(worst) << " (tol " << num(kGradTol) << "), " << num(timer.s()) << "s";
  return {true, d.str()};
}

// --- 2. link layer --------------------------------------------------------

double q_func(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double qam16_ser_closed(double snr_db) {
  const double n0 = std::pow(10.0, -snr_db / 10.0);
  const double p_axis = 1.5 * q_func(std::sqrt(1.0 / (5.0 * n0)));
  return 1.0 - (1.0 - p_axis) * (1.0 - p_axis);
}

Outcome check_link() {
  Timer timer;
  std::ostringstream d;

  Rng rng(20260817);
  const int symbols = 1000000;
  for (double snr_db : {10.0, 14.0, 18.0}) {
    const double sigma = std::sqrt(std::pow(10.0, -snr_db / 10.0) / 2.0);
    int errors = 0;
    for (int i = 0; i < symbols; ++i) {
      const int n = static_cast<int>(rng.uniform_int(16));
      std::complex<double> p = chan::qam16_point(n);
      p += std::complex<double>(sigma * rng.normal(), sigma * rng.normal());
      if (chan::qam16_demap(p) != n) ++errors;
    }
    const double ser = static_cast<double>(errors) / symbols;
    const double want = qam16_ser_closed(snr_db);
    const double rel = std::abs(ser - want) / want;
    if (rel >= 0.10)
      return {false, "16QAM SER at " + num(snr_db) + " dB: measured " + num(ser) +
                         " vs closed form " + num(want) + " (rel " + num(rel) + ")"};
    d << "SER@" << snr_db << "dB rel " << num(rel) << "; ";
  }

  // inversion-controlled uplink: empirical SNR within 1% of p_r / sigma2
  const chan::LinkBudget budget{2.0, 0.25, 64.0};
  chan::SymbolMessage msg;
  msg.symbols.resize(1000);
  double signal = 0.0, noise = 0.0;
  for (int round = 0; round < 1000; ++round) {
    for (auto& s : msg.symbols) {
      const double phase = 2.0 * M_PI * rng.uniform();
      s = {std::cos(phase), std::sin(phase)};  // unit power, random phase
    }
    const chan::SymbolMessage got = chan::transmit_symbols(msg, budget, rng);
    for (size_t i = 0; i < msg.symbols.size(); ++i) {
      signal += std::norm(msg.symbols[i]);
      noise += std::norm(got.symbols[i] - msg.symbols[i]);
    }
  }
  const double snr_emp = signal / noise;
  const double snr_want = budget.snr();
  const double snr_rel = std::abs(snr_emp - snr_want) / snr_want;
  if (snr_rel >= 0.01)
    return {false, "uplink empirical SNR " + num(snr_emp) + " vs " + num(snr_want) +
                       " (rel " + num(snr_rel) + ")"};
  d << "uplink SNR rel " << num(snr_rel) << "; ";

  // received power is the target regardless of the cell gain
  double worst_gap = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double gain = std::exp(rng.normal() * 4.0);
    const double p_rx = chan::tx_power(gain, budget) * gain;
    worst_gap = std::max(worst_gap, std::abs(p_rx - budget.p_r));
  }
  if (worst_gap > 1e-12 * budget.p_r)
    return {false, "inversion received power drifts by " + num(worst_gap)};
  d << "inversion gap " << num(worst_gap) << ", " << num(timer.s()) << "s";
  return {true, d.str()};
}

// --- 3. teacher pipeline ----------------------------------------------------

teacher::Trajectory random_traj(Rng& rng, int grid) {
  teacher::Trajectory t;
  t.ue = static_cast<int>(rng.uniform_int(3));
  env::Coord pos{static_cast<int>(rng.uniform_int(grid)),
                 static_cast<int>(rng.uniform_int(grid))};
  const int moves = static_cast<int>(rng.uniform_int(31));
  for (int i = 0; i < moves; ++i) {
    const auto a = static_cast<env::Action>(rng.uniform_int(env::kActionCount));
    t.pairs.push_back({pos, a});
    const env::Coord d = env::action_delta(a, 1);
    env::Coord next{pos.x + d.x, pos.y + d.y};
    if (next.x >= 0 && next.y >= 0 && next.x < grid && next.y < grid) pos = next;
    // out-of-grid moves bounce: the pair stays recorded with no displacement
  }
  t.final = pos;
  return t;
}

Outcome check_teacher() {
  Timer timer;

  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const teacher::Trajectory t = random_traj(rng, 12);
    const teacher::Trajectory r = teacher::refine(t);
    if (!(teacher::refine(r) == r))
      return {false, "refine is not idempotent on trajectory " + std::to_string(i)};
    std::vector<env::Coord> cells;
    for (const auto& p : r.pairs) cells.push_back(p.z);
    cells.push_back(r.final);
    for (size_t a = 0; a < cells.size(); ++a)
      for (size_t b = a + 1; b < cells.size(); ++b)
        if (cells[a] == cells[b])
          return {false, "refined trajectory " + std::to_string(i) + " revisits a cell"};
    if (!(r.final == t.final))
      return {false, "refine moved the endpoint of trajectory " + std::to_string(i)};
    if (!t.pairs.empty() && !r.pairs.empty() && !(r.pairs.front().z == t.pairs.front().z))
      return {false, "refine moved the start of trajectory " + std::to_string(i)};
  }

  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(50));
    std::vector<double> costs;
    for (int i = 0; i < n; ++i)
      costs.push_back(0.5 * static_cast<double>(rng.uniform_int(7)));  // many ties
    const int l = 1 + static_cast<int>(rng.uniform_int(n));
    std::vector<int> brute(static_cast<size_t>(n));
    std::iota(brute.begin(), brute.end(), 0);
    std::stable_sort(brute.begin(), brute.end(),
                     [&](int a, int b) { return costs[a] < costs[b]; });
    brute.resize(static_cast<size_t>(l));
    if (teacher::select_top_l(costs, l) != brute)
      return {false, "selection disagrees with brute force at trial " +
                         std::to_string(trial)};
  }

  int probes = 0;
  for (int trial = 0; trial < 40; ++trial) {
    teacher::TeacherKnowledge k;
    k.width = k.height = 8;
    k.ues = 2;
    k.per_ue.resize(2);
    for (int ue = 0; ue < 2; ++ue)
      for (int i = 0; i < 3; ++i) k.per_ue[ue].push_back(random_traj(rng, 8));
    for (int p = 0; p < 5; ++p) {
      const int ue = static_cast<int>(rng.uniform_int(2));
      const env::Coord z{static_cast<int>(rng.uniform_int(8)),
                         static_cast<int>(rng.uniform_int(8))};
      std::array<int, env::kActionCount> count{};
      int total = 0;
      for (const auto& t : k.per_ue[ue])
        for (const auto& pr : t.pairs)
          if (pr.z == z) {
            ++count[static_cast<size_t>(pr.a)];
            ++total;
          }
      const lec::TeacherPdf pdf = lec::teacher_pdf(k, ue, z);
      if (pdf.support_hit != (total > 0))
        return {false, "pdf support flag disagrees with the hand count"};
      for (int a = 0; a < env::kActionCount; ++a) {
        const double want =
            total > 0 ? static_cast<double>(count[static_cast<size_t>(a)]) / total : 0.0;
        if (pdf.probs[static_cast<size_t>(a)] != want)
          return {false, "pdf probability differs from the hand count"};
      }
      ++probes;
    }
  }

  std::ostringstream d;
  d << "10000 refines, 100 selections, " << probes << " pdf probes, " << num(timer.s())
    << "s";
  return {true, d.str()};
}

// --- shared scenario for 4, 6, 7, 8 ----------------------------------------

env::GridWorld flat_world(int w, int h) {
  env::GridWorld world;
  world.width = w;
  world.height = h;
  world.building.assign(static_cast<size_t>(w) * h, 0);
  world.bs = {w / 2, h / 2};
  world.channel.width = w;
  world.channel.height = h;
  world.channel.gains.assign(static_cast<size_t>(w) * h, 1.0);
  world.channel.phases.assign(static_cast<size_t>(w) * h, 0.0);
  return world;
}

// 10x10 map with a weak north-south corridor at x in {4,5}; the only strong
// crossing is the bridge at y in {8,9}.
env::GridWorld corridor_world() {
  env::GridWorld world = flat_world(10, 10);
  for (int y = 0; y < 10; ++y) {
    if (y >= 8) continue;
    world.channel.gains[static_cast<size_t>(y) * 10 + 4] = 1e-3;
    world.channel.gains[static_cast<size_t>(y) * 10 + 5] = 1e-3;
  }
  return world;
}

chan::LinkBudget study_budget() { return {1.0, 0.02, 100.0}; }  // eta 0.01, snr 17 dB

ec::TrainConfig study_cfg() {
  ec::TrainConfig cfg;
  cfg.net.msg_len = 4;
  cfg.net.hidden_dim = 16;
  cfg.net.enc_width = 32;
  cfg.net.bs_hidden = 16;
  cfg.starts = {{0, 2}, {0, 7}};
  cfg.dests = {{9, 2}, {9, 7}};
  cfg.episodes = 3000;
  cfg.batch_episodes = 8;
  cfg.target_sync_interval = 100;
  cfg.t_max = 25;
  cfg.lr = 1e-3;
  cfg.gamma = 0.95;
  cfg.eps0 = 0.2;
  cfg.eps_decay = 0.999;
  return cfg;
}

constexpr double kSuccessReturn = 5.0;  // smoothed tail of an arriving policy

std::optional<int> converged_at(const std::vector<double>& curve) {
  const int window = metrics::suggested_window(static_cast<int>(curve.size()), 3);
  const std::vector<double> sm = metrics::smooth(curve, 3, window);
  if (sm.back() < kSuccessReturn) return std::nullopt;
  return metrics::convergence_episode(sm, 0.8);
}

struct Study {
  bool ran = false;
  teacher::TeacherKnowledge knowledge;
  std::vector<ec::TrainResult> ec_runs, lec_runs;  // seeds 1..4
  double wall_s = 0.0;
};

Study& study() {
  static Study s;
  if (s.ran) return s;
  Timer timer;
  const env::GridWorld world = corridor_world();
  const chan::LinkBudget budget = study_budget();
  const ec::TrainConfig base = study_cfg();

  // A tight lookahead band keeps the planner decisive far from the
  // destination, where a relative band spans several field steps; generation
  // gets step headroom so every candidate episode completes.
  teacher::GenConfig gen;
  gen.episodes = 50;
  gen.keep = 5;
  gen.temperature = 0.05;
  gen.t_max = 50;
  Rng trng(1000);
  s.knowledge = teacher::build_knowledge(world, base.starts, base.dests, budget, gen, trng);

  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    ec::TrainConfig cfg = base;
    cfg.seed = seed;
    std::cerr << "  [study] ec seed " << seed << "...\n";
    s.ec_runs.push_back(ec::train(cfg, world, budget));
    lec::KdConfig kc;
    kc.train = cfg;
    kc.lambda = 1.0;
    std::cerr << "  [study] lec seed " << seed << "...\n";
    s.lec_runs.push_back(lec::train_lec(kc, world, budget, s.knowledge));
  }
  s.wall_s = timer.s();
  s.ran = true;
  return s;
}

std::vector<double> returns_of(const ec::TrainResult& r) {
  std::vector<double> v;
  v.reserve(r.curve.size());
  for (const auto& row : r.curve) v.push_back(row.mean_return);
  return v;
}

// --- 4. distillation reduction ----------------------------------------------

Outcome check_reduction() {
  Timer timer;
  env::GridWorld world = flat_world(6, 6);
  const chan::LinkBudget budget{1.0, 0.02, 100.0};

  ec::TrainConfig cfg;
  cfg.net.msg_len = 2;
  cfg.net.hidden_dim = 8;
  cfg.net.enc_width = 12;
  cfg.net.bs_hidden = 8;
  cfg.starts = {{0, 0}, {5, 0}};
  cfg.dests = {{5, 5}, {0, 5}};
  cfg.episodes = 200;
  cfg.batch_episodes = 8;
  cfg.target_sync_interval = 50;
  cfg.t_max = 15;
  cfg.lr = 1e-3;
  cfg.gamma = 0.95;
  cfg.eps0 = 0.2;
  cfg.eps_decay = 0.995;
  cfg.seed = 5;

  teacher::GenConfig gen;
  gen.episodes = 10;
  gen.keep = 3;
  gen.t_max = 20;
  Rng trng(17);
  const teacher::TeacherKnowledge knowledge =
      teacher::build_knowledge(world, cfg.starts, cfg.dests, budget, gen, trng);

  const ec::TrainResult base = ec::train(cfg, world, budget);
  lec::KdConfig kc;
  kc.train = cfg;
  kc.lambda = 0.0;
  kc.bonus = 0.0;
  const ec::TrainResult hooked = lec::train_lec(kc, world, budget, knowledge);

  if (base.curve.size() != hooked.curve.size() || base.curve.size() != 200)
    return {false, "curve length mismatch"};
  for (size_t i = 0; i < base.curve.size(); ++i) {
    const auto& a = base.curve[i];
    const auto& b = hooked.curve[i];
    if (a.mean_return != b.mean_return || a.loss != b.loss || a.epsilon != b.epsilon ||
        b.kld_mean != 0.0)
      return {false, "curves diverge at episode " + std::to_string(i)};
  }
  for (const std::string& name : base.params.names()) {
    if (base.params.at(name).data() != hooked.params.at(name).data())
      return {false, "parameter tensor '" + name + "' differs"};
  }
  return {true, "200 episodes bit-identical (returns, losses, parameters), " +
                    num(timer.s()) + "s"};
}

// --- 5. reward and cppr arithmetic -------------------------------------------

Outcome check_arithmetic() {
  // reward table over every indicator combination, bonus on and off
  for (int at_dest = 0; at_dest <= 1; ++at_dest)
    for (int valid = 0; valid <= 1; ++valid)
      for (int weak = 0; weak <= 1; ++weak)
        for (int hit = 0; hit <= 1; ++hit)
          for (int enabled = 0; enabled <= 1; ++enabled) {
            env::AgentState agent;
            agent.pos = {3, 3};
            agent.dest = at_dest ? env::Coord{3, 3} : env::Coord{4, 4};
            double want = 0.0;
            if (at_dest) want += env::kArriveReward;
            if (!valid) want -= env::kInvalidPenalty;
            if (weak) want -= env::kWeakPenalty;
            if (!at_dest) want -= env::kTimePenalty;
            if (enabled && hit) want += env::kTeacherBonus;
            const double got = env::reward(agent, valid != 0, weak != 0, hit != 0,
                                           enabled != 0, env::kTeacherBonus);
            if (got != want)
              return {false, "reward mismatch at combination " +
                                 std::to_string(at_dest * 8 + valid * 4 + weak * 2 + hit)};
          }

  // worked example: T = {4, 6}, weak steps at t = 2 and 3 for the first UE
  {
    const std::vector<double> gains{1.0, 0.2, 0.3, 1.0};
    const std::vector<int> lengths{4, 6};
    const std::vector<bool> arrived{true, true};
    if (metrics::cppr(gains, 0.5, lengths, arrived, 4) != 2.0 / 6.0)
      return {false, "worked cppr example is off at t=4"};
    if (metrics::cppr(gains, 0.5, lengths, arrived, 6) != 2.0 / 6.0)
      return {false, "worked cppr example is off at t=6"};
    // boundary gain == eta counts as usable
    if (metrics::cppr({0.5, 0.5}, 0.5, {2}, {true}, 2) != 0.0)
      return {false, "boundary gain must not count as weak"};
    // steps past the UE's own arrival accrue nothing
    const std::vector<double> all_weak{0.1, 0.1, 0.1, 0.1};
    if (metrics::cppr(all_weak, 0.5, {4, 8}, {true, true}, 8) != 0.5)
      return {false, "accrual continued past the UE's arrival"};
  }

  // monotone and bounded over random fixtures; the curve matches pointwise
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int t1 = 1 + static_cast<int>(rng.uniform_int(10));
    const int t2 = 1 + static_cast<int>(rng.uniform_int(10));
    std::vector<double> gains(static_cast<size_t>(t1));
    for (auto& g : gains) g = rng.uniform() * 2.0;
    const std::vector<int> lengths{t1, t2};
    const std::vector<bool> arrived{true, true};
    const std::vector<double> curve = metrics::cppr_curve(gains, 1.0, lengths, arrived);
    double prev = 0.0;
    for (size_t t = 0; t < curve.size(); ++t) {
      const double v = curve[t];
      if (v < prev || v < 0.0 || v > 1.0)
        return {false, "cppr curve not monotone in [0,1] at trial " + std::to_string(trial)};
      if (v != metrics::cppr(gains, 1.0, lengths, arrived, static_cast<int>(t) + 1))
        return {false, "cppr curve disagrees with pointwise values"};
      prev = v;
    }
  }
  return {true, "reward table exact (32 combinations), cppr fixtures and 100 random "
                "curves exact"};
}

// --- 6. guided convergence ----------------------------------------------------

Outcome check_convergence() {
  const Study& s = study();
  std::vector<double> ec_eps, lec_eps;
  std::ostringstream d;
  d << "conv ec/lec:";
  for (size_t i = 0; i < s.ec_runs.size(); ++i) {
    const std::optional<int> ec = converged_at(returns_of(s.ec_runs[i]));
    const std::optional<int> lec = converged_at(returns_of(s.lec_runs[i]));
    // a baseline run that never settles counts as the full episode budget
    ec_eps.push_back(ec ? static_cast<double>(*ec) : 3000.0);
    if (!lec)
      return {false, "lec seed " + std::to_string(i + 1) + " did not converge"};
    lec_eps.push_back(static_cast<double>(*lec));
    d << " " << (ec ? std::to_string(*ec) : std::string("none")) << "/" << *lec;
  }
  const double ec_mean = std::accumulate(ec_eps.begin(), ec_eps.end(), 0.0) / 4.0;
  const double lec_mean = std::accumulate(lec_eps.begin(), lec_eps.end(), 0.0) / 4.0;
  d << ", mean " << num(ec_mean) << " vs " << num(lec_mean) << " (ratio "
    << num(lec_mean / ec_mean) << ", need <= 0.75), study " << num(s.wall_s) << "s";
  if (!(lec_mean <= 0.75 * ec_mean)) return {false, d.str()};
  return {true, d.str()};
}

// --- 7. weak-cell exposure ordering ------------------------------------------

Outcome check_cppr_ordering() {
  const Study& s = study();
  const env::GridWorld world = corridor_world();
  const chan::LinkBudget budget = study_budget();
  const double eta = budget.eta();

  auto mean_final_cppr = [&](const std::vector<ec::TrainResult>& runs, int& samples) {
    double sum = 0.0;
    samples = 0;
    for (size_t i = 0; i < runs.size(); ++i) {
      ec::TrainConfig cfg = study_cfg();
      cfg.seed = static_cast<uint64_t>(i + 1);
      Rng base(cfg.seed);
      Rng rng = base.spawn();
      const auto episodes = ec::evaluate(runs[i].params, cfg, world, budget, 20, rng);
      for (const ec::EpisodeRecord& ep : episodes) {
        if (!std::all_of(ep.arrived.begin(), ep.arrived.end(), [](bool a) { return a; }))
          continue;
        std::vector<int> lengths;
        for (size_t j = 0; j < ep.steps.size(); ++j)
          lengths.push_back(ep.t_used(static_cast<int>(j)));
        const int max_t = *std::max_element(lengths.begin(), lengths.end());
        double ep_sum = 0.0;
        for (size_t j = 0; j < ep.steps.size(); ++j) {
          std::vector<double> gains;
          for (const ec::StepRecord& st : ep.steps[j])
            gains.push_back(world.gain_at(st.to));
          ep_sum += metrics::cppr(gains, eta, lengths, ep.arrived, max_t);
        }
        sum += ep_sum / static_cast<double>(ep.steps.size());
        ++samples;
      }
    }
    return samples > 0 ? sum / samples : 0.0;
  };

  int ec_n = 0, lec_n = 0;
  const double ec_cppr = mean_final_cppr(s.ec_runs, ec_n);
  const double lec_cppr = mean_final_cppr(s.lec_runs, lec_n);
  std::ostringstream d;
  d << "final cppr ec " << num(ec_cppr) << " (" << ec_n << " eps) vs lec "
    << num(lec_cppr) << " (" << lec_n << " eps)";
  if (lec_n == 0) return {false, d.str() + ": no complete lec evaluations"};
  if (ec_n == 0) return {true, d.str() + ": baseline never completed, ordering holds"};
  if (!(lec_cppr <= ec_cppr)) return {false, d.str()};
  return {true, d.str()};
}

// --- 8. text-link degradation -------------------------------------------------

Outcome check_text_link() {
  Timer timer;
  const env::GridWorld world = corridor_world();
  const chan::LinkBudget budget = study_budget();
  const std::vector<env::Coord> starts{{0, 2}, {0, 7}};
  const std::vector<env::Coord> dests{{9, 2}, {9, 7}};
  const auto client = teacher::scripted_pilot(world, budget);

  auto mean_travel = [&](double snr_db) {
    Rng rng(77);
    double total = 0.0;
    for (int e = 0; e < 10; ++e) {
      const teacher::TeacherEpisode ep = teacher::lsc_episode(
          world, starts, dests, budget, *client, snr_db, 2, 2, 25, rng);
      int travel = 0;
      for (const auto& t : ep.trajs) travel = std::max(travel, t.steps());
      total += travel;
    }
    return total / 10.0;
  };
  const double t20 = mean_travel(20.0);
  const double t15 = mean_travel(15.0);

  teacher::PromptBundle b;
  b.width = 12;
  b.height = 10;
  b.bs = {6, 5};
  b.ues = 2;
  b.uplinks = {
      "UE1 reports: pos=(0,0) dest=(9,9) blocked=[northwest,west,southwest,south,southeast] weak=[east]",
      "UE2 reports: pos=(0,9) dest=(10,0) blocked=[northwest,north,northeast,west,southwest] weak=[]",
  };
  b.examples = teacher::builtin_examples(2);
  teacher::PromptRound r;
  r.uplinks = {
      "UE1 reports: pos=(0,0) dest=(9,9) blocked=[northwest,west,southwest,south,southeast] weak=[]",
      "UE2 reports: pos=(1,9) dest=(10,0) blocked=[north,northeast,northwest] weak=[southwest]",
  };
  r.answer = "UE1: northeast. UE2: southeast.";
  b.history = {r};
  std::ifstream golden(std::string(LECNAV_TEST_DATA_DIR) + "/prompt_k2.txt");
  std::stringstream ss;
  ss << golden.rdbuf();
  const bool prompt_ok = teacher::make_prompt(b) == ss.str();

  std::ostringstream d;
  d << "mean travel " << num(t15) << " @15dB vs " << num(t20)
    << " @20dB; k=2 prompt golden " << (prompt_ok ? "match" : "MISMATCH") << ", "
    << num(timer.s()) << "s";
  if (!prompt_ok || !(t15 > t20)) return {false, d.str()};
  return {true, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria{
      {"autodiff gradients", check_gradients},
      {"link layer", check_link},
      {"teacher pipeline", check_teacher},
      {"distillation reduction", check_reduction},
      {"reward and cppr arithmetic", check_arithmetic},
      {"guided convergence speedup", check_convergence},
      {"weak-cell exposure ordering", check_cppr_ordering},
      {"text-link degradation", check_text_link},
  };

  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  bool all_ok = true;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int index = static_cast<int>(i) + 1;
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), index) == wanted.end())
      continue;
    Outcome out;
    try {
      out = criteria[i].run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (out.ok ? "[PASS] " : "[FAIL] ") << index << ". " << criteria[i].name
              << ": " << out.detail << "\n";
    std::cout.flush();
    all_ok = all_ok && out.ok;
  }
  return all_ok ? 0 : 1;
}
