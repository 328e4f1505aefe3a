#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lecnav/lec.hpp"

using namespace lecnav;

namespace {

env::GridWorld empty_world(int w, int h, double gain = 1.0) {
  env::GridWorld world;
  world.width = w;
  world.height = h;
  world.building.assign(static_cast<size_t>(w) * h, 0);
  world.bs = {w / 2, h / 2};
  world.channel.width = w;
  world.channel.height = h;
  world.channel.gains.assign(static_cast<size_t>(w) * h, gain);
  return world;
}

chan::LinkBudget quiet_budget() { return {1.0, 0.02, 100.0}; }

teacher::Trajectory traj(int ue, std::vector<teacher::TrajPair> pairs,
                         env::Coord final_cell) {
  teacher::Trajectory t;
  t.ue = ue;
  t.pairs = std::move(pairs);
  t.final = final_cell;
  return t;
}

teacher::TeacherKnowledge knowledge_of(int w, int h,
                                       std::vector<std::vector<teacher::Trajectory>>
                                           per_ue) {
  teacher::TeacherKnowledge k;
  k.width = w;
  k.height = h;
  k.ues = static_cast<int>(per_ue.size());
  k.per_ue = std::move(per_ue);
  return k;
}

ec::NetConfig tiny_net() {
  ec::NetConfig net;
  net.msg_len = 2;
  net.hidden_dim = 8;
  net.enc_width = 16;
  net.bs_hidden = 8;
  return net;
}

double softmax_kld(const std::vector<double>& q, const std::vector<double>& t) {
  double mx = q[0];
  for (double v : q) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : q) z += std::exp(v - mx);
  double d = 0.0;
  for (size_t i = 0; i < q.size(); ++i) {
    const double p = std::exp(q[i] - mx) / z;
    d += p * std::log(p / t[i]);
  }
  return d;
}

}  // namespace

TEST_CASE("teacher_pdf counts conditional action frequencies") {
  using env::Action;
  const auto k = knowledge_of(
      5, 5,
      {{traj(0, {{{1, 1}, Action::East}, {{2, 1}, Action::North}}, {2, 2}),
        traj(0, {{{1, 1}, Action::East}}, {2, 1}),
        traj(0, {{{1, 1}, Action::North}, {{1, 2}, Action::East}}, {2, 2})}});

  SUBCASE("cell off every trajectory") {
    const auto pdf = lec::teacher_pdf(k, 0, {4, 4});
    CHECK_FALSE(pdf.support_hit);
    for (double p : pdf.probs) CHECK(p == 0.0);
  }

  SUBCASE("singleton occurrence") {
    const auto pdf = lec::teacher_pdf(k, 0, {2, 1});
    CHECK(pdf.support_hit);
    CHECK(pdf.probs[static_cast<int>(Action::North)] == 1.0);
  }

  SUBCASE("three occurrences split 2/3 east, 1/3 north") {
    const auto pdf = lec::teacher_pdf(k, 0, {1, 1});
    CHECK(pdf.support_hit);
    CHECK(pdf.probs[static_cast<int>(Action::East)] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(pdf.probs[static_cast<int>(Action::North)] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    double sum = 0.0;
    for (double p : pdf.probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("endpoint-only cells shape the bonus but not the pdf") {
    CHECK(k.hit(0, {2, 2}));
    CHECK_FALSE(lec::teacher_pdf(k, 0, {2, 2}).support_hit);
  }
}

TEST_CASE("teacher_pdf normalizes over fuzzed random knowledge") {
  Rng rng(71);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<teacher::Trajectory> trajs;
    for (int l = 0; l < 3; ++l) {
      teacher::Trajectory t;
      t.ue = 0;
      env::Coord pos{rng.uniform_int(6), rng.uniform_int(6)};
      const int steps = 1 + rng.uniform_int(8);
      for (int s = 0; s < steps; ++s) {
        const auto a = static_cast<env::Action>(rng.uniform_int(8));
        t.pairs.push_back({pos, a});
        const auto d = env::action_delta(a, 1);
        pos = {pos.x + d.x, pos.y + d.y};
      }
      t.final = pos;
      trajs.push_back(t);
    }
    const auto k = knowledge_of(20, 20, {trajs});
    for (int x = -8; x < 14; ++x)
      for (int y = -8; y < 14; ++y) {
        const auto pdf = lec::teacher_pdf(k, 0, {x, y});
        double sum = 0.0;
        for (double p : pdf.probs) {
          CHECK(p >= 0.0);
          sum += p;
        }
        if (pdf.support_hit)
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        else
          CHECK(sum == 0.0);
      }
  }
}

TEST_CASE("kd_term matches the smoothed closed form") {
  lec::TeacherPdf empty;
  CHECK(lec::kd_term(ad::Tensor::constant({1.0, 2, 3, 4, 5, 6, 7, 8}), empty, 1e-3)
            .item() == 0.0);

  lec::TeacherPdf east;
  east.support_hit = true;
  east.probs[static_cast<int>(env::Action::East)] = 1.0;

  SUBCASE("uniform q against a one-hot teacher") {
    const double e = 1e-3;
    std::vector<double> teacher(8, e / (1 + 8 * e));
    teacher[static_cast<int>(env::Action::East)] = (1 + e) / (1 + 8 * e);
    const auto q = ad::Tensor::constant(std::vector<double>(8, 0.0));
    const double want = softmax_kld(std::vector<double>(8, 0.0), teacher);
    CHECK(lec::kd_term(q, east, e).item() == doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("student matching the smoothed teacher scores zero") {
    const double e = 1e-2;
    std::vector<double> logits(8);
    for (int a = 0; a < 8; ++a) {
      const double t =
          (east.probs[a] + e) / (1 + 8 * e);
      logits[a] = std::log(t) + 0.7;  // shift cancels in softmax
    }
    CHECK(lec::kd_term(ad::Tensor::constant(logits), east, e).item() ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("non-negative with live gradient on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
      lec::TeacherPdf pdf;
      pdf.support_hit = true;
      double sum = 0.0;
      for (double& p : pdf.probs) {
        p = rng.uniform();
        sum += p;
      }
      for (double& p : pdf.probs) p /= sum;
      std::vector<double> logits(8);
      for (double& v : logits) v = 4.0 * rng.uniform() - 2.0;
      auto q = ad::Tensor::param(logits, {8});
      const auto d = lec::kd_term(q, pdf, 1e-3);
      CHECK(d.item() >= -1e-12);
      ad::backward(d);
      double g = 0.0;
      for (double v : q.grad()) g += std::abs(v);
      CHECK(g > 0.0);
    }
  }

  SUBCASE("smoothing eps is validated") {
    const auto q = ad::Tensor::constant(std::vector<double>(8, 0.0));
    CHECK_THROWS_AS(lec::kd_term(q, east, 0.0), ConfigError);
    CHECK_THROWS_AS(lec::kd_term(q, east, 0.2), ConfigError);
  }
}

TEST_CASE("single-step loss equals TD^2 plus lambda times the KLD") {
  auto world = empty_world(3, 3);
  const auto net = tiny_net();
  Rng rng(3);
  auto p = ec::init_params(net, 1, 3, 3, rng);
  for (const auto& name : p.names())
    std::fill(p.at(name).data().begin(), p.at(name).data().end(), 0.0);

  ec::TrainConfig cfg;
  cfg.net = net;
  cfg.starts = {{1, 1}};
  cfg.dests = {{0, 2}};  // reached by the flat-q northwest tie-break
  cfg.t_max = 3;

  const auto k = knowledge_of(
      3, 3, {{traj(0, {{{1, 1}, env::Action::East}}, {2, 1})}});
  lec::KdConfig kd;
  kd.train = cfg;
  kd.lambda = 2.0;
  kd.smoothing_eps = 1e-3;
  kd.bonus = 0.0;
  const auto hooks = lec::make_hooks(k, kd);

  Rng roll(9);
  std::vector<ec::EpisodeRecord> batch;
  batch.push_back(
      ec::rollout_episode(world, p, cfg, quiet_budget(), 0.0, true, roll, hooks));
  REQUIRE(batch[0].t_used(0) == 1);
  CHECK(batch[0].returns[0] == 10.0);  // bonus off, plain arrival reward

  const double e = 1e-3;
  std::vector<double> teacher(8, e / (1 + 8 * e));
  teacher[static_cast<int>(env::Action::East)] = (1 + e) / (1 + 8 * e);
  const double kld = softmax_kld(std::vector<double>(8, 0.0), teacher);

  const double loss =
      lec::lec_loss(batch, p, net, 1.0, kd.lambda).item();
  CHECK(loss == doctest::Approx(100.0 + 2.0 * kld).epsilon(1e-12));
}

TEST_CASE("lambda=0 with zero bonus reduces bit-identically to plain EC") {
  auto world = empty_world(4, 4);
  ec::TrainConfig cfg;
  cfg.net = tiny_net();
  cfg.starts = {{0, 0}};
  cfg.dests = {{3, 3}};
  cfg.t_max = 8;
  cfg.episodes = 60;
  cfg.batch_episodes = 6;
  cfg.target_sync_interval = 20;
  cfg.eps0 = 0.5;
  cfg.eps_decay = 0.98;
  cfg.lr = 1e-3;
  cfg.seed = 99;

  const auto k = knowledge_of(
      4, 4,
      {{traj(0, {{{0, 0}, env::Action::East}, {{1, 0}, env::Action::Northeast}},
             {2, 1})}});
  lec::KdConfig kd;
  kd.train = cfg;
  kd.lambda = 0.0;
  kd.bonus = 0.0;

  const auto base = ec::train(cfg, world, quiet_budget());
  const auto distilled = lec::train_lec(kd, world, quiet_budget(), k);

  REQUIRE(base.curve.size() == distilled.curve.size());
  for (size_t i = 0; i < base.curve.size(); ++i) {
    CHECK(base.curve[i].mean_return == distilled.curve[i].mean_return);
    CHECK(base.curve[i].loss == distilled.curve[i].loss);
    CHECK(base.curve[i].epsilon == distilled.curve[i].epsilon);
    CHECK(distilled.curve[i].kld_mean == 0.0);
  }
  for (const auto& name : base.params.names())
    CHECK(base.params.at(name).data() == distilled.params.at(name).data());
}

TEST_CASE("empty knowledge leaves the hooked loss equal to the plain loss") {
  auto world = empty_world(4, 4);
  const auto net = tiny_net();
  Rng rng(13);
  auto p = ec::init_params(net, 1, 4, 4, rng);
  auto target = p.clone();

  ec::TrainConfig cfg;
  cfg.net = net;
  cfg.starts = {{0, 0}};
  cfg.dests = {{3, 3}};
  cfg.t_max = 6;

  teacher::TeacherKnowledge k;
  k.width = 4;
  k.height = 4;
  k.ues = 1;
  k.per_ue = {{}};
  lec::KdConfig kd;
  kd.train = cfg;
  kd.lambda = 1.0;
  kd.bonus = 0.1;
  const auto hooks = lec::make_hooks(k, kd);

  Rng r1(21);
  std::vector<ec::EpisodeRecord> hooked;
  hooked.push_back(
      ec::rollout_episode(world, p, cfg, quiet_budget(), 0.3, true, r1, hooks));
  Rng r2(21);
  std::vector<ec::EpisodeRecord> plain;
  plain.push_back(ec::rollout_episode(world, p, cfg, quiet_budget(), 0.3, true, r2));

  const double a = lec::lec_loss(hooked, target, net, 1.0, kd.lambda).item();
  const double b = ec::batch_loss(plain, target, net, 1.0, 0.0).item();
  CHECK(a == b);
}

TEST_CASE("raising lambda tightens the student onto the teacher actions") {
  auto world = empty_world(4, 4);
  ec::TrainConfig cfg;
  cfg.net = tiny_net();
  cfg.starts = {{0, 0}};
  cfg.dests = {{3, 3}};
  cfg.t_max = 10;
  cfg.episodes = 400;
  cfg.batch_episodes = 8;
  cfg.target_sync_interval = 50;
  cfg.eps0 = 0.4;
  cfg.eps_decay = 0.99;
  cfg.lr = 1e-3;
  cfg.gamma = 0.95;
  cfg.seed = 31;

  using env::Action;
  const auto k = knowledge_of(
      4, 4,
      {{traj(0,
             {{{0, 0}, Action::East}, {{1, 0}, Action::North},
              {{1, 1}, Action::East}, {{2, 1}, Action::North},
              {{2, 2}, Action::East}, {{3, 2}, Action::North}},
             {3, 3})}});

  auto kd_after_training = [&](double lambda) {
    lec::KdConfig kd;
    kd.train = cfg;
    kd.lambda = lambda;
    kd.bonus = 0.0;
    const auto res = lambda > 0.0
                         ? lec::train_lec(kd, world, quiet_budget(), k)
                         : ec::train(cfg, world, quiet_budget());

    lec::KdConfig probe = kd;
    probe.lambda = 1.0;
    const auto hooks = lec::make_hooks(k, probe);
    Rng roll(777);
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < 5; ++i) {
      const auto ep = ec::rollout_episode(world, res.params, cfg, quiet_budget(),
                                          0.0, true, roll, hooks);
      for (const auto& rec : ep.steps[0])
        if (rec.kd.defined()) {
          sum += rec.kd.item();
          ++count;
        }
    }
    REQUIRE(count > 0);
    return sum / count;
  };

  CHECK(kd_after_training(5.0) < kd_after_training(0.0));
}

TEST_CASE("lec training reports imitation pressure and validates its config") {
  auto world = empty_world(4, 4);
  ec::TrainConfig cfg;
  cfg.net = tiny_net();
  cfg.starts = {{0, 0}};
  cfg.dests = {{3, 3}};
  cfg.t_max = 8;
  cfg.episodes = 12;
  cfg.batch_episodes = 4;
  cfg.eps0 = 0.3;
  cfg.seed = 11;

  const auto k = knowledge_of(
      4, 4, {{traj(0, {{{0, 0}, env::Action::Northeast}}, {1, 1})}});

  lec::KdConfig kd;
  kd.train = cfg;
  kd.lambda = 1.0;
  kd.bonus = 0.1;
  const auto res = lec::train_lec(kd, world, quiet_budget(), k);
  REQUIRE(res.curve.size() == 12);
  double total_kld = 0.0;
  for (const auto& row : res.curve) total_kld += row.kld_mean;
  CHECK(total_kld > 0.0);  // (0,0) is visited every episode and has support

  SUBCASE("mismatched knowledge or bad smoothing throws") {
    auto two_ue = kd;
    auto wrong = knowledge_of(4, 4, {{}, {}});
    CHECK_THROWS_AS(lec::train_lec(two_ue, world, quiet_budget(), wrong), ConfigError);
    auto off_grid = knowledge_of(5, 4, {{}});
    CHECK_THROWS_AS(lec::train_lec(kd, world, quiet_budget(), off_grid), ConfigError);
    auto bad_eps = kd;
    bad_eps.smoothing_eps = 0.5;
    CHECK_THROWS_AS(lec::train_lec(bad_eps, world, quiet_budget(), k), ConfigError);
    auto bad_lambda = kd;
    bad_lambda.lambda = -1.0;
    CHECK_THROWS_AS(lec::train_lec(bad_lambda, world, quiet_budget(), k), ConfigError);
  }
}
