#include "lecnav/teacher.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <regex>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace lecnav::teacher {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Price of occupying a cell for one step: unit time plus inversion power.
double occupancy_cost(const env::GridWorld& world, env::Coord c,
                      const chan::LinkBudget& budget) {
  const double g = world.gain_at(c);
  if (g <= 0.0) return kInf;
  return 1.0 + chan::tx_power(g, budget);
}

}  // namespace

Trajectory refine(const Trajectory& t) {
  Trajectory out;
  out.ue = t.ue;
  out.final = t.final;
  out.pairs.reserve(t.pairs.size());
  for (size_t i = 0; i < t.pairs.size(); ++i) {
    const env::Coord next = (i + 1 < t.pairs.size()) ? t.pairs[i + 1].z : t.final;
    if (!(next == t.pairs[i].z)) out.pairs.push_back(t.pairs[i]);
  }
  // cut the earliest closed loop until every position is distinct
  bool cut = true;
  while (cut) {
    cut = false;
    for (size_t t2 = 1; t2 <= out.pairs.size() && !cut; ++t2) {
      const env::Coord z2 = (t2 < out.pairs.size()) ? out.pairs[t2].z : out.final;
      for (size_t t1 = 0; t1 < t2; ++t1) {
        if (out.pairs[t1].z == z2) {
          out.pairs.erase(out.pairs.begin() + static_cast<long>(t1),
                          out.pairs.begin() + static_cast<long>(t2));
          cut = true;
          break;
        }
      }
    }
  }
  return out;
}

double episode_cost(const TeacherEpisode& e, const env::GridWorld& world,
                    const chan::LinkBudget& budget) {
  double t_worst = 0.0;
  double energy = 0.0;
  for (const Trajectory& tr : e.trajs) {
    t_worst = std::max(t_worst, static_cast<double>(tr.steps()));
    for (const TrajPair& p : tr.pairs) {
      energy += chan::tx_power(world.gain_at(p.z), budget);
    }
  }
  return t_worst + energy;
}

std::vector<int> select_top_l(const std::vector<double>& costs, int l) {
  std::vector<int> idx(costs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return costs[a] < costs[b]; });
  idx.resize(std::min<size_t>(static_cast<size_t>(std::max(l, 0)), idx.size()));
  return idx;
}

bool TeacherKnowledge::hit(int ue, env::Coord z) const {
  for (const Trajectory& tr : per_ue[static_cast<size_t>(ue)]) {
    if (tr.final == z) return true;
    for (const TrajPair& p : tr.pairs) {
      if (p.z == z) return true;
    }
  }
  return false;
}

std::array<int, env::kActionCount> TeacherKnowledge::action_counts(int ue,
                                                                   env::Coord z) const {
  std::array<int, env::kActionCount> counts{};
  for (const Trajectory& tr : per_ue[static_cast<size_t>(ue)]) {
    for (const TrajPair& p : tr.pairs) {
      if (p.z == z) ++counts[static_cast<size_t>(p.a)];
    }
  }
  return counts;
}

void save_knowledge(const TeacherKnowledge& k, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TeacherError("cannot write knowledge file: " + path);
  nlohmann::json head;
  head["type"] = "teacher-knowledge";
  head["width"] = k.width;
  head["height"] = k.height;
  head["ues"] = k.ues;
  head["selected"] = k.selected;
  out << head.dump() << "\n";
  for (int j = 0; j < k.ues; ++j) {
    for (const Trajectory& tr : k.per_ue[static_cast<size_t>(j)]) {
      nlohmann::json line;
      line["ue"] = j;
      nlohmann::json pairs = nlohmann::json::array();
      for (const TrajPair& p : tr.pairs) {
        pairs.push_back({p.z.x, p.z.y, static_cast<int>(p.a)});
      }
      line["pairs"] = std::move(pairs);
      line["final"] = {tr.final.x, tr.final.y};
      out << line.dump() << "\n";
    }
  }
}

TeacherKnowledge load_knowledge(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TeacherError("cannot open knowledge file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw TeacherError("knowledge file is empty: " + path);
  TeacherKnowledge k;
  try {
    auto head = nlohmann::json::parse(line);
    if (head.at("type") != "teacher-knowledge")
      throw TeacherError("not a knowledge file: " + path);
    k.width = head.at("width").get<int>();
    k.height = head.at("height").get<int>();
    k.ues = head.at("ues").get<int>();
    k.selected = head.at("selected").get<std::vector<int>>();
    k.per_ue.resize(static_cast<size_t>(k.ues));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto rec = nlohmann::json::parse(line);
      Trajectory tr;
      tr.ue = rec.at("ue").get<int>();
      if (tr.ue < 0 || tr.ue >= k.ues) throw TeacherError("knowledge ue out of range");
      for (const auto& p : rec.at("pairs")) {
        const int a = p.at(2).get<int>();
        if (a < 0 || a >= env::kActionCount) throw TeacherError("knowledge action out of range");
        tr.pairs.push_back({{p.at(0).get<int>(), p.at(1).get<int>()},
                            static_cast<env::Action>(a)});
      }
      tr.final = {rec.at("final").at(0).get<int>(), rec.at("final").at(1).get<int>()};
      k.per_ue[static_cast<size_t>(tr.ue)].push_back(std::move(tr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw TeacherError("malformed knowledge file " + path + ": " + e.what());
  }
  return k;
}

CostField cost_to_go(const env::GridWorld& world, env::Coord dest,
                     const chan::LinkBudget& budget) {
  CostField f;
  f.width = world.width;
  f.height = world.height;
  const size_t cells = static_cast<size_t>(world.width) * world.height;
  f.cost.assign(cells, kInf);
  if (!world.in_grid(dest) || world.is_building(dest))
    throw PlannerError("destination not on a free cell");

  auto cell_id = [&](env::Coord c) { return static_cast<size_t>(c.y) * world.width + c.x; };

  using Item = std::pair<double, size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  f.cost[cell_id(dest)] = 0.0;
  heap.push({0.0, cell_id(dest)});
  while (!heap.empty()) {
    auto [d, id] = heap.top();
    heap.pop();
    if (d > f.cost[id]) continue;
    const env::Coord u{static_cast<int>(id % world.width),
                       static_cast<int>(id / world.width)};
    const double w = occupancy_cost(world, u, budget);
    if (w == kInf) continue;
    for (int a = 0; a < env::kActionCount; ++a) {
      const env::Coord delta = env::action_delta(static_cast<env::Action>(a), world.v);
      const env::Coord nb{u.x + delta.x, u.y + delta.y};
      if (!world.in_grid(nb) || world.is_building(nb)) continue;
      const double nd = d + w;  // forward move nb -> u enters u
      const size_t nid = cell_id(nb);
      if (nd < f.cost[nid]) {
        f.cost[nid] = nd;
        heap.push({nd, nid});
      }
    }
  }
  return f;
}

TeacherEpisode planner_episode(const env::GridWorld& world,
                               const std::vector<env::Coord>& starts,
                               const std::vector<env::Coord>& dests,
                               const chan::LinkBudget& budget, double temperature,
                               int t_max, Rng& rng) {
  const size_t n = starts.size();
  std::vector<CostField> fields;
  fields.reserve(n);
  for (size_t j = 0; j < n; ++j) fields.push_back(cost_to_go(world, dests[j], budget));

  auto agents = env::reset(world, starts, dests);
  for (size_t j = 0; j < n; ++j) {
    if (fields[j].at(starts[j]) == kInf)
      throw PlannerError("start disconnected from destination for ue " +
                         std::to_string(j));
  }

  TeacherEpisode ep;
  ep.trajs.resize(n);
  for (size_t j = 0; j < n; ++j) ep.trajs[j].ue = static_cast<int>(j);

  for (int t = 0; t < t_max; ++t) {
    bool any_live = false;
    for (const auto& a : agents) any_live |= !a.done;
    if (!any_live) break;

    // Decide in UE order with the same conflict rule env::step applies, so
    // the chosen move lands exactly on the predicted cell.
    std::vector<env::Coord> claimed;
    for (const auto& a : agents) {
      if (a.done) claimed.push_back(a.pos);
    }
    std::vector<env::Action> acts(n, env::Action::North);
    std::vector<bool> was_live(n, false);
    std::vector<env::Coord> pre(n);
    for (size_t j = 0; j < n; ++j) {
      if (agents[j].done) continue;
      was_live[j] = true;
      pre[j] = agents[j].pos;

      struct Cand {
        double val;
        int a;
        env::Coord eff;
      };
      std::vector<Cand> cands;
      cands.reserve(env::kActionCount);
      double best = kInf;
      for (int a = 0; a < env::kActionCount; ++a) {
        const env::Coord d = env::action_delta(static_cast<env::Action>(a), world.v);
        const env::Coord cand{agents[j].pos.x + d.x, agents[j].pos.y + d.y};
        bool moves = world.in_grid(cand) && !world.is_building(cand);
        if (moves) {
          for (const env::Coord& c : claimed) {
            if (c == cand) {
              moves = false;
              break;
            }
          }
        }
        if (moves) {
          for (size_t k = j + 1; k < n && moves; ++k) {
            if (!agents[k].done && agents[k].pos == cand) moves = false;
          }
        }
        const env::Coord eff = moves ? cand : agents[j].pos;
        // one-step lookahead: pay for occupying eff, then follow the field
        const double val = occupancy_cost(world, eff, budget) + fields[j].at(eff);
        cands.push_back({val, a, eff});
        best = std::min(best, val);
      }

      int pick = -1;
      if (temperature <= 0.0) {
        for (const Cand& c : cands) {
          if (c.val == best) {
            pick = c.a;
            claimed.push_back(c.eff);
            break;
          }
        }
      } else {
        std::vector<int> band;
        for (size_t i = 0; i < cands.size(); ++i) {
          if (cands[i].val <= best * (1.0 + temperature)) band.push_back(static_cast<int>(i));
        }
        const Cand& c = cands[static_cast<size_t>(band[rng.uniform_int(band.size())])];
        pick = c.a;
        claimed.push_back(c.eff);
      }
      acts[j] = static_cast<env::Action>(pick);
    }

    env::step(world, agents, acts);
    for (size_t j = 0; j < n; ++j) {
      if (was_live[j]) ep.trajs[j].pairs.push_back({pre[j], acts[j]});
    }
  }

  ep.success = true;
  for (size_t j = 0; j < n; ++j) {
    ep.trajs[j].final = agents[j].pos;
    ep.success = ep.success && agents[j].done;
  }
  return ep;
}

// --- text-prompted pilot ---------------------------------------------------

std::string render_uplink(const env::GridWorld& world,
                          const std::vector<env::AgentState>& agents, int ue,
                          double eta) {
  const env::AgentState& me = agents[static_cast<size_t>(ue)];
  std::string blocked, weak;
  for (int a = 0; a < env::kActionCount; ++a) {
    const env::Coord d = env::action_delta(static_cast<env::Action>(a), world.v);
    const env::Coord c{me.pos.x + d.x, me.pos.y + d.y};
    bool is_blocked = !world.in_grid(c) || world.is_building(c);
    if (!is_blocked) {
      for (size_t k = 0; k < agents.size(); ++k) {
        if (static_cast<int>(k) != ue && agents[k].pos == c) {
          is_blocked = true;
          break;
        }
      }
    }
    const std::string& word = env::action_word(static_cast<env::Action>(a));
    if (is_blocked) {
      if (!blocked.empty()) blocked += ",";
      blocked += word;
    } else if (chan::is_weak(world.gain_at(c), eta)) {
      if (!weak.empty()) weak += ",";
      weak += word;
    }
  }
  std::ostringstream os;
  os << "UE" << (ue + 1) << " reports: pos=(" << me.pos.x << "," << me.pos.y
     << ") dest=(" << me.dest.x << "," << me.dest.y << ") blocked=[" << blocked
     << "] weak=[" << weak << "]";
  return os.str();
}

std::vector<PromptExample> builtin_examples(int k) {
  static const std::vector<PromptExample> all = {
      {{"UE1 reports: pos=(1,1) dest=(3,3) blocked=[] weak=[]"},
       "UE1: northeast."},
      {{"UE1 reports: pos=(4,4) dest=(4,0) blocked=[] weak=[southwest]",
        "UE2 reports: pos=(0,2) dest=(0,5) blocked=[northwest,west,southwest] weak=[]"},
       "UE1: south. UE2: north."},
      {{"UE1 reports: pos=(2,0) dest=(0,0) blocked=[southwest,south,southeast] weak=[northwest]"},
       "UE1: west."},
      {{"UE1 reports: pos=(5,5) dest=(9,5) blocked=[east] weak=[]",
        "UE2 reports: pos=(7,2) dest=(7,6) blocked=[] weak=[north]"},
       "UE1: northeast. UE2: northwest."},
  };
  if (k < 0 || k > static_cast<int>(all.size()))
    throw TeacherError("k_examples out of range");
  return {all.begin(), all.begin() + k};
}

std::string make_prompt(const PromptBundle& b) {
  std::ostringstream os;
  os << "You guide UE1..UE" << b.ues << " on a " << b.width << "x" << b.height
     << " grid toward their destinations.\n";
  os << "Coordinates are (x,y) with x increasing east and y increasing north."
     << " The base station is at (" << b.bs.x << "," << b.bs.y << ").\n";
  os << "Moves: northwest, north, northeast, west, east, southwest, south, "
        "southeast.\n";
  os << "Reply with exactly one move per UE, like \"UE1: north. UE2: east.\"\n";
  for (const PromptExample& ex : b.examples) {
    os << "\nExample:\n";
    for (const std::string& u : ex.uplinks) os << u << "\n";
    os << "Answer: " << ex.answer << "\n";
  }
  int round = 1;
  for (const PromptRound& r : b.history) {
    os << "\nRound " << round++ << ":\n";
    for (const std::string& u : r.uplinks) os << u << "\n";
    os << "Answer: " << r.answer << "\n";
  }
  os << "\nNow:\n";
  for (const std::string& u : b.uplinks) os << u << "\n";
  os << "Answer:";
  return os.str();
}

std::optional<env::Action> parse_action(const std::string& text, int ue) {
  const std::string token = "UE" + std::to_string(ue + 1);
  size_t begin = 0;
  size_t end = text.size();
  size_t p = 0;
  bool found = false;
  while ((p = text.find(token, p)) != std::string::npos) {
    const size_t after = p + token.size();
    if (after >= text.size() ||
        !std::isdigit(static_cast<unsigned char>(text[after]))) {
      found = true;
      break;
    }
    p = after;
  }
  if (found) {
    begin = p + token.size();
    size_t q = begin;
    while ((q = text.find("UE", q)) != std::string::npos) {
      if (q + 2 < text.size() && std::isdigit(static_cast<unsigned char>(text[q + 2]))) {
        end = q;
        break;
      }
      q += 2;
    }
  } else {
    // A reply that addresses other UEs but not this one answers nothing for
    // it; the whole-text scan is only for replies with no addressing at all.
    size_t q = 0;
    while ((q = text.find("UE", q)) != std::string::npos) {
      if (q + 2 < text.size() && std::isdigit(static_cast<unsigned char>(text[q + 2])))
        return std::nullopt;
      q += 2;
    }
  }
  // longest word first so "north" never shadows "northeast"
  static const env::Action by_len[env::kActionCount] = {
      env::Action::Northwest, env::Action::Northeast, env::Action::Southwest,
      env::Action::Southeast, env::Action::North,     env::Action::South,
      env::Action::West,      env::Action::East,
  };
  for (size_t i = begin; i < end; ++i) {
    for (env::Action a : by_len) {
      const std::string& w = env::action_word(a);
      if (text.compare(i, w.size(), w) == 0) return a;
    }
  }
  return std::nullopt;
}

HttpTeacherClient::HttpTeacherClient(std::string host, int port, std::string path,
                                     int timeout_s)
    : host_(std::move(host)), port_(port), path_(std::move(path)),
      timeout_s_(timeout_s) {}

std::string HttpTeacherClient::complete(const std::string& prompt) {
  httplib::Client cli(host_, port_);
  cli.set_connection_timeout(timeout_s_);
  cli.set_read_timeout(timeout_s_);
  nlohmann::json body;
  body["prompt"] = prompt;
  auto res = cli.Post(path_.c_str(), body.dump(), "application/json");
  if (!res) throw TeacherError("pilot endpoint unreachable: " + host_);
  if (res->status != 200)
    throw TeacherError("pilot endpoint returned status " + std::to_string(res->status));
  try {
    auto j = nlohmann::json::parse(res->body);
    return j.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TeacherError(std::string("malformed pilot reply: ") + e.what());
  }
}

std::unique_ptr<TeacherClient> scripted_pilot(const env::GridWorld& world,
                                              const chan::LinkBudget& budget) {
  struct State {
    env::GridWorld world;
    chan::LinkBudget budget;
    std::map<std::pair<int, int>, CostField> fields;
  };
  auto st = std::make_shared<State>(State{world, budget, {}});

  return std::make_unique<ScriptedTeacherClient>([st](const std::string& prompt) {
    static const std::regex report_re(
        R"(^UE([0-9]+) reports: pos=\(([0-9]+),([0-9]+)\) dest=\(([0-9]+),([0-9]+)\) blocked=\[([a-z,]*)\] weak=\[([a-z,]*)\]$)");
    const size_t now = prompt.rfind("\nNow:\n");
    if (now == std::string::npos) return std::string();
    std::istringstream lines(prompt.substr(now + 6));
    std::string line;
    std::string reply;
    while (std::getline(lines, line)) {
      if (line.rfind("Answer:", 0) == 0) break;
      std::smatch m;
      if (!std::regex_match(line, m, report_re)) continue;  // corrupted report
      const int ue = std::stoi(m[1]);
      const env::Coord pos{std::stoi(m[2]), std::stoi(m[3])};
      const env::Coord dest{std::stoi(m[4]), std::stoi(m[5])};
      if (!st->world.in_grid(pos) || !st->world.in_grid(dest)) continue;
      if (st->world.is_building(pos) || st->world.is_building(dest)) continue;

      auto [it, fresh] = st->fields.try_emplace({dest.x, dest.y});
      if (fresh) it->second = cost_to_go(st->world, dest, st->budget);
      const CostField& f = it->second;

      int best_a = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < env::kActionCount; ++a) {
        const env::Coord d = env::action_delta(static_cast<env::Action>(a), st->world.v);
        const env::Coord c{pos.x + d.x, pos.y + d.y};
        if (!st->world.in_grid(c) || st->world.is_building(c)) continue;
        const double val = occupancy_cost(st->world, c, st->budget) + f.at(c);
        if (val < best) {
          best = val;
          best_a = a;
        }
      }
      if (best_a < 0) continue;
      if (!reply.empty()) reply += " ";
      reply += "UE" + std::to_string(ue) + ": " +
               env::action_word(static_cast<env::Action>(best_a)) + ".";
    }
    return reply;
  });
}

TeacherEpisode lsc_episode(const env::GridWorld& world,
                           const std::vector<env::Coord>& starts,
                           const std::vector<env::Coord>& dests,
                           const chan::LinkBudget& budget, TeacherClient& client,
                           double snr_db, int k_examples, int history_rounds,
                           int t_max, Rng& rng) {
  const size_t n = starts.size();
  auto agents = env::reset(world, starts, dests);

  PromptBundle bundle;
  bundle.width = world.width;
  bundle.height = world.height;
  bundle.bs = world.bs;
  bundle.ues = static_cast<int>(n);
  bundle.examples = builtin_examples(k_examples);

  TeacherEpisode ep;
  ep.trajs.resize(n);
  for (size_t j = 0; j < n; ++j) ep.trajs[j].ue = static_cast<int>(j);

  std::vector<PromptRound> history;
  for (int t = 0; t < t_max; ++t) {
    bool any_live = false;
    for (const auto& a : agents) any_live |= !a.done;
    if (!any_live) break;

    bundle.uplinks.clear();
    for (size_t j = 0; j < n; ++j) {
      if (agents[j].done) continue;
      chan::TextMessage msg{render_uplink(world, agents, static_cast<int>(j),
                                          budget.eta())};
      bundle.uplinks.push_back(chan::transmit_text(msg, snr_db, rng).text);
    }
    bundle.history.assign(
        history.end() - std::min<size_t>(history.size(),
                                         static_cast<size_t>(std::max(history_rounds, 0))),
        history.end());

    const std::string reply = client.complete(make_prompt(bundle));

    std::vector<env::Action> acts(n, env::Action::North);
    std::vector<bool> was_live(n, false);
    std::vector<env::Coord> pre(n);
    for (size_t j = 0; j < n; ++j) {
      if (agents[j].done) continue;
      was_live[j] = true;
      pre[j] = agents[j].pos;
      acts[j] = parse_action(reply, static_cast<int>(j)).value_or(env::Action::North);
    }
    env::step(world, agents, acts);
    for (size_t j = 0; j < n; ++j) {
      if (was_live[j]) ep.trajs[j].pairs.push_back({pre[j], acts[j]});
    }
    history.push_back({bundle.uplinks, reply});
  }

  ep.success = true;
  for (size_t j = 0; j < n; ++j) {
    ep.trajs[j].final = agents[j].pos;
    ep.success = ep.success && agents[j].done;
  }
  return ep;
}

TeacherKnowledge build_knowledge(const env::GridWorld& world,
                                 const std::vector<env::Coord>& starts,
                                 const std::vector<env::Coord>& dests,
                                 const chan::LinkBudget& budget,
                                 const GenConfig& cfg, Rng& rng,
                                 TeacherClient* client, GenReport* report) {
  if (cfg.episodes <= 0 || cfg.keep <= 0 || cfg.keep > cfg.episodes)
    throw TeacherError("need 0 < keep <= episodes");

  std::vector<TeacherEpisode> pool;
  pool.reserve(static_cast<size_t>(cfg.episodes));
  for (int e = 0; e < cfg.episodes; ++e) {
    if (client) {
      pool.push_back(lsc_episode(world, starts, dests, budget, *client, cfg.snr_db,
                                 cfg.k_examples, cfg.history_rounds, cfg.t_max, rng));
    } else {
      pool.push_back(planner_episode(world, starts, dests, budget, cfg.temperature,
                                     cfg.t_max, rng));
    }
  }

  std::vector<double> costs;
  costs.reserve(pool.size());
  for (const TeacherEpisode& e : pool) costs.push_back(episode_cost(e, world, budget));
  if (report) {
    report->costs = costs;
    report->successes.clear();
    for (const TeacherEpisode& e : pool) report->successes.push_back(e.success);
  }

  TeacherKnowledge k;
  k.width = world.width;
  k.height = world.height;
  k.ues = static_cast<int>(starts.size());
  k.selected = select_top_l(costs, cfg.keep);
  k.per_ue.resize(starts.size());
  for (int n : k.selected) {
    for (size_t j = 0; j < starts.size(); ++j) {
      k.per_ue[j].push_back(refine(pool[static_cast<size_t>(n)].trajs[j]));
    }
  }
  return k;
}

}  // namespace lecnav::teacher
