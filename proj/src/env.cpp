#include "lecnav/env.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace lecnav::env {

namespace {

struct Delta {
  int dx, dy;
};

// north = +y, east = +x
constexpr std::array<Delta, kActionCount> kDeltas = {{
    {-1, 1},   // northwest
    {0, 1},    // north
    {1, 1},    // northeast
    {-1, 0},   // west
    {1, 0},    // east
    {-1, -1},  // southwest
    {0, -1},   // south
    {1, -1},   // southeast
}};

const std::array<std::string, kActionCount> kWords = {
    "northwest", "north", "northeast", "west",
    "east",      "southwest", "south", "southeast",
};

}  // namespace

Coord action_delta(Action a, int v) {
  const Delta& d = kDeltas[static_cast<size_t>(a)];
  return {d.dx * v, d.dy * v};
}

const std::string& action_word(Action a) { return kWords[static_cast<size_t>(a)]; }

std::optional<Action> action_from_word(const std::string& word) {
  for (int i = 0; i < kActionCount; ++i) {
    if (kWords[static_cast<size_t>(i)] == word) return static_cast<Action>(i);
  }
  return std::nullopt;
}

std::vector<AgentState> reset(const GridWorld& world, const std::vector<Coord>& starts,
                              const std::vector<Coord>& dests) {
  if (starts.size() != dests.size()) throw ConfigError("starts/dests size mismatch");
  std::vector<AgentState> agents;
  agents.reserve(starts.size());
  for (size_t j = 0; j < starts.size(); ++j) {
    if (!world.in_grid(starts[j]) || world.is_building(starts[j]))
      throw ConfigError("ue start not on a free cell");
    if (!world.in_grid(dests[j]) || world.is_building(dests[j]))
      throw ConfigError("ue destination not on a free cell");
    for (size_t k = 0; k < j; ++k) {
      if (starts[k] == starts[j]) throw ConfigError("duplicate ue start");
    }
    AgentState s;
    s.pos = starts[j];
    s.dest = dests[j];
    s.visited = {starts[j]};
    s.done = starts[j] == dests[j];
    agents.push_back(std::move(s));
  }
  return agents;
}

std::vector<bool> step(const GridWorld& world, std::vector<AgentState>& agents,
                       const std::vector<Action>& actions) {
  if (actions.size() != agents.size()) throw ConfigError("actions size mismatch");
  const size_t n = agents.size();
  std::vector<bool> valid(n, true);

  // Finished agents park on their cell and block it.
  std::vector<Coord> claimed;
  claimed.reserve(n);
  for (const AgentState& a : agents) {
    if (a.done) claimed.push_back(a.pos);
  }

  for (size_t j = 0; j < n; ++j) {
    AgentState& a = agents[j];
    if (a.done) continue;
    Coord d = action_delta(actions[j], world.v);
    Coord cand{a.pos.x + d.x, a.pos.y + d.y};

    bool ok = world.in_grid(cand) && !world.is_building(cand);
    if (ok) {
      for (const Coord& c : claimed) {
        if (c == cand) {
          ok = false;
          break;
        }
      }
    }
    if (ok) {
      // A later agent still sitting on the candidate cell blocks it, even if
      // it is about to move away. This also rules out swaps.
      for (size_t k = j + 1; k < n && ok; ++k) {
        if (!agents[k].done && agents[k].pos == cand) ok = false;
      }
    }

    if (ok) {
      a.pos = cand;
      a.visited.push_back(cand);
    }
    valid[j] = ok;
    claimed.push_back(a.pos);
    a.steps += 1;
    if (a.pos == a.dest) a.done = true;
  }
  return valid;
}

double reward(const AgentState& agent, bool valid, bool weak, bool teacher_hit,
              bool teacher_bonus_enabled, double teacher_bonus) {
  const bool at_dest = agent.pos == agent.dest;
  double r = 0.0;
  if (at_dest) r += kArriveReward;
  if (!valid) r -= kInvalidPenalty;
  if (weak) r -= kWeakPenalty;
  if (!at_dest) r -= kTimePenalty;
  if (teacher_bonus_enabled && teacher_hit) r += teacher_bonus;
  return r;
}

Observation observe(const GridWorld& world, const std::vector<AgentState>& agents,
                    int ue, double eta) {
  const AgentState& me = agents[static_cast<size_t>(ue)];
  Observation ob;
  ob.pos = me.pos;

  int idx = 0;
  for (int dy = 1; dy >= -1; --dy) {      // rows north to south
    for (int dx = -1; dx <= 1; ++dx) {    // cols west to east
      Coord c{me.pos.x + dx, me.pos.y + dy};
      PatchCell cell = PatchCell::Free;
      bool weak = true;
      if (!world.in_grid(c)) {
        cell = PatchCell::OutOfGrid;
      } else {
        weak = chan::is_weak(world.gain_at(c), eta);
        if (world.is_building(c)) {
          cell = PatchCell::Building;
        } else {
          bool other = false;
          for (size_t k = 0; k < agents.size(); ++k) {
            if (static_cast<int>(k) != ue && agents[k].pos == c) {
              other = true;
              break;
            }
          }
          if (other) {
            cell = PatchCell::OtherUe;
          } else if (c == me.dest) {
            cell = PatchCell::Dest;
          }
        }
      }
      ob.local_loc[static_cast<size_t>(idx)] = cell;
      ob.local_chan[static_cast<size_t>(idx)] = weak ? 1 : 0;
      ++idx;
    }
  }

  ob.traj_img.assign(static_cast<size_t>(world.width) * world.height, 0);
  for (const Coord& c : me.visited) {
    ob.traj_img[static_cast<size_t>(c.y) * world.width + c.x] = 1;
  }

  const double ex = std::max(1, world.width - 1);
  const double ey = std::max(1, world.height - 1);
  ob.dest_dx = (me.dest.x - me.pos.x) / ex;
  ob.dest_dy = (me.dest.y - me.pos.y) / ey;
  return ob;
}

std::vector<double> Observation::encode(bool include_dest_delta) const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(encoded_size(1, 1, include_dest_delta)) + traj_img.size());
  for (PatchCell c : local_loc) {
    for (int k = 0; k < kPatchCellKinds; ++k) {
      out.push_back(static_cast<int>(c) == k ? 1.0 : 0.0);
    }
  }
  for (uint8_t w : local_chan) out.push_back(w ? 1.0 : 0.0);
  for (uint8_t t : traj_img) out.push_back(t ? 1.0 : 0.0);
  if (include_dest_delta) {
    out.push_back(dest_dx);
    out.push_back(dest_dy);
  }
  return out;
}

int Observation::encoded_size(int width, int height, bool include_dest_delta) {
  return 9 * kPatchCellKinds + 9 + width * height + (include_dest_delta ? 2 : 0);
}

GridWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open map file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("map file " + path + ": " + e.what());
  }
  for (const char* key : {"width", "height", "buildings", "bs", "gains"}) {
    if (!j.contains(key)) throw ConfigError(std::string("map file missing field: ") + key);
  }
  GridWorld w;
  w.width = j.at("width").get<int>();
  w.height = j.at("height").get<int>();
  if (w.width <= 0 || w.height <= 0) throw ConfigError("map width/height must be positive");
  const size_t cells = static_cast<size_t>(w.width) * w.height;
  w.building.assign(cells, 0);
  for (const auto& b : j.at("buildings")) {
    Coord c{b.at(0).get<int>(), b.at(1).get<int>()};
    if (!w.in_grid(c)) throw ConfigError("building cell outside grid");
    w.building[static_cast<size_t>(c.y) * w.width + c.x] = 1;
  }
  w.bs = {j.at("bs").at(0).get<int>(), j.at("bs").at(1).get<int>()};
  if (!w.in_grid(w.bs)) throw ConfigError("bs outside grid");
  auto gains = j.at("gains").get<std::vector<double>>();
  if (gains.size() != cells) throw ConfigError("gains size does not match grid");
  w.channel.width = w.width;
  w.channel.height = w.height;
  w.channel.gains = std::move(gains);
  if (j.contains("phases")) {
    auto phases = j.at("phases").get<std::vector<double>>();
    if (phases.size() != cells) throw ConfigError("phases size does not match grid");
    w.channel.phases = std::move(phases);
  } else {
    w.channel.phases.assign(cells, 0.0);
  }
  if (j.contains("v")) w.v = j.at("v").get<int>();
  if (w.v <= 0) throw ConfigError("v must be positive");
  return w;
}

void save_world(const GridWorld& world, const std::string& path) {
  nlohmann::json j;
  j["width"] = world.width;
  j["height"] = world.height;
  nlohmann::json blds = nlohmann::json::array();
  for (int y = 0; y < world.height; ++y) {
    for (int x = 0; x < world.width; ++x) {
      if (world.building[static_cast<size_t>(y) * world.width + x]) {
        blds.push_back({x, y});
      }
    }
  }
  j["buildings"] = std::move(blds);
  j["bs"] = {world.bs.x, world.bs.y};
  j["gains"] = world.channel.gains;
  j["phases"] = world.channel.phases;
  j["v"] = world.v;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write map file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace lecnav::env
