#pragma once

// Grid-world multi-agent navigation: movement with invalid-action absorption,
// 3x3 field-of-view observations, and the task reward.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lecnav/channel.hpp"
#include "lecnav/common.hpp"

namespace lecnav::env {

struct Coord {
  int x = 0;
  int y = 0;
  bool operator==(const Coord&) const = default;
};

// Eight compass moves. Convention used everywhere: north = +y, east = +x.
// Index order matches the action-word set.
enum class Action : int {
  Northwest = 0,
  North,
  Northeast,
  West,
  East,
  Southwest,
  South,
  Southeast,
};

inline constexpr int kActionCount = 8;

Coord action_delta(Action a, int v);
const std::string& action_word(Action a);
std::optional<Action> action_from_word(const std::string& word);

struct GridWorld {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> building;  // row-major, 1 = building cell
  Coord bs;
  chan::ChannelMap channel;  // same dimensions
  int v = 1;                 // unit traveling distance per step

  bool in_grid(Coord c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
  }
  bool is_building(Coord c) const {
    return building[static_cast<size_t>(c.y) * width + c.x] != 0;
  }
  double gain_at(Coord c) const { return channel.gain_at(c.x, c.y); }
};

struct AgentState {
  Coord pos;
  Coord dest;
  std::vector<Coord> visited;  // append-only within an episode, starts at spawn
  bool done = false;
  int steps = 0;
};

// Patch cell categories for the local location map.
enum class PatchCell : uint8_t { Free = 0, Building, OutOfGrid, OtherUe, Dest };
inline constexpr int kPatchCellKinds = 5;

struct Observation {
  Coord pos;
  std::array<PatchCell, 9> local_loc{};  // rows north-to-south, cols west-to-east
  std::array<uint8_t, 9> local_chan{};   // 1 = weak
  std::vector<uint8_t> traj_img;         // width*height, 1 at visited cells
  double dest_dx = 0.0;                  // (dest - pos) / grid extent
  double dest_dy = 0.0;

  // Flat encoding consumed by the nets: one-hot patch cells, channel bits,
  // trajectory image, and (optionally) the destination offset.
  std::vector<double> encode(bool include_dest_delta) const;
  static int encoded_size(int width, int height, bool include_dest_delta);
};

std::vector<AgentState> reset(const GridWorld& world, const std::vector<Coord>& starts,
                              const std::vector<Coord>& dests);

// Applies the actions (one slot per agent; entries for finished agents are
// ignored) to the live agents in ascending UE index order. Invalid moves are
// absorbed: the agent keeps its position and the returned flag is false.
// Conflict rule: earlier-indexed agents claim their next cell first; a move
// into a claimed cell, or into the current cell of a yet-unresolved or
// finished agent, is invalid (this also makes swaps collisions and guarantees
// live agents never overlap).
std::vector<bool> step(const GridWorld& world, std::vector<AgentState>& agents,
                       const std::vector<Action>& actions);

inline constexpr double kArriveReward = 10.0;
inline constexpr double kInvalidPenalty = 0.1;
inline constexpr double kWeakPenalty = 0.1;
inline constexpr double kTimePenalty = 0.01;
inline constexpr double kTeacherBonus = 0.1;

// Task reward for one agent-step, evaluated on the post-step state.
double reward(const AgentState& agent, bool valid, bool weak, bool teacher_hit,
              bool teacher_bonus_enabled, double teacher_bonus = kTeacherBonus);

Observation observe(const GridWorld& world, const std::vector<AgentState>& agents,
                    int ue, double eta);

// Map file: {width, height, buildings, bs, gains[, phases]}.
GridWorld load_world(const std::string& path);
void save_world(const GridWorld& world, const std::string& path);

}  // namespace lecnav::env
