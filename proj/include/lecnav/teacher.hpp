#pragma once

// Teacher-trajectory pipeline: a cost-to-go planner (default) or a remote
// text-prompted pilot produces navigation episodes; the best episodes are
// selected, their trajectories refined (stall and loop removal), and the
// result packaged as per-UE knowledge for reward shaping and distillation.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lecnav/channel.hpp"
#include "lecnav/common.hpp"
#include "lecnav/env.hpp"

namespace lecnav::teacher {

// One (cell, action) step. The cell the final action lands on is kept
// separately so stalls can be detected without replaying the episode.
struct TrajPair {
  env::Coord z;
  env::Action a;
  bool operator==(const TrajPair&) const = default;
};

struct Trajectory {
  int ue = 0;
  std::vector<TrajPair> pairs;
  env::Coord final;
  int steps() const { return static_cast<int>(pairs.size()); }
  bool operator==(const Trajectory&) const = default;
};

struct TeacherEpisode {
  std::vector<Trajectory> trajs;  // one per UE, index order
  bool success = false;           // all UEs reached their destination
};

// Drops pairs that did not move the agent, then repeatedly cuts the earliest
// closed loop (first revisited cell) until every visited cell is distinct.
// Endpoints are preserved. Idempotent.
Trajectory refine(const Trajectory& t);

// Episode quality used for selection: completion time of the slowest UE plus
// the total inversion transmit power spent along the raw trajectories.
double episode_cost(const TeacherEpisode& e, const env::GridWorld& world,
                    const chan::LinkBudget& budget);

// Indices of the l cheapest episodes (ties to the lower index), ascending cost.
std::vector<int> select_top_l(const std::vector<double>& costs, int l);

struct TeacherKnowledge {
  int width = 0;
  int height = 0;
  int ues = 0;
  std::vector<int> selected;                    // source episode ids
  std::vector<std::vector<Trajectory>> per_ue;  // refined, selected, per UE

  // true if the cell appears in any of this UE's selected trajectories
  // (pair cells and finals).
  bool hit(int ue, env::Coord z) const;

  // Action counts over this UE's trajectory pairs at the given cell.
  std::array<int, env::kActionCount> action_counts(int ue, env::Coord z) const;
};

void save_knowledge(const TeacherKnowledge& k, const std::string& path);
TeacherKnowledge load_knowledge(const std::string& path);

// Static cost-to-go field: Dijkstra from the destination over free cells,
// entering cell c costs 1 + P_r/gain(c). Unreachable cells hold +inf.
struct CostField {
  int width = 0;
  int height = 0;
  std::vector<double> cost;
  double at(env::Coord c) const {
    return cost[static_cast<size_t>(c.y) * width + c.x];
  }
};
CostField cost_to_go(const env::GridWorld& world, env::Coord dest,
                     const chan::LinkBudget& budget);

// One planner-driven episode. Each step every live UE ranks the eight moves
// by the cost-to-go of the cell the move would actually end on (conflicts
// resolved exactly like env::step) and samples uniformly among candidates
// within (1+temperature) of the best. Statically invalid moves double as
// waits. Fails (success=false) if any UE is still traveling at t_max.
TeacherEpisode planner_episode(const env::GridWorld& world,
                               const std::vector<env::Coord>& starts,
                               const std::vector<env::Coord>& dests,
                               const chan::LinkBudget& budget, double temperature,
                               int t_max, Rng& rng);

// --- text-prompted pilot -------------------------------------------------

// Fixed uplink report format:
//   UE<j+1> reports: pos=(x,y) dest=(x,y) blocked=[...] weak=[...]
std::string render_uplink(const env::GridWorld& world,
                          const std::vector<env::AgentState>& agents, int ue,
                          double eta);

struct PromptExample {
  std::vector<std::string> uplinks;
  std::string answer;
};

struct PromptRound {
  std::vector<std::string> uplinks;
  std::string answer;
};

struct PromptBundle {
  int width = 0;
  int height = 0;
  env::Coord bs;
  int ues = 0;
  std::vector<PromptExample> examples;  // few-shot blocks
  std::vector<PromptRound> history;     // earlier rounds this episode
  std::vector<std::string> uplinks;     // current round, possibly corrupted
};

std::string make_prompt(const PromptBundle& b);

// Built-in few-shot examples (k of them, k <= 4).
std::vector<PromptExample> builtin_examples(int k);

// Extracts UE j's move from a pilot reply: the segment after the "UE<j+1>"
// token is scanned left to right, longest action word first. Falls back to
// scanning the whole text when the token is absent.
std::optional<env::Action> parse_action(const std::string& text, int ue);

class TeacherClient {
 public:
  virtual ~TeacherClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

// POSTs {"prompt": ...} to http://host:port/path, expects {"text": ...}.
class HttpTeacherClient : public TeacherClient {
 public:
  HttpTeacherClient(std::string host, int port, std::string path,
                    int timeout_s = 30);
  std::string complete(const std::string& prompt) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  int timeout_s_;
};

class ScriptedTeacherClient : public TeacherClient {
 public:
  explicit ScriptedTeacherClient(std::function<std::string(const std::string&)> fn)
      : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt) override { return fn_(prompt); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

// Offline stand-in for the remote pilot: answers correctly if and only if a
// UE's report in the prompt is intact; a corrupted report gets no answer for
// that UE. Uses the true map to rank moves.
std::unique_ptr<TeacherClient> scripted_pilot(const env::GridWorld& world,
                                              const chan::LinkBudget& budget);

// One pilot-driven episode: uplink reports pass through the 16QAM text
// channel at snr_db before entering the prompt; replies steer the UEs, with
// an unparseable reply falling back to north. history_rounds limits how many
// past rounds stay in the prompt.
TeacherEpisode lsc_episode(const env::GridWorld& world,
                           const std::vector<env::Coord>& starts,
                           const std::vector<env::Coord>& dests,
                           const chan::LinkBudget& budget, TeacherClient& client,
                           double snr_db, int k_examples, int history_rounds,
                           int t_max, Rng& rng);

// --- knowledge generation -------------------------------------------------

struct GenConfig {
  int episodes = 50;       // candidate pool size
  int keep = 5;            // episodes selected
  double temperature = 0.3;
  int t_max = 50;
  // pilot settings, used when a client is given
  double snr_db = 20.0;
  int k_examples = 2;
  int history_rounds = 2;
};

// Per-candidate record of a generation run, for reporting.
struct GenReport {
  std::vector<double> costs;   // pool order
  std::vector<bool> successes; // pool order
};

// Runs the pool, selects the cheapest episodes, refines their trajectories.
// With client == nullptr the planner drives; otherwise the pilot does.
TeacherKnowledge build_knowledge(const env::GridWorld& world,
                                 const std::vector<env::Coord>& starts,
                                 const std::vector<env::Coord>& dests,
                                 const chan::LinkBudget& budget,
                                 const GenConfig& cfg, Rng& rng,
                                 TeacherClient* client = nullptr,
                                 GenReport* report = nullptr);

}  // namespace lecnav::teacher
