#include "lecnav/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lecnav/autodiff.hpp"
#include "lecnav/channel.hpp"
#include "lecnav/common.hpp"
#include "lecnav/ec.hpp"
#include "lecnav/env.hpp"
#include "lecnav/lec.hpp"
#include "lecnav/metrics.hpp"
#include "lecnav/teacher.hpp"

namespace lecnav::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
constexpr int kFormatVersion = 1;
constexpr int kSmoothOrder = 3;
constexpr double kConvFraction = 0.8;

// --- schema helpers ---------------------------------------------------------

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ConfigError("config: field '" + field + "' " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void need_object(const json& v, const std::string& field) {
  if (!v.is_object()) fail(field, "must be an object");
}

void allow_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> keys) {
  for (const auto& kv : obj.items()) {
    bool known = false;
    for (const char* k : keys)
      if (kv.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(join(path, kv.key()), "is not a recognized field");
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& need(const json& obj, const std::string& path, const char* key) {
  const json* v = find(obj, key);
  if (!v) fail(join(path, key), "is required");
  return *v;
}

double as_num(const json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& field) {
  if (!v.is_number_integer()) fail(field, "must be an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& field) {
  if (!v.is_boolean()) fail(field, "must be a boolean");
  return v.get<bool>();
}

std::string as_str(const json& v, const std::string& field) {
  if (!v.is_string()) fail(field, "must be a string");
  return v.get<std::string>();
}

double num_field(const json& obj, const std::string& path, const char* key) {
  return as_num(need(obj, path, key), join(path, key));
}

std::string str_field(const json& obj, const std::string& path, const char* key) {
  return as_str(need(obj, path, key), join(path, key));
}

double num_or(const json& obj, const std::string& path, const char* key, double dflt) {
  const json* v = find(obj, key);
  return v ? as_num(*v, join(path, key)) : dflt;
}

int int_or(const json& obj, const std::string& path, const char* key, int dflt) {
  const json* v = find(obj, key);
  return v ? as_int(*v, join(path, key)) : dflt;
}

bool bool_or(const json& obj, const std::string& path, const char* key, bool dflt) {
  const json* v = find(obj, key);
  return v ? as_bool(*v, join(path, key)) : dflt;
}

env::Coord coord_field(const json& obj, const std::string& path, const char* key) {
  const std::string field = join(path, key);
  const json& v = need(obj, path, key);
  if (!v.is_array() || v.size() != 2) fail(field, "must be an [x, y] pair");
  return {as_int(v[0], field + "[0]"), as_int(v[1], field + "[1]")};
}

// --- config loading ---------------------------------------------------------

struct Loaded {
  std::string scheme;
  std::string config_hash;
  std::string scenario_hash;
  env::GridWorld world;
  chan::LinkBudget budget{};
  std::vector<env::Coord> starts, dests;
  ec::TrainConfig train;
  lec::KdConfig kd;
  teacher::GenConfig gen;
  bool teacher_llm = false;
  std::string ep_host;
  int ep_port = 0;
  std::string ep_path;
  std::string knowledge;
  std::string run;
  int eval_episodes = 20;
  int eval_top_k = 8;
  std::vector<uint64_t> seeds;
  fs::path out;
  bool force = false;
};

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

env::GridWorld parse_world(const json& w) {
  need_object(w, "world");
  allow_keys(w, "world", {"map", "synth"});
  const json* map = find(w, "map");
  const json* synth = find(w, "synth");
  if (map && synth) fail("world", "sets both map and synth");
  if (map) {
    const std::string path = as_str(*map, "world.map");
    try {
      return env::load_world(path);
    } catch (const std::exception& e) {
      fail("world.map", "cannot be loaded: " + std::string(e.what()));
    }
  }
  if (!synth) fail("world", "needs either map or synth");

  const std::string sp = "world.synth";
  need_object(*synth, sp);
  allow_keys(*synth, sp,
             {"width", "height", "bs", "buildings", "k0", "alpha", "shadow_std_db",
              "shadow_radius", "blockage", "seed"});
  const int width = as_int(need(*synth, sp, "width"), sp + ".width");
  const int height = as_int(need(*synth, sp, "height"), sp + ".height");
  if (width < 1 || height < 1) fail(sp + ".width", "must describe a non-empty grid");
  const env::Coord bs = coord_field(*synth, sp, "bs");
  if (bs.x < 0 || bs.y < 0 || bs.x >= width || bs.y >= height)
    fail(sp + ".bs", "must lie inside the grid");

  std::vector<uint8_t> mask(static_cast<size_t>(width) * height, 0);
  if (const json* b = find(*synth, "buildings")) {
    if (!b->is_array()) fail(sp + ".buildings", "must be an array of [x, y] pairs");
    for (size_t i = 0; i < b->size(); ++i) {
      const std::string field = sp + ".buildings[" + std::to_string(i) + "]";
      const json& cell = (*b)[i];
      if (!cell.is_array() || cell.size() != 2) fail(field, "must be an [x, y] pair");
      const int x = as_int(cell[0], field + "[0]");
      const int y = as_int(cell[1], field + "[1]");
      if (x < 0 || y < 0 || x >= width || y >= height)
        fail(field, "must lie inside the grid");
      mask[static_cast<size_t>(y) * width + x] = 1;
    }
  }
  if (mask[static_cast<size_t>(bs.y) * width + bs.x] != 0)
    fail(sp + ".bs", "must not sit on a building");

  chan::SynthParams params;
  params.k0 = num_or(*synth, sp, "k0", params.k0);
  params.alpha = num_or(*synth, sp, "alpha", params.alpha);
  params.shadow_std_db = num_or(*synth, sp, "shadow_std_db", params.shadow_std_db);
  params.shadow_radius = int_or(*synth, sp, "shadow_radius", params.shadow_radius);
  params.blockage = num_or(*synth, sp, "blockage", params.blockage);
  if (params.k0 <= 0) fail(sp + ".k0", "must be positive");
  if (params.blockage <= 0) fail(sp + ".blockage", "must be positive");
  const int seed = int_or(*synth, sp, "seed", 0);
  if (seed < 0) fail(sp + ".seed", "must be non-negative");

  env::GridWorld world;
  world.width = width;
  world.height = height;
  world.building = mask;
  world.bs = bs;
  world.channel =
      chan::synth_map(width, height, mask, bs.x, bs.y, params, static_cast<uint64_t>(seed));
  return world;
}

chan::LinkBudget parse_budget(const json& b) {
  need_object(b, "budget");
  allow_keys(b, "budget", {"p_r", "sigma2", "snr_db", "p_th"});
  chan::LinkBudget out;
  out.p_r = num_field(b, "budget", "p_r");
  if (out.p_r <= 0) fail("budget.p_r", "must be positive");
  out.p_th = num_field(b, "budget", "p_th");
  if (out.p_th <= 0) fail("budget.p_th", "must be positive");
  const json* sigma2 = find(b, "sigma2");
  const json* snr_db = find(b, "snr_db");
  if (sigma2 && snr_db) fail("budget", "sets both sigma2 and snr_db");
  if (!sigma2 && !snr_db) fail("budget.sigma2", "is required (or give snr_db)");
  if (sigma2) {
    out.sigma2 = as_num(*sigma2, "budget.sigma2");
  } else {
    out.sigma2 = out.p_r / std::pow(10.0, as_num(*snr_db, "budget.snr_db") / 10.0);
  }
  if (out.sigma2 <= 0) fail("budget.sigma2", "must be positive");
  return out;
}

void parse_ues(const json& u, const env::GridWorld& world,
               std::vector<env::Coord>& starts, std::vector<env::Coord>& dests) {
  if (!u.is_array() || u.empty()) fail("ues", "must be a non-empty array");
  auto check_cell = [&](env::Coord c, const std::string& field) {
    if (!world.in_grid(c)) fail(field, "must lie inside the grid");
    if (world.is_building(c)) fail(field, "must not sit on a building");
  };
  for (size_t i = 0; i < u.size(); ++i) {
    const std::string path = "ues[" + std::to_string(i) + "]";
    need_object(u[i], path);
    allow_keys(u[i], path, {"start", "dest"});
    const env::Coord start = coord_field(u[i], path, "start");
    const env::Coord dest = coord_field(u[i], path, "dest");
    check_cell(start, path + ".start");
    check_cell(dest, path + ".dest");
    if (start == dest) fail(path + ".dest", "must differ from start");
    starts.push_back(start);
    dests.push_back(dest);
  }
}

ec::TrainConfig parse_train(const json* t) {
  ec::TrainConfig tc;
  if (!t) return tc;
  need_object(*t, "train");
  allow_keys(*t, "train",
             {"episodes", "batch_episodes", "target_sync_interval", "t_max", "lr",
              "gamma", "eps0", "eps_decay", "train_noise", "net"});
  tc.episodes = int_or(*t, "train", "episodes", tc.episodes);
  tc.batch_episodes = int_or(*t, "train", "batch_episodes", tc.batch_episodes);
  tc.target_sync_interval =
      int_or(*t, "train", "target_sync_interval", tc.target_sync_interval);
  tc.t_max = int_or(*t, "train", "t_max", tc.t_max);
  tc.lr = num_or(*t, "train", "lr", tc.lr);
  tc.gamma = num_or(*t, "train", "gamma", tc.gamma);
  tc.eps0 = num_or(*t, "train", "eps0", tc.eps0);
  tc.eps_decay = num_or(*t, "train", "eps_decay", tc.eps_decay);
  tc.train_noise = bool_or(*t, "train", "train_noise", tc.train_noise);
  if (tc.episodes < 0) fail("train.episodes", "must be non-negative");
  if (tc.batch_episodes < 1) fail("train.batch_episodes", "must be positive");
  if (tc.target_sync_interval < 1) fail("train.target_sync_interval", "must be positive");
  if (tc.t_max < 1) fail("train.t_max", "must be positive");
  if (tc.lr <= 0) fail("train.lr", "must be positive");
  if (tc.gamma < 0 || tc.gamma > 1) fail("train.gamma", "must sit in [0, 1]");
  if (tc.eps0 < 0 || tc.eps0 > 1) fail("train.eps0", "must sit in [0, 1]");
  if (tc.eps_decay <= 0 || tc.eps_decay > 1) fail("train.eps_decay", "must sit in (0, 1]");
  if (const json* n = find(*t, "net")) {
    const std::string np = "train.net";
    need_object(*n, np);
    allow_keys(*n, np, {"msg_len", "hidden_dim", "enc_width", "bs_hidden", "dest_delta"});
    tc.net.msg_len = int_or(*n, np, "msg_len", tc.net.msg_len);
    tc.net.hidden_dim = int_or(*n, np, "hidden_dim", tc.net.hidden_dim);
    tc.net.enc_width = int_or(*n, np, "enc_width", tc.net.enc_width);
    tc.net.bs_hidden = int_or(*n, np, "bs_hidden", tc.net.bs_hidden);
    tc.net.dest_delta = bool_or(*n, np, "dest_delta", tc.net.dest_delta);
    if (tc.net.msg_len < 1) fail(np + ".msg_len", "must be positive");
    if (tc.net.hidden_dim < 1) fail(np + ".hidden_dim", "must be positive");
    if (tc.net.enc_width < 1) fail(np + ".enc_width", "must be positive");
    if (tc.net.bs_hidden < 1) fail(np + ".bs_hidden", "must be positive");
  }
  return tc;
}

void parse_kd(const json* k, lec::KdConfig& kd) {
  if (!k) return;
  need_object(*k, "kd");
  allow_keys(*k, "kd", {"lambda", "smoothing_eps", "bonus"});
  kd.lambda = num_or(*k, "kd", "lambda", kd.lambda);
  kd.smoothing_eps = num_or(*k, "kd", "smoothing_eps", kd.smoothing_eps);
  kd.bonus = num_or(*k, "kd", "bonus", kd.bonus);
  if (kd.lambda < 0) fail("kd.lambda", "must be non-negative");
  if (kd.smoothing_eps <= 0 || kd.smoothing_eps >= 1.0 / env::kActionCount)
    fail("kd.smoothing_eps", "must sit in (0, 1/8)");
  if (kd.bonus < 0) fail("kd.bonus", "must be non-negative");
}

void parse_teacher(const json* t, Loaded& L) {
  if (!t) return;
  need_object(*t, "teacher");
  allow_keys(*t, "teacher",
             {"source", "episodes", "keep", "temperature", "t_max", "snr_db",
              "k_examples", "history_rounds", "endpoint"});
  const std::string source =
      find(*t, "source") ? as_str(*find(*t, "source"), "teacher.source") : "planner";
  if (source != "planner" && source != "llm")
    fail("teacher.source", "must be 'planner' or 'llm'");
  L.teacher_llm = source == "llm";
  teacher::GenConfig& g = L.gen;
  g.episodes = int_or(*t, "teacher", "episodes", g.episodes);
  g.keep = int_or(*t, "teacher", "keep", g.keep);
  g.temperature = num_or(*t, "teacher", "temperature", g.temperature);
  g.t_max = int_or(*t, "teacher", "t_max", g.t_max);
  g.snr_db = num_or(*t, "teacher", "snr_db", g.snr_db);
  g.k_examples = int_or(*t, "teacher", "k_examples", g.k_examples);
  g.history_rounds = int_or(*t, "teacher", "history_rounds", g.history_rounds);
  if (g.episodes < 1) fail("teacher.episodes", "must be positive");
  if (g.keep < 1 || g.keep > g.episodes)
    fail("teacher.keep", "must sit in [1, teacher.episodes]");
  if (g.temperature < 0) fail("teacher.temperature", "must be non-negative");
  if (g.t_max < 1) fail("teacher.t_max", "must be positive");
  if (g.k_examples < 0 || g.k_examples > 4) fail("teacher.k_examples", "must sit in [0, 4]");
  if (g.history_rounds < 0) fail("teacher.history_rounds", "must be non-negative");
  const json* ep = find(*t, "endpoint");
  if (L.teacher_llm) {
    if (!ep) fail("teacher.endpoint", "is required when source is 'llm'");
    const std::string pp = "teacher.endpoint";
    need_object(*ep, pp);
    allow_keys(*ep, pp, {"host", "port", "path"});
    L.ep_host = str_field(*ep, pp, "host");
    L.ep_port = as_int(need(*ep, pp, "port"), pp + ".port");
    L.ep_path = str_field(*ep, pp, "path");
    if (L.ep_port < 1 || L.ep_port > 65535) fail(pp + ".port", "must be a TCP port");
  } else if (ep) {
    fail("teacher.endpoint", "is only valid when source is 'llm'");
  }
}

std::vector<uint64_t> parse_seeds(const json& s) {
  if (!s.is_array() || s.empty()) fail("seeds", "must be a non-empty array");
  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < s.size(); ++i) {
    const std::string field = "seeds[" + std::to_string(i) + "]";
    if (!s[i].is_number_integer() || (s[i].is_number_integer() && !s[i].is_number_unsigned() &&
                                      s[i].get<int64_t>() < 0))
      fail(field, "must be a non-negative integer");
    seeds.push_back(s[i].get<uint64_t>());
  }
  std::vector<uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    fail("seeds", "must not repeat");
  return seeds;
}

std::string hash_config(const json& raw) {
  json c = raw;
  c.erase("out");
  c.erase("seeds");
  return to_hex(fnv1a(c.dump()));
}

std::string hash_scenario(const Loaded& L) {
  json s;
  s["world"]["width"] = L.world.width;
  s["world"]["height"] = L.world.height;
  s["world"]["building"] = L.world.building;
  s["world"]["bs"] = {L.world.bs.x, L.world.bs.y};
  s["world"]["gains"] = L.world.channel.gains;
  s["budget"] = {{"p_r", L.budget.p_r}, {"sigma2", L.budget.sigma2}, {"p_th", L.budget.p_th}};
  json ues = json::array();
  for (size_t j = 0; j < L.starts.size(); ++j)
    ues.push_back({L.starts[j].x, L.starts[j].y, L.dests[j].x, L.dests[j].y});
  s["ues"] = ues;
  return to_hex(fnv1a(s.dump()));
}

struct Overrides {
  std::string out;
  std::vector<uint64_t> seeds;
  bool force = false;
};

Loaded load_config(const std::string& path, const std::string& scheme,
                   const Overrides& ov) {
  json raw = load_json_file(path);
  if (!raw.is_object()) throw ConfigError("config: root must be a JSON object");
  allow_keys(raw, "",
             {"scheme", "world", "budget", "ues", "train", "kd", "teacher", "knowledge",
              "run", "eval", "seeds", "out"});

  Loaded L;
  L.scheme = str_field(raw, "", "scheme");
  if (L.scheme != scheme)
    fail("scheme", "must be '" + scheme + "' for this subcommand, got '" + L.scheme + "'");
  L.config_hash = hash_config(raw);
  L.world = parse_world(need(raw, "", "world"));

  if (scheme != "gen-map") {
    L.budget = parse_budget(need(raw, "", "budget"));
    parse_ues(need(raw, "", "ues"), L.world, L.starts, L.dests);
    L.scenario_hash = hash_scenario(L);
    L.seeds = parse_seeds(need(raw, "", "seeds"));
  }
  if (scheme == "ec" || scheme == "lec" || scheme == "eval") {
    L.train = parse_train(find(raw, "train"));
    L.train.starts = L.starts;
    L.train.dests = L.dests;
  }
  if (scheme == "lec") {
    parse_kd(find(raw, "kd"), L.kd);
    L.knowledge = str_field(raw, "", "knowledge");
  }
  if (scheme == "teacher-gen") parse_teacher(find(raw, "teacher"), L);
  if (scheme == "eval") {
    L.run = str_field(raw, "", "run");
    if (const json* e = find(raw, "eval")) {
      need_object(*e, "eval");
      allow_keys(*e, "eval", {"episodes", "top_k"});
      L.eval_episodes = int_or(*e, "eval", "episodes", L.eval_episodes);
      L.eval_top_k = int_or(*e, "eval", "top_k", L.eval_top_k);
      if (L.eval_episodes < 1) fail("eval.episodes", "must be positive");
      if (L.eval_top_k < 1) fail("eval.top_k", "must be positive");
    }
  }

  if (!ov.seeds.empty()) {
    json j = ov.seeds;
    L.seeds = parse_seeds(j);
  }
  std::string out = ov.out;
  if (out.empty()) {
    const json* o = find(raw, "out");
    if (o) out = as_str(*o, "out");
  }
  if (out.empty()) fail("out", "is required (or pass --out)");
  L.out = out;
  L.force = ov.force;
  return L;
}

// --- output plumbing --------------------------------------------------------

std::string fmt(double v) { return json(v).dump(); }

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  q += '"';
  return q;
}

std::ofstream open_csv(const fs::path& p, const std::string& hash,
                       const std::string& columns) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << "# config_hash=" << hash << "\n" << columns << "\n";
  return f;
}

void purge_outputs(const fs::path& out) {
  std::error_code ec;
  fs::remove(out / "manifest.json", ec);
  fs::remove(out / "map.json", ec);
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0)
      fs::remove_all(e.path());
  }
}

void prepare_out(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out))
      throw ConfigError("config: output path '" + out.string() + "' is not a directory");
    if (!fs::is_empty(out)) {
      if (!force)
        throw ConfigError("config: output directory '" + out.string() +
                          "' is not empty (pass --force to overwrite)");
      purge_outputs(out);
    }
  } else {
    fs::create_directories(out);
  }
}

void for_each_seed(const std::vector<uint64_t>& seeds, const fs::path& out,
                   const std::function<void(uint64_t, const fs::path&)>& work) {
  std::vector<fs::path> dirs;
  dirs.reserve(seeds.size());
  for (uint64_t s : seeds) {
    dirs.push_back(out / ("seed_" + std::to_string(s)));
    fs::create_directories(dirs.back());
  }
  std::vector<std::string> errors(seeds.size());
  std::vector<std::thread> pool;
  pool.reserve(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    pool.emplace_back([&, i] {
      try {
        work(seeds[i], dirs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      } catch (...) {
        errors[i] = "unknown error";
      }
    });
  }
  for (auto& t : pool) t.join();
  for (size_t i = 0; i < seeds.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("seed " + std::to_string(seeds[i]) + ": " + errors[i]);
}

void write_manifest(const Loaded& L, double wall_s,
                    const std::vector<std::string>& outputs) {
  json m;
  m["config_hash"] = L.config_hash;
  if (!L.scenario_hash.empty()) m["scenario_hash"] = L.scenario_hash;
  m["scheme"] = L.scheme;
  m["seeds"] = L.seeds;
  m["versions"] = {{"lecnav", kVersion}, {"format", kFormatVersion}};
  m["wall_time_s"] = wall_s;
  m["outputs"] = outputs;
  std::ofstream f(L.out / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in '" + L.out.string() + "'");
  f << m.dump(2) << "\n";
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_curve(const fs::path& p, const std::string& hash,
                 const std::vector<ec::CurveRow>& rows, bool with_kld) {
  std::ofstream f = open_csv(
      p, hash,
      with_kld ? "episode,mean_return,epsilon,loss,kld_mean" : "episode,mean_return,epsilon,loss");
  for (const ec::CurveRow& r : rows) {
    f << r.episode << ',' << fmt(r.mean_return) << ',' << fmt(r.epsilon) << ','
      << fmt(r.loss);
    if (with_kld) f << ',' << fmt(r.kld_mean);
    f << '\n';
  }
}

// --- subcommands ------------------------------------------------------------

int cmd_gen_map(Loaded& L) {
  const auto t0 = std::chrono::steady_clock::now();
  prepare_out(L.out, L.force);
  env::save_world(L.world, (L.out / "map.json").string());
  write_manifest(L, elapsed_s(t0), {"map.json"});
  return 0;
}

int cmd_gen_teacher(Loaded& L) {
  const auto t0 = std::chrono::steady_clock::now();
  prepare_out(L.out, L.force);
  for_each_seed(L.seeds, L.out, [&](uint64_t seed, const fs::path& dir) {
    Rng rng(seed);
    std::unique_ptr<teacher::TeacherClient> client;
    if (L.teacher_llm)
      client = std::make_unique<teacher::HttpTeacherClient>(L.ep_host, L.ep_port, L.ep_path);
    teacher::GenReport report;
    teacher::TeacherKnowledge k = teacher::build_knowledge(
        L.world, L.starts, L.dests, L.budget, L.gen, rng, client.get(), &report);
    teacher::save_knowledge(k, (dir / "knowledge.jsonl").string());
    std::vector<bool> selected(report.costs.size(), false);
    for (int n : k.selected) selected[static_cast<size_t>(n)] = true;
    std::ofstream f = open_csv(dir / "selection.csv", L.config_hash,
                               "episode,cost,success,selected");
    for (size_t e = 0; e < report.costs.size(); ++e) {
      f << e << ',' << fmt(report.costs[e]) << ',' << (report.successes[e] ? 1 : 0) << ','
        << (selected[e] ? 1 : 0) << '\n';
    }
  });
  std::vector<std::string> outputs;
  for (uint64_t s : L.seeds) {
    outputs.push_back("seed_" + std::to_string(s) + "/knowledge.jsonl");
    outputs.push_back("seed_" + std::to_string(s) + "/selection.csv");
  }
  write_manifest(L, elapsed_s(t0), outputs);
  return 0;
}

int cmd_train(Loaded& L, bool lec_mode) {
  const auto t0 = std::chrono::steady_clock::now();
  teacher::TeacherKnowledge knowledge;
  if (lec_mode) {
    try {
      knowledge = teacher::load_knowledge(L.knowledge);
    } catch (const std::exception& e) {
      fail("knowledge", "cannot be loaded from '" + L.knowledge + "': " + e.what());
    }
    if (knowledge.ues != static_cast<int>(L.starts.size()))
      fail("knowledge", "covers " + std::to_string(knowledge.ues) + " UEs, config has " +
                            std::to_string(L.starts.size()));
    if (knowledge.width != L.world.width || knowledge.height != L.world.height)
      fail("knowledge", "grid dimensions do not match the world");
  }
  prepare_out(L.out, L.force);
  for_each_seed(L.seeds, L.out, [&](uint64_t seed, const fs::path& dir) {
    ec::TrainConfig tc = L.train;
    tc.seed = seed;
    ec::TrainResult res;
    if (lec_mode) {
      lec::KdConfig kc = L.kd;
      kc.train = tc;
      res = lec::train_lec(kc, L.world, L.budget, knowledge);
    } else {
      res = ec::train(tc, L.world, L.budget);
    }
    res.params.save((dir / "params.json").string());
    write_curve(dir / "curve.csv", L.config_hash, res.curve, lec_mode);
  });
  std::vector<std::string> outputs;
  for (uint64_t s : L.seeds) {
    outputs.push_back("seed_" + std::to_string(s) + "/curve.csv");
    outputs.push_back("seed_" + std::to_string(s) + "/params.json");
  }
  write_manifest(L, elapsed_s(t0), outputs);
  return 0;
}

int cmd_eval(Loaded& L) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<fs::path> checkpoints;
  for (uint64_t s : L.seeds) {
    fs::path p = fs::path(L.run) / ("seed_" + std::to_string(s)) / "params.json";
    if (!fs::exists(p)) fail("run", "has no checkpoint '" + p.string() + "'");
    checkpoints.push_back(p);
  }
  prepare_out(L.out, L.force);
  const double eta = L.budget.eta();
  const int ues = static_cast<int>(L.starts.size());
  for_each_seed(L.seeds, L.out, [&](uint64_t seed, const fs::path& dir) {
    size_t idx = 0;
    while (L.seeds[idx] != seed) ++idx;
    ad::ParamSet params = ad::ParamSet::load(checkpoints[idx].string());
    ec::TrainConfig tc = L.train;
    tc.seed = seed;
    Rng base(seed);
    Rng rng = base.spawn();
    const std::vector<ec::EpisodeRecord> eps =
        ec::evaluate(params, tc, L.world, L.budget, L.eval_episodes, rng);

    std::ofstream ef = open_csv(dir / "eval.csv", L.config_hash,
                                "episode,ue,arrived,steps,ret,final_cppr");
    std::ofstream cf = open_csv(dir / "cppr.csv", L.config_hash, "episode,ue,t,cppr");
    double return_sum = 0.0;
    int complete = 0;
    std::vector<double> travels;           // complete episodes only
    std::vector<double> final_cpprs;       // per complete episode, UE mean
    for (size_t e = 0; e < eps.size(); ++e) {
      const ec::EpisodeRecord& ep = eps[e];
      return_sum += ep.mean_return;
      const bool all_arrived =
          std::all_of(ep.arrived.begin(), ep.arrived.end(), [](bool a) { return a; });
      std::vector<int> lengths(ues);
      for (int j = 0; j < ues; ++j) lengths[j] = ep.t_used(j);
      double cppr_sum = 0.0;
      for (int j = 0; j < ues; ++j) {
        std::string final_cppr;
        if (all_arrived) {
          std::vector<double> gains;
          gains.reserve(ep.steps[j].size());
          for (const ec::StepRecord& st : ep.steps[j])
            gains.push_back(L.world.gain_at(st.to));
          const std::vector<double> curve =
              metrics::cppr_curve(gains, eta, lengths, ep.arrived);
          for (size_t t = 0; t < curve.size(); ++t)
            cf << e << ',' << j << ',' << (t + 1) << ',' << fmt(curve[t]) << '\n';
          final_cppr = fmt(curve.back());
          cppr_sum += curve.back();
        }
        ef << e << ',' << j << ',' << (ep.arrived[j] ? 1 : 0) << ',' << ep.t_used(j) << ','
           << fmt(ep.returns[j]) << ',' << final_cppr << '\n';
      }
      if (all_arrived) {
        ++complete;
        travels.push_back(*std::max_element(lengths.begin(), lengths.end()));
        final_cpprs.push_back(cppr_sum / ues);
      }
    }

    std::string cppr_mean, sel_travel;
    int sel_count = 0;
    if (complete > 0) {
      double c = 0.0;
      for (double v : final_cpprs) c += v;
      cppr_mean = fmt(c / complete);
      const std::vector<int> sel =
          metrics::top_k_indices(travels, std::min<int>(L.eval_top_k, complete));
      double tsum = 0.0;
      for (int i : sel) tsum += travels[static_cast<size_t>(i)];
      sel_count = static_cast<int>(sel.size());
      sel_travel = fmt(tsum / sel_count);
    }
    std::ofstream sf = open_csv(
        dir / "summary.csv", L.config_hash,
        "episodes,complete,completion_rate,mean_return,mean_final_cppr,selected_mean_travel,"
        "selected_count");
    sf << eps.size() << ',' << complete << ','
       << fmt(static_cast<double>(complete) / static_cast<double>(eps.size())) << ','
       << fmt(return_sum / static_cast<double>(eps.size())) << ',' << cppr_mean << ','
       << sel_travel << ',' << sel_count << '\n';
  });
  std::vector<std::string> outputs;
  for (uint64_t s : L.seeds) {
    outputs.push_back("seed_" + std::to_string(s) + "/eval.csv");
    outputs.push_back("seed_" + std::to_string(s) + "/cppr.csv");
    outputs.push_back("seed_" + std::to_string(s) + "/summary.csv");
  }
  write_manifest(L, elapsed_s(t0), outputs);
  return 0;
}

// --- compare ----------------------------------------------------------------

struct Csv {
  std::vector<std::string> cols;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

Csv read_csv(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot read '" + p.string() + "'");
  Csv csv;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (csv.cols.empty()) {
      csv.cols = split_csv_line(line);
    } else {
      csv.rows.push_back(split_csv_line(line));
    }
  }
  return csv;
}

int col_index(const Csv& csv, const std::string& name) {
  for (size_t i = 0; i < csv.cols.size(); ++i)
    if (csv.cols[i] == name) return static_cast<int>(i);
  return -1;
}

std::optional<int> curve_convergence(const std::vector<double>& mean_returns) {
  const int n = static_cast<int>(mean_returns.size());
  int window = metrics::suggested_window(n, kSmoothOrder);
  if (window > n) window = (n % 2 == 1) ? n : n - 1;
  if (window <= kSmoothOrder) return std::nullopt;
  const std::vector<double> sm = metrics::smooth(mean_returns, kSmoothOrder, window);
  return metrics::convergence_episode(sm, kConvFraction);
}

struct RunSummary {
  std::string dir;
  std::string scheme;
  std::string config_hash;
  std::string scenario_hash;
  int curve_seeds = 0;
  int converged = 0;
  double conv_sum = 0.0;
  double final_return_sum = 0.0;
  int eval_seeds = 0;
  double cppr_sum = 0.0;
  int cppr_seeds = 0;
  double eval_return_sum = 0.0;

  std::optional<double> conv_mean() const {
    if (converged == 0) return std::nullopt;
    return conv_sum / converged;
  }
};

RunSummary summarize_run(const std::string& dir) {
  const fs::path root(dir);
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath))
    throw ConfigError("config: run directory '" + dir +
                      "' has no manifest.json (incomplete run?)");
  json m = load_json_file(mpath.string());
  RunSummary rs;
  rs.dir = dir;
  rs.scheme = m.value("scheme", "");
  rs.config_hash = m.value("config_hash", "");
  rs.scenario_hash = m.value("scenario_hash", "");
  std::vector<uint64_t> seeds;
  if (m.contains("seeds")) seeds = m["seeds"].get<std::vector<uint64_t>>();

  for (uint64_t s : seeds) {
    const fs::path sd = root / ("seed_" + std::to_string(s));
    const fs::path curve = sd / "curve.csv";
    if (fs::exists(curve)) {
      Csv csv = read_csv(curve);
      const int ci = col_index(csv, "mean_return");
      if (ci < 0)
        throw std::runtime_error("'" + curve.string() + "' has no mean_return column");
      std::vector<double> returns;
      returns.reserve(csv.rows.size());
      for (const auto& row : csv.rows) returns.push_back(std::stod(row[ci]));
      if (!returns.empty()) {
        ++rs.curve_seeds;
        if (const std::optional<int> e = curve_convergence(returns)) {
          ++rs.converged;
          rs.conv_sum += *e;
        }
        const size_t tail = std::max<size_t>(1, returns.size() / 10);
        double sum = 0.0;
        for (size_t i = returns.size() - tail; i < returns.size(); ++i) sum += returns[i];
        rs.final_return_sum += sum / tail;
      }
    }
    const fs::path summary = sd / "summary.csv";
    if (fs::exists(summary)) {
      Csv csv = read_csv(summary);
      if (csv.rows.empty()) continue;
      ++rs.eval_seeds;
      const int ri = col_index(csv, "mean_return");
      if (ri >= 0 && !csv.rows[0][ri].empty())
        rs.eval_return_sum += std::stod(csv.rows[0][ri]);
      const int pi = col_index(csv, "mean_final_cppr");
      if (pi >= 0 && !csv.rows[0][pi].empty()) {
        ++rs.cppr_seeds;
        rs.cppr_sum += std::stod(csv.rows[0][pi]);
      }
    }
  }
  return rs;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out_file) {
  std::vector<RunSummary> runs;
  runs.reserve(dirs.size());
  for (const std::string& d : dirs) runs.push_back(summarize_run(d));
  for (const RunSummary& r : runs) {
    if (r.scenario_hash.empty())
      throw ConfigError("config: run '" + r.dir + "' records no scenario hash");
    if (r.scenario_hash != runs[0].scenario_hash)
      throw ConfigError("config: runs '" + runs[0].dir + "' and '" + r.dir +
                        "' cover different scenarios");
  }

  std::ofstream f(out_file);
  if (!f) throw std::runtime_error("cannot write '" + out_file + "'");
  f << "# scenario_hash=" << runs[0].scenario_hash << "\n";
  f << "kind,run,other,metric,value\n";
  auto row = [&](const char* kind, const std::string& run, const std::string& other,
                 const std::string& metric, const std::string& value) {
    f << kind << ',' << csv_cell(run) << ',' << csv_cell(other) << ',' << metric << ','
      << value << '\n';
  };
  for (const RunSummary& r : runs) {
    row("run", r.dir, "", "scheme", r.scheme);
    row("run", r.dir, "", "config_hash", r.config_hash);
    if (r.curve_seeds > 0) {
      row("run", r.dir, "", "convergence_rate",
          fmt(static_cast<double>(r.converged) / r.curve_seeds));
      if (const std::optional<double> m = r.conv_mean())
        row("run", r.dir, "", "convergence_episode_mean", fmt(*m));
      row("run", r.dir, "", "final_return_mean", fmt(r.final_return_sum / r.curve_seeds));
    }
    if (r.eval_seeds > 0)
      row("run", r.dir, "", "eval_return_mean", fmt(r.eval_return_sum / r.eval_seeds));
    if (r.cppr_seeds > 0)
      row("run", r.dir, "", "final_cppr_mean", fmt(r.cppr_sum / r.cppr_seeds));
  }
  for (const RunSummary& a : runs) {
    const std::optional<double> ea = a.conv_mean();
    if (!ea || *ea <= 0) continue;
    for (const RunSummary& b : runs) {
      if (&a == &b) continue;
      const std::optional<double> eb = b.conv_mean();
      if (!eb) continue;
      row("pair", a.dir, b.dir, "convergence_reduction",
          fmt(metrics::percentage_reduction(*ea, *eb)));
    }
  }
  return 0;
}

}  // namespace

int main_impl(int argc, const char* const* argv) {
  CLI::App app{"grid navigation: train, evaluate, and compare message-passing policies"};
  app.require_subcommand(1);

  std::string config_path, out_override, compare_out;
  std::vector<uint64_t> seed_override;
  bool force = false;
  std::vector<std::string> compare_dirs;

  struct Sub {
    CLI::App* cmd;
    const char* scheme;
  };
  std::vector<Sub> subs;
  auto add = [&](const char* name, const char* desc, const char* scheme) {
    CLI::App* c = app.add_subcommand(name, desc);
    c->add_option("--config", config_path, "experiment config JSON file")->required();
    c->add_option("--out", out_override, "override the config's output directory");
    c->add_option("--seed", seed_override, "override the config's seed list (repeatable)");
    c->add_flag("--force", force, "overwrite a non-empty output directory");
    subs.push_back({c, scheme});
  };
  add("gen-map", "synthesize a channel map", "gen-map");
  add("gen-teacher", "build teacher trajectories and knowledge", "teacher-gen");
  add("run-ec", "train the message-learning baseline", "ec");
  add("run-lec", "train with teacher distillation", "lec");
  add("eval", "greedy rollouts of a trained run", "eval");
  CLI::App* cmp = app.add_subcommand("compare", "summarize completed runs side by side");
  cmp->add_option("dirs", compare_dirs, "completed run directories")->expected(-2);
  cmp->add_option("--out", compare_out, "summary CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmp->parsed()) {
      if (compare_dirs.size() < 2)
        throw ConfigError("config: compare needs at least two run directories");
      return cmd_compare(compare_dirs, compare_out);
    }
    for (const Sub& s : subs) {
      if (!s.cmd->parsed()) continue;
      Overrides ov{out_override, seed_override, force};
      Loaded L = load_config(config_path, s.scheme, ov);
      if (L.scheme == "gen-map") return cmd_gen_map(L);
      if (L.scheme == "teacher-gen") return cmd_gen_teacher(L);
      if (L.scheme == "ec") return cmd_train(L, false);
      if (L.scheme == "lec") return cmd_train(L, true);
      return cmd_eval(L);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace lecnav::cli
