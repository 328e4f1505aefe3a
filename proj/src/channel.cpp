#include "lecnav/channel.hpp"

#include <algorithm>
#include <cmath>

namespace lecnav::chan {

double tx_power(double gain, const LinkBudget& budget) {
  if (gain <= 0.0)
    throw ChannelError("singular channel: |h|^2 = " + std::to_string(gain) +
                       ", cell unreachable on the uplink");
  return budget.p_r / gain;
}

bool is_weak(double gain, double eta) { return gain < eta; }

double symbol_noise_std(const LinkBudget& budget) {
  // per real component; complex variance sigma2/P_r splits evenly across I/Q
  return std::sqrt(budget.sigma2 / (2.0 * budget.p_r));
}

SymbolMessage transmit_symbols(const SymbolMessage& msg, const LinkBudget& budget, Rng& rng) {
  SymbolMessage out = msg;
  const double s = symbol_noise_std(budget);
  for (auto& sym : out.symbols)
    sym += std::complex<double>(s * rng.normal(), s * rng.normal());
  return out;
}

namespace {

// Gray code per axis over amplitude levels {-3,-1,+1,+3}/sqrt(10).
// Index: 2 bits -> level such that adjacent levels differ in one bit.
constexpr int kGrayToLevel[4] = {0, 1, 3, 2};  // 00,01,10,11 -> level index
constexpr int kLevelToGray[4] = {0, 1, 3, 2};
constexpr double kQamScale = 0.31622776601683794;  // 1/sqrt(10)

double level_amp(int level_index) { return (2 * level_index - 3) * kQamScale; }

int nearest_level(double x) {
  // thresholds at -2, 0, +2 (scaled)
  if (x < -2.0 * kQamScale) return 0;
  if (x < 0.0) return 1;
  if (x < 2.0 * kQamScale) return 2;
  return 3;
}

}  // namespace

std::complex<double> qam16_point(int nibble) {
  const int gi = (nibble >> 2) & 0x3;
  const int gq = nibble & 0x3;
  return {level_amp(kGrayToLevel[gi]), level_amp(kGrayToLevel[gq])};
}

int qam16_demap(std::complex<double> received) {
  const int li = nearest_level(received.real());
  const int lq = nearest_level(received.imag());
  return (kLevelToGray[li] << 2) | kLevelToGray[lq];
}

TextMessage transmit_text(const TextMessage& msg, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return msg;
  const double es_n0 = std::pow(10.0, snr_db / 10.0);
  const double n0 = 1.0 / es_n0;  // Es = 1 by constellation normalization
  const double s = std::sqrt(n0 / 2.0);
  TextMessage out;
  out.text.reserve(msg.text.size());
  for (unsigned char byte : msg.text) {
    int rebuilt = 0;
    for (int half = 1; half >= 0; --half) {
      const int nibble = (byte >> (4 * half)) & 0xf;
      std::complex<double> rx = qam16_point(nibble);
      rx += std::complex<double>(s * rng.normal(), s * rng.normal());
      rebuilt = (rebuilt << 4) | qam16_demap(rx);
    }
    out.text.push_back(static_cast<char>(rebuilt));
  }
  return out;
}

std::vector<uint8_t> quantize_map(const ChannelMap& map, double eta) {
  std::vector<uint8_t> mask(map.gains.size(), 0);
  for (size_t i = 0; i < map.gains.size(); ++i) mask[i] = map.gains[i] < eta ? 1 : 0;
  return mask;
}

namespace {

// Does the open segment between cell centers cross a building cell?
// Endpoint cells are excluded (the BS may sit on a rooftop).
bool ray_blocked(int x0, int y0, int x1, int y1, int width, int height,
                 const std::vector<uint8_t>& building) {
  const double ax = x0 + 0.5, ay = y0 + 0.5;
  const double bx = x1 + 0.5, by = y1 + 0.5;
  const double len = std::hypot(bx - ax, by - ay);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 4.0)));
  for (int i = 1; i < steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int cx = static_cast<int>(ax + t * (bx - ax));
    const int cy = static_cast<int>(ay + t * (by - ay));
    if (cx < 0 || cy < 0 || cx >= width || cy >= height) continue;
    if ((cx == x0 && cy == y0) || (cx == x1 && cy == y1)) continue;
    if (building[static_cast<size_t>(cy) * width + cx]) return true;
  }
  return false;
}

}  // namespace

ChannelMap synth_map(int width, int height, const std::vector<uint8_t>& building_mask,
                     int bs_x, int bs_y, const SynthParams& params, uint64_t seed) {
  if (static_cast<int>(building_mask.size()) != width * height)
    throw ConfigError("synth_map: building mask size does not match geometry");
  if (bs_x < 0 || bs_y < 0 || bs_x >= width || bs_y >= height)
    throw ConfigError("synth_map: BS position outside the grid");

  Rng rng(seed);
  // white field, then separable box smoothing for spatial correlation
  std::vector<double> white(static_cast<size_t>(width) * height);
  for (auto& v : white) v = rng.normal();
  const int r = params.shadow_radius;
  std::vector<double> tmp(white.size(), 0.0), shadow(white.size(), 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx;
        if (xx < 0 || xx >= width) continue;
        acc += white[static_cast<size_t>(y) * width + xx];
        ++cnt;
      }
      tmp[static_cast<size_t>(y) * width + x] = acc / cnt;
    }
  double mean = 0.0, var = 0.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= height) continue;
        acc += tmp[static_cast<size_t>(yy) * width + x];
        ++cnt;
      }
      shadow[static_cast<size_t>(y) * width + x] = acc / cnt;
      mean += shadow[static_cast<size_t>(y) * width + x];
    }
  mean /= shadow.size();
  for (double v : shadow) var += (v - mean) * (v - mean);
  var /= shadow.size();
  const double rescale = var > 0.0 ? params.shadow_std_db / std::sqrt(var) : 0.0;

  ChannelMap map;
  map.width = width;
  map.height = height;
  map.gains.resize(shadow.size());
  map.phases.assign(shadow.size(), 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const size_t i = static_cast<size_t>(y) * width + x;
      const double d = std::max(1.0, std::hypot(x - bs_x, y - bs_y));
      const double s_db = (shadow[i] - mean) * rescale;
      double g = params.k0 * std::pow(d, -params.alpha) * std::pow(10.0, s_db / 10.0);
      if (ray_blocked(x, y, bs_x, bs_y, width, height, building_mask)) g *= params.blockage;
      map.gains[i] = g;
    }
  return map;
}

}  // namespace lecnav::chan
