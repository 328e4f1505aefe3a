#pragma once

// Wireless substrate: per-cell channel-gain maps, channel-inversion power
// control, AWGN corruption of symbol vectors, 16QAM text transport, and a
// synthetic map generator (path loss + correlated shadowing + blockage).

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "lecnav/common.hpp"

namespace lecnav::chan {

struct ChannelMap {
  int width = 0;
  int height = 0;
  std::vector<double> gains;   // row-major |h|^2, linear
  std::vector<double> phases;  // optional, defaults to 0

  double gain_at(int x, int y) const { return gains[static_cast<size_t>(y) * width + x]; }
  double& gain_at(int x, int y) { return gains[static_cast<size_t>(y) * width + x]; }
};

struct LinkBudget {
  double p_r = 0.0;     // target received power, W
  double sigma2 = 0.0;  // noise power, W
  double p_th = 0.0;    // transmit power budget, W

  double eta() const { return p_r / p_th; }
  double snr() const { return p_r / sigma2; }
};

// Fixed-length complex uplink payload; unit average symbol power before tx.
struct SymbolMessage {
  std::vector<std::complex<double>> symbols;
};

struct TextMessage {
  std::string text;
};

// Channel-inversion transmit power P_r / |h|^2. Throws ChannelError on a
// zero gain (cell unreachable on the uplink).
double tx_power(double gain, const LinkBudget& budget);

// Weak-channel test: |h|^2 < eta, strict (boundary gain == eta is non-weak).
bool is_weak(double gain, double eta);
inline bool is_weak(double gain, const LinkBudget& budget) {
  return is_weak(gain, budget.eta());
}

// Uplink through inversion power control + coherent detection: the receiver
// sees sqrt(P_r)*m + CN(0, sigma2), rescaled by 1/sqrt(P_r) so the payload is
// unit-scale with per-symbol noise variance sigma2/P_r. Received SNR is
// P_r/sigma2 regardless of the cell gain.
SymbolMessage transmit_symbols(const SymbolMessage& msg, const LinkBudget& budget, Rng& rng);

// Per-component noise deviation seen by the model after rescaling.
double symbol_noise_std(const LinkBudget& budget);

// 8-bit bytes -> two Gray-coded 16QAM symbols each (unit average energy)
// -> AWGN at snr_db -> minimum-distance demodulation -> bytes.
TextMessage transmit_text(const TextMessage& msg, double snr_db, Rng& rng);

// Constellation point for a 4-bit nibble; exposed for the mapping tests.
std::complex<double> qam16_point(int nibble);
int qam16_demap(std::complex<double> received);

// true = weak (gain < eta), per cell.
std::vector<uint8_t> quantize_map(const ChannelMap& map, double eta);

struct SynthParams {
  double k0 = 1.0;              // gain at unit distance
  double alpha = 3.0;           // path-loss exponent
  double shadow_std_db = 4.0;   // log-normal shadowing deviation
  int shadow_radius = 2;        // smoothing kernel radius, cells
  double blockage = 1e-3;       // attenuation when the ray crosses a building
};

// Deterministic synthetic gain map over the given geometry.
ChannelMap synth_map(int width, int height, const std::vector<uint8_t>& building_mask,
                     int bs_x, int bs_y, const SynthParams& params, uint64_t seed);

}  // namespace lecnav::chan
