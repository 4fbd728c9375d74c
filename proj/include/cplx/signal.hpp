#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cplx/complexconv.hpp"
#include "cplx/dataio.hpp"

namespace cplx::signal {

using cd = std::complex<double>;
using Waveform = std::vector<cd>;

enum class ModKind { Digital, Analog };

struct ModScheme {
  std::string name;
  ModKind kind;
  std::uint16_t id;
};

/// The eleven classes in alphabetical order; `id` is the position in this list.
inline const std::array<ModScheme, 11>& mod_schemes() {
  static const std::array<ModScheme, 11> schemes{{
      {"8PSK", ModKind::Digital, 0},
      {"AM-DSB", ModKind::Analog, 1},
      {"AM-SSB", ModKind::Analog, 2},
      {"BPSK", ModKind::Digital, 3},
      {"CPFSK", ModKind::Digital, 4},
      {"GFSK", ModKind::Digital, 5},
      {"PAM4", ModKind::Digital, 6},
      {"QAM16", ModKind::Digital, 7},
      {"QAM64", ModKind::Digital, 8},
      {"QPSK", ModKind::Digital, 9},
      {"WBFM", ModKind::Analog, 10},
  }};
  return schemes;
}

inline std::vector<std::string> mod_names() {
  std::vector<std::string> out;
  for (const auto& s : mod_schemes()) out.push_back(s.name);
  return out;
}

inline const ModScheme& scheme_by_name(const std::string& name) {
  for (const auto& s : mod_schemes()) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown modulation scheme '" + name + "'");
}

/// -20, -18, ..., 18 dB.
inline std::vector<std::int16_t> snr_grid() {
  std::vector<std::int16_t> out;
  for (int s = -20; s <= 18; s += 2) out.push_back(static_cast<std::int16_t>(s));
  return out;
}

/// I_n = a_n cos(phi_n), Q_n = a_n sin(phi_n).
inline IqSequence euler_components(std::span<const double> a, std::span<const double> phi) {
  if (a.size() != phi.size()) {
    throw DimensionError("euler_components: " + std::to_string(a.size()) + " amplitudes vs " +
                         std::to_string(phi.size()) + " phases");
  }
  std::vector<cd> z(a.size());
  for (std::size_t n = 0; n < a.size(); ++n) z[n] = std::polar(a[n], phi[n]);
  return IqSequence::from_complex(z);
}

struct ModulatorConfig {
  std::size_t sps = 8;
  double rolloff = 0.35;
  std::size_t rrc_half_span = 8;  // symbols on each side of the peak
  double fsk_index = 0.5;
  double gfsk_bt = 0.35;
  double am_index = 0.5;
  double fm_deviation = 0.08;  // peak frequency deviation, cycles/sample
};

/// Unit-energy root-raised-cosine taps, 2 * half_span * sps + 1 long, peak in the middle.
inline std::vector<double> rrc_taps(double beta, std::size_t sps, std::size_t half_span) {
  const std::size_t len = 2 * half_span * sps + 1;
  const double pi = std::numbers::pi;
  std::vector<double> h(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double t = (static_cast<double>(i) - static_cast<double>(half_span * sps)) / static_cast<double>(sps);
    double v;
    if (std::abs(t) < 1e-12) {
      v = 1.0 - beta + 4.0 * beta / pi;
    } else if (beta > 0 && std::abs(std::abs(t) - 1.0 / (4.0 * beta)) < 1e-9) {
      v = beta / std::sqrt(2.0) *
          ((1 + 2 / pi) * std::sin(pi / (4 * beta)) + (1 - 2 / pi) * std::cos(pi / (4 * beta)));
    } else {
      v = (std::sin(pi * t * (1 - beta)) + 4 * beta * t * std::cos(pi * t * (1 + beta))) /
          (pi * t * (1 - (4 * beta * t) * (4 * beta * t)));
    }
    h[i] = v;
  }
  double energy = 0;
  for (const double v : h) energy += v * v;
  for (auto& v : h) v /= std::sqrt(energy);
  return h;
}

/// Centered ("same") convolution: out[n] = sum_i x[n + c - i] h[i], c = (len(h) - 1) / 2.
inline Waveform filter_same(const Waveform& x, const std::vector<double>& h) {
  const auto c = static_cast<std::ptrdiff_t>((h.size() - 1) / 2);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  Waveform out(x.size());
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    cd acc = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const std::ptrdiff_t src = k + c - static_cast<std::ptrdiff_t>(i);
      if (src >= 0 && src < n) acc += x[static_cast<std::size_t>(src)] * h[i];
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

/// Impulse train with symbol k at sample k * sps, shaped by the RRC filter.
inline Waveform shape_symbols(const std::vector<cd>& symbols, std::size_t sps, const std::vector<double>& taps) {
  Waveform up(symbols.size() * sps, cd{0});
  for (std::size_t k = 0; k < symbols.size(); ++k) up[k * sps] = symbols[k];
  return filter_same(up, taps);
}

inline std::size_t bits_per_symbol(const ModScheme& s) {
  if (s.name == "BPSK" || s.name == "CPFSK" || s.name == "GFSK") return 1;
  if (s.name == "QPSK" || s.name == "PAM4") return 2;
  if (s.name == "8PSK") return 3;
  if (s.name == "QAM16") return 4;
  if (s.name == "QAM64") return 6;
  throw ConfigError("bits_per_symbol: " + s.name + " is not a digital scheme");
}

inline unsigned gray_decode(unsigned g) {
  unsigned b = g;
  for (unsigned shift = 1; shift < 8; shift <<= 1) b ^= b >> shift;
  return b;
}

// Square-QAM / PAM amplitude for Gray-coded bits: levels -(L-1), ..., L-1.
inline double gray_level(unsigned bits, unsigned levels) {
  return 2.0 * gray_decode(bits) - (levels - 1.0);
}

/// Unit-average-energy constellation point for the `bits_per_symbol` bits starting at `bits`.
inline cd map_symbol(const ModScheme& s, std::span<const std::uint8_t> bits) {
  unsigned v = 0;
  for (const auto b : bits) v = (v << 1) | (b & 1u);
  if (s.name == "BPSK") return v ? cd{1, 0} : cd{-1, 0};
  if (s.name == "QPSK") {
    return cd{(v & 2) ? 1.0 : -1.0, (v & 1) ? 1.0 : -1.0} / std::sqrt(2.0);
  }
  if (s.name == "8PSK") return std::polar(1.0, 2.0 * std::numbers::pi * gray_decode(v) / 8.0);
  if (s.name == "PAM4") return cd{gray_level(v, 4) / std::sqrt(5.0), 0};
  if (s.name == "QAM16") return cd{gray_level(v >> 2, 4), gray_level(v & 3u, 4)} / std::sqrt(10.0);
  if (s.name == "QAM64") return cd{gray_level(v >> 3, 8), gray_level(v & 7u, 8)} / std::sqrt(42.0);
  throw ConfigError("map_symbol: " + s.name + " has no constellation");
}

/// Every point of a linear constellation (PSK/PAM/QAM).
inline std::vector<cd> constellation(const ModScheme& s) {
  const auto k = bits_per_symbol(s);
  std::vector<cd> out;
  std::vector<std::uint8_t> bits(k);
  for (unsigned v = 0; v < (1u << k); ++v) {
    for (std::size_t i = 0; i < k; ++i) bits[i] = (v >> (k - 1 - i)) & 1u;
    out.push_back(map_symbol(s, bits));
  }
  return out;
}

/// Analog message: a sum of three tones scaled so |a(n)| <= 1.
struct AudioSource {
  std::array<double, 3> freq{};  // cycles/sample
  std::array<double, 3> amp{};
  std::array<double, 3> phase{};

  [[nodiscard]] double sample(double n) const {
    double v = 0;
    for (std::size_t i = 0; i < 3; ++i) v += amp[i] * std::cos(2 * std::numbers::pi * freq[i] * n + phase[i]);
    return v;
  }

  // a(n) + j H{a}(n): the upper-sideband analytic signal.
  [[nodiscard]] cd analytic(double n) const {
    cd v = 0;
    for (std::size_t i = 0; i < 3; ++i) v += amp[i] * std::polar(1.0, 2 * std::numbers::pi * freq[i] * n + phase[i]);
    return v;
  }

  // Integral of a(t) over [0, n], closed form.
  [[nodiscard]] double integral(double n) const {
    double v = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double w = 2 * std::numbers::pi * freq[i];
      v += amp[i] * (std::sin(w * n + phase[i]) - std::sin(phase[i])) / w;
    }
    return v;
  }

  static AudioSource random(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> f(0.002, 0.03), a(0.2, 1.0), ph(0.0, 2 * std::numbers::pi);
    AudioSource s;
    double total = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      s.freq[i] = f(rng);
      s.amp[i] = a(rng);
      s.phase[i] = ph(rng);
      total += s.amp[i];
    }
    for (auto& v : s.amp) v /= total;
    return s;
  }
};

/// Message for modulate(): bits for digital schemes, a tone source for analog ones.
struct Payload {
  std::vector<std::uint8_t> bits;
  AudioSource audio;
  std::size_t samples = 0;  // analog output length
};

namespace detail {

inline Waveform normalize_power(Waveform x) {
  double p = 0;
  for (const auto& v : x) p += std::norm(v);
  p /= static_cast<double>(x.size());
  if (p > 0) {
    const double g = 1.0 / std::sqrt(p);
    for (auto& v : x) v *= g;
  }
  return x;
}

// Constant-envelope FSK: phase advances by pi * h * a_k spread over the symbol by `pulse`.
inline Waveform fsk(const std::vector<std::uint8_t>& bits, std::size_t sps, double h, const std::vector<double>& pulse) {
  const std::size_t n = bits.size() * sps;
  std::vector<double> freq(n + pulse.size(), 0.0);
  for (std::size_t k = 0; k < bits.size(); ++k) {
    const double a = bits[k] ? 1.0 : -1.0;
    for (std::size_t i = 0; i < pulse.size(); ++i) freq[k * sps + i] += a * pulse[i];
  }
  // Gaussian pulses extend past the symbol; shift so the pulse centre sits on the symbol centre.
  const std::size_t delay = (pulse.size() - sps) / 2;
  Waveform out(n);
  double phase = 0;
  for (std::size_t t = 0; t < n; ++t) {
    phase += std::numbers::pi * h * freq[t + delay];
    out[t] = std::polar(1.0, phase);
  }
  return out;
}

inline std::vector<double> gaussian_pulse(std::size_t sps, double bt) {
  // Rectangular symbol pulse convolved with a Gaussian of bandwidth-time product bt, spanning 3 symbols.
  const std::size_t len = 3 * sps;
  const double sigma = std::sqrt(std::log(2.0)) / (2 * std::numbers::pi * bt);
  std::vector<double> g(len);
  double total = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(sps) - 1.5;
    const double s2 = std::sqrt(2.0) * sigma;
    g[i] = 0.5 * (std::erf((t + 0.5) / s2) - std::erf((t - 0.5) / s2));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

}  // namespace detail

/// Baseband waveform of `scheme` carrying `payload`, normalized to unit mean power.
///
/// Digital schemes produce bits.size() / bits_per_symbol * sps samples with
/// symbol k at sample k * sps; analog schemes produce payload.samples samples.
inline Waveform modulate_waveform(const ModScheme& scheme, const Payload& payload, const ModulatorConfig& cfg = {}) {
  const double pi = std::numbers::pi;
  if (scheme.kind == ModKind::Analog) {
    if (payload.samples == 0) throw ContractError("modulate: analog payload needs a sample count");
    Waveform x(payload.samples);
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double t = static_cast<double>(n);
      if (scheme.name == "AM-DSB") {
        x[n] = 1.0 + cfg.am_index * payload.audio.sample(t);
      } else if (scheme.name == "AM-SSB") {
        x[n] = payload.audio.analytic(t);
      } else if (scheme.name == "WBFM") {
        x[n] = std::polar(1.0, 2 * pi * cfg.fm_deviation * payload.audio.integral(t));
      } else {
        throw ConfigError("modulate: unknown analog scheme " + scheme.name);
      }
    }
    return detail::normalize_power(std::move(x));
  }

  if (scheme.name == "CPFSK") {
    return detail::fsk(payload.bits, cfg.sps, cfg.fsk_index, std::vector<double>(cfg.sps, 1.0 / static_cast<double>(cfg.sps)));
  }
  if (scheme.name == "GFSK") {
    return detail::fsk(payload.bits, cfg.sps, cfg.fsk_index, detail::gaussian_pulse(cfg.sps, cfg.gfsk_bt));
  }
  const std::size_t k = bits_per_symbol(scheme);
  if (payload.bits.size() < k) throw ContractError("modulate: payload shorter than one symbol");
  std::vector<cd> symbols(payload.bits.size() / k);
  for (std::size_t s = 0; s < symbols.size(); ++s) {
    symbols[s] = map_symbol(scheme, std::span(payload.bits).subspan(s * k, k));
  }
  return detail::normalize_power(shape_symbols(symbols, cfg.sps, rrc_taps(cfg.rolloff, cfg.sps, cfg.rrc_half_span)));
}

inline IqSequence modulate(const ModScheme& scheme, const Payload& payload, const ModulatorConfig& cfg = {}) {
  return IqSequence::from_complex(modulate_waveform(scheme, payload, cfg));
}

struct ChannelConfig {
  double snr_db = std::numeric_limits<double>::infinity();
  double initial_phase = 0;  // radians
  double cfo = 0;            // cycles/sample
  double clock_offset_ppm = 0;
};

inline double mean_power(const Waveform& x) {
  double p = 0;
  for (const auto& v : x) p += std::norm(v);
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

/// Rotate, frequency-shift, resample (linear interpolation) and add circular AWGN
/// whose power sits snr_db below the measured pre-noise power of this waveform.
inline Waveform apply_channel(const Waveform& x, const ChannelConfig& cfg, std::mt19937_64& rng) {
  const double pi = std::numbers::pi;
  const std::size_t n = x.size();
  Waveform y(n);
  const double ratio = 1.0 + cfg.clock_offset_ppm * 1e-6;
  for (std::size_t t = 0; t < n; ++t) {
    const double pos = static_cast<double>(t) * ratio;
    cd v;
    if (ratio == 1.0) {
      v = x[t];
    } else {
      const auto i0 = std::min(static_cast<std::size_t>(pos), n - 1);
      const std::size_t i1 = std::min(i0 + 1, n - 1);
      const double frac = std::min(pos - static_cast<double>(i0), 1.0);
      v = x[i0] * (1.0 - frac) + x[i1] * frac;
    }
    y[t] = v * std::polar(1.0, cfg.initial_phase + 2 * pi * cfg.cfo * static_cast<double>(t));
  }
  if (std::isfinite(cfg.snr_db)) {
    const double noise = mean_power(y) / std::pow(10.0, cfg.snr_db / 10.0);
    std::normal_distribution<double> g(0.0, std::sqrt(noise / 2.0));
    for (auto& v : y) v += cd{g(rng), g(rng)};
  }
  return y;
}

inline IqSequence apply_channel(const IqSequence& x, const ChannelConfig& cfg, std::mt19937_64& rng) {
  Waveform w(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) w[n] = x[n];
  return IqSequence::from_complex(apply_channel(w, cfg, rng));
}

struct GeneratorConfig {
  ModulatorConfig modulator;
  double max_cfo = 1e-3;
  double max_clock_ppm = 50;
  std::size_t guard = 96;  // discarded samples on each side of the frame
};

/// Seed of the random stream owned by one frame.
inline std::uint64_t frame_seed(std::uint64_t seed, std::uint16_t mod_id, std::int16_t snr_db, std::uint64_t index) {
  std::uint64_t h = cplx::detail::splitmix64(seed);
  h = cplx::detail::splitmix64(h ^ mod_id);
  h = cplx::detail::splitmix64(h ^ static_cast<std::uint16_t>(snr_db));
  return cplx::detail::splitmix64(h ^ index);
}

/// One 2 x 128 frame of `scheme` at `snr_db`, a pure function of the arguments.
inline IqFrame generate_frame(const ModScheme& scheme, std::int16_t snr_db, std::uint64_t stream_seed,
                              const GeneratorConfig& cfg = {}) {
  std::mt19937_64 rng(stream_seed);
  const std::size_t total = kFrameLength + 2 * cfg.guard;
  Payload payload;
  if (scheme.kind == ModKind::Digital) {
    const std::size_t symbols = (total + cfg.modulator.sps - 1) / cfg.modulator.sps;
    const std::size_t k = (scheme.name == "CPFSK" || scheme.name == "GFSK") ? 1 : bits_per_symbol(scheme);
    payload.bits.resize(symbols * k);
    for (auto& b : payload.bits) b = static_cast<std::uint8_t>(rng() & 1u);
  } else {
    payload.audio = AudioSource::random(rng);
    payload.samples = total;
  }
  const auto clean = modulate_waveform(scheme, payload, cfg.modulator);

  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> cfo(-cfg.max_cfo, cfg.max_cfo);
  std::uniform_real_distribution<double> ppm(-cfg.max_clock_ppm, cfg.max_clock_ppm);
  ChannelConfig ch;
  ch.initial_phase = phase(rng);
  ch.cfo = cfo(rng);
  ch.clock_offset_ppm = ppm(rng);

  // SNR is set against the power of the 128 samples actually kept.
  auto faded = apply_channel(clean, ch, rng);
  Waveform frame(faded.begin() + static_cast<std::ptrdiff_t>(cfg.guard),
                 faded.begin() + static_cast<std::ptrdiff_t>(cfg.guard + kFrameLength));
  const double noise = mean_power(frame) / std::pow(10.0, snr_db / 10.0);
  std::normal_distribution<double> g(0.0, std::sqrt(noise / 2.0));
  IqFrame out;
  out.mod_id = scheme.id;
  out.snr_db = snr_db;
  for (std::size_t n = 0; n < kFrameLength; ++n) {
    const cd v = frame[n] + cd{g(rng), g(rng)};
    out.samples[n] = static_cast<float>(v.real());
    out.samples[kFrameLength + n] = static_cast<float>(v.imag());
  }
  return out;
}

/// count frames per (scheme, snr) cell over the 11 schemes and the 20-point SNR
/// grid, ordered by scheme, then SNR, then index. Frames depend only on their
/// cell, index and seed, so any `jobs` value yields identical output.
inline Dataset generate_dataset(std::size_t per_class_per_snr, std::uint64_t seed, std::size_t jobs = 1,
                                const GeneratorConfig& cfg = {}, std::vector<std::int16_t> snrs = snr_grid()) {
  if (per_class_per_snr == 0) throw ConfigError("generate_dataset: count must be at least 1");
  Dataset ds{mod_names(), snrs, {}};
  const std::size_t cells = mod_schemes().size() * snrs.size();
  ds.frames.resize(cells * per_class_per_snr);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < ds.frames.size(); i += stride) {
      const std::size_t cell = i / per_class_per_snr;
      const auto& scheme = mod_schemes()[cell / snrs.size()];
      const auto snr = snrs[cell % snrs.size()];
      const std::uint64_t index = i % per_class_per_snr;
      ds.frames[i] = generate_frame(scheme, snr, frame_seed(seed, scheme.id, snr, index), cfg);
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, ds.frames.size()));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }
  return ds;
}

}  // namespace cplx::signal
