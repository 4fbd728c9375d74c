#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cplx/detail/binary_io.hpp"
#include "cplx/tensor.hpp"

namespace cplx {

inline constexpr std::size_t kFrameLength = 128;
inline constexpr std::uint32_t kIqdsVersion = 1;
inline constexpr std::size_t kRecordBytes = 4 + 2 * kFrameLength * 4;

/// One labeled example: I row then Q row, 128 samples each.
struct IqFrame {
  std::uint16_t mod_id = 0;
  std::int16_t snr_db = 0;
  std::array<float, 2 * kFrameLength> samples{};

  [[nodiscard]] float i(std::size_t n) const { return samples[n]; }
  [[nodiscard]] float q(std::size_t n) const { return samples[kFrameLength + n]; }
};

/// A collection of frames with the class-name and SNR tables they index into.
struct Dataset {
  std::vector<std::string> mod_names;
  std::vector<std::int16_t> snrs;
  std::vector<IqFrame> frames;

  [[nodiscard]] std::size_t size() const noexcept { return frames.size(); }
};

/// Serialized layout (little-endian):
///   "IQDS" | u32 version | u64 frame_count |
///   u16 mod count | per mod: u8 length, ASCII name |
///   u16 snr count | i16 snr... |
///   per frame: u16 mod_id | i16 snr_db | 128 x (f32 I, f32 Q)
inline std::vector<char> encode_iqds(const Dataset& ds) {
  if (ds.mod_names.size() > 0xffff || ds.snrs.size() > 0xffff) throw ContractError("encode_iqds: tables too large");
  detail::ByteWriter w;
  w.put_bytes("IQDS");
  w.put<std::uint32_t>(kIqdsVersion);
  w.put<std::uint64_t>(ds.frames.size());
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.mod_names.size()));
  for (const auto& name : ds.mod_names) {
    if (name.empty() || name.size() > 255) throw ContractError("encode_iqds: bad modulation name '" + name + "'");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(name.size()));
    w.put_bytes(name);
  }
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.snrs.size()));
  for (const auto snr : ds.snrs) w.put<std::int16_t>(snr);
  const std::set<std::int16_t> snr_set(ds.snrs.begin(), ds.snrs.end());
  for (const auto& f : ds.frames) {
    if (f.mod_id >= ds.mod_names.size() || !snr_set.count(f.snr_db)) {
      throw ContractError("encode_iqds: frame label outside the header tables");
    }
    w.put<std::uint16_t>(f.mod_id);
    w.put<std::int16_t>(f.snr_db);
    for (std::size_t n = 0; n < kFrameLength; ++n) {
      w.put(f.i(n));
      w.put(f.q(n));
    }
  }
  return w.bytes();
}

inline Dataset decode_iqds(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.get_bytes(4, "magic") != "IQDS") throw FormatError("not an IQDS file: bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kIqdsVersion) throw FormatError("unsupported IQDS version " + std::to_string(version), 4);
  const auto count = r.get<std::uint64_t>("frame count");

  Dataset ds;
  const auto n_mods = r.get<std::uint16_t>("modulation count");
  for (std::uint16_t m = 0; m < n_mods; ++m) {
    const auto at = r.offset();
    const auto len = r.get<std::uint8_t>("modulation name length");
    if (len == 0) throw FormatError("empty modulation name", at);
    ds.mod_names.push_back(r.get_bytes(len, "modulation name"));
  }
  const auto n_snrs = r.get<std::uint16_t>("snr count");
  for (std::uint16_t s = 0; s < n_snrs; ++s) ds.snrs.push_back(r.get<std::int16_t>("snr table"));
  const std::set<std::int16_t> snr_set(ds.snrs.begin(), ds.snrs.end());

  if (count > r.remaining() / kRecordBytes + 1) {
    throw FormatError("header announces " + std::to_string(count) + " frames but only " +
                          std::to_string(r.remaining()) + " bytes follow",
                      r.offset());
  }
  ds.frames.resize(count);
  for (auto& f : ds.frames) {
    const auto at = r.offset();
    r.require(kRecordBytes, "frame record");
    f.mod_id = r.get<std::uint16_t>("mod_id");
    f.snr_db = r.get<std::int16_t>("snr_db");
    if (f.mod_id >= ds.mod_names.size()) {
      throw FormatError("mod_id " + std::to_string(f.mod_id) + " outside the name table", at);
    }
    if (!snr_set.count(f.snr_db)) throw FormatError("snr " + std::to_string(f.snr_db) + " not in the snr table", at + 2);
    for (std::size_t n = 0; n < kFrameLength; ++n) {
      f.samples[n] = r.get<float>("I sample");
      f.samples[kFrameLength + n] = r.get<float>("Q sample");
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after the last frame", r.offset());
  return ds;
}

inline void write_iqds(const Dataset& ds, const std::string& path) { detail::write_file(path, encode_iqds(ds)); }

inline Dataset read_iqds(const std::string& path) { return decode_iqds(detail::read_file(path)); }

/// Frames `index` as a [n x 2 x 128] tensor and their class ids.
inline std::pair<Tensor, std::vector<int>> to_tensor(const Dataset& ds, const std::vector<std::size_t>& index) {
  std::vector<float> values(index.size() * 2 * kFrameLength);
  std::vector<int> labels(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& f = ds.frames.at(index[i]);
    std::copy(f.samples.begin(), f.samples.end(), values.begin() + static_cast<std::ptrdiff_t>(i * 2 * kFrameLength));
    labels[i] = f.mod_id;
  }
  return {Tensor({index.size(), 2, kFrameLength}, std::move(values)), std::move(labels)};
}

enum class Paradigm { Original, Exp1, Exp2 };

[[nodiscard]] inline const char* paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::Original: return "original";
    case Paradigm::Exp1: return "exp1";
    case Paradigm::Exp2: return "exp2";
  }
  return "?";
}

[[nodiscard]] inline Paradigm parse_paradigm(const std::string& name) {
  if (name == "original") return Paradigm::Original;
  if (name == "exp1") return Paradigm::Exp1;
  if (name == "exp2") return Paradigm::Exp2;
  throw ConfigError("unknown paradigm '" + name + "' (expected one of: original, exp1, exp2)");
}

/// Which SNRs go to each side. When the sets are equal, every (mod, snr) cell is
/// split with `train_fraction` of its frames going to train.
struct SplitSpec {
  std::set<int> train_snrs;
  std::set<int> test_snrs;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
};

inline std::set<int> snr_range(int lo, int hi) {
  std::set<int> out;
  for (int s = lo; s <= hi; s += 2) out.insert(s);
  return out;
}

[[nodiscard]] inline SplitSpec paradigm_split(Paradigm p, std::uint64_t seed) {
  switch (p) {
    case Paradigm::Original: return {snr_range(-20, 18), snr_range(-20, 18), 0.5, seed};
    case Paradigm::Exp1: return {snr_range(-20, -2), snr_range(0, 18), 0.5, seed};
    case Paradigm::Exp2: return {snr_range(0, 18), snr_range(-20, -2), 0.5, seed};
  }
  throw ConfigError("unknown paradigm");
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Partition of the frames at the requested SNRs into train and test index lists,
/// each shuffled. Deterministic in spec.seed.
inline Split split(const Dataset& ds, const SplitSpec& spec) {
  const std::set<int> present(ds.snrs.begin(), ds.snrs.end());
  for (const auto* side : {&spec.train_snrs, &spec.test_snrs}) {
    for (const int s : *side) {
      if (!present.count(s)) throw ConfigError("split: dataset has no frames at " + std::to_string(s) + " dB");
    }
  }
  const bool stratified = spec.train_snrs == spec.test_snrs;
  if (!stratified) {
    for (const int s : spec.train_snrs) {
      if (spec.test_snrs.count(s)) throw ConfigError("split: " + std::to_string(s) + " dB is on both sides");
    }
  }
  if (stratified && !(spec.train_fraction > 0 && spec.train_fraction < 1)) {
    throw ConfigError("split: train_fraction must lie in (0, 1)");
  }

  std::mt19937_64 rng(spec.seed);
  Split out;
  if (stratified) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
      const auto& f = ds.frames[i];
      if (spec.train_snrs.count(f.snr_db)) cells[{f.mod_id, f.snr_db}].push_back(i);
    }
    for (auto& [key, members] : cells) {
      std::shuffle(members.begin(), members.end(), rng);
      const auto n_train =
          static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(members.size())));
      out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
      out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
  } else {
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
      const int s = ds.frames[i].snr_db;
      if (spec.train_snrs.count(s)) out.train.push_back(i);
      if (spec.test_snrs.count(s)) out.test.push_back(i);
    }
  }
  std::shuffle(out.train.begin(), out.train.end(), rng);
  std::shuffle(out.test.begin(), out.test.end(), rng);
  return out;
}

/// Frame indices whose SNR lies in `snrs`, in file order.
inline std::vector<std::size_t> select_snrs(const Dataset& ds, const std::set<int>& snrs) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    if (snrs.count(ds.frames[i].snr_db)) out.push_back(i);
  }
  return out;
}

/// Restricts a dataset to the frames `index` (tables unchanged).
inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& index) {
  Dataset out{ds.mod_names, ds.snrs, {}};
  out.frames.reserve(index.size());
  for (const auto i : index) out.frames.push_back(ds.frames.at(i));
  return out;
}

}  // namespace cplx
