#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cplx/dataio.hpp"
#include "cplx/svg.hpp"
#include "cplx/train.hpp"

namespace cplx {

struct ActMaxConfig {
  std::size_t steps = 1000;
  double step_size = 0.05;
  double l2_penalty = 0.01;
  double target_confidence = 0.999;
  double init_scale = 1 / std::numbers::sqrt2;  // unit power per complex sample, like the frames
  std::uint64_t seed = 0;
};

/// Input synthesized for one class, with the softmax it achieved.
struct OneHotImage {
  std::size_t class_id = 0;
  Tensor input;
  std::vector<double> softmax;
  double objective = 0;
  std::size_t iterations = 0;
  bool reached = false;
};

/// Maps a [1 x ...] input to [1 x K] logits, recording on the active tape.
using LogitsFn = std::function<Tensor(const Tensor&)>;

namespace detail {

inline void check_actmax_config(const ActMaxConfig& cfg, std::size_t classes) {
  if (cfg.steps == 0) throw ConfigError("actmax: steps must be at least 1");
  if (!(cfg.target_confidence > 1.0 / static_cast<double>(classes) && cfg.target_confidence < 1)) {
    throw ConfigError("actmax: target_confidence must lie in (1/K, 1)");
  }
  if (!(cfg.step_size > 0) || !(cfg.l2_penalty >= 0) || !(cfg.init_scale >= 0)) {
    throw ConfigError("actmax: step_size, l2_penalty and init_scale must be non-negative");
  }
}

struct Probe {
  double objective;
  std::vector<double> softmax;
  std::vector<float> grad;
};

// Objective log softmax(z)_target - lambda |x|^2 and its gradient in x.
inline Probe probe(const LogitsFn& logits_fn, const Tensor& x_values, std::size_t target, double lambda) {
  auto x = x_values.clone();
  x.set_requires_grad(true);
  Tape tape;
  const auto z = logits_fn(x);
  if (z.rank() != 2 || z.dim(0) != 1 || target >= z.dim(1)) {
    throw DimensionError("actmax: logits must be [1 x K] with K > target, got " + shape_string(z.shape()));
  }
  std::vector<int> label{static_cast<int>(target)};
  const auto xent = softmax_xent(z, one_hot(label, z.dim(1)));
  const auto loss = add(xent, scale(sum(mul(x, x)), static_cast<float>(lambda)));
  tape.backward(loss);

  // Objective recomputed in double precision.
  Probe p;
  const auto zs = z.data();
  const double zmax = *std::max_element(zs.begin(), zs.end());
  double total = 0;
  for (const float v : zs) total += std::exp(double(v) - zmax);
  double norm2 = 0;
  for (const float v : x_values.data()) norm2 += double(v) * v;
  p.objective = double(zs[target]) - zmax - std::log(total) - lambda * norm2;
  p.softmax.resize(zs.size());
  for (std::size_t k = 0; k < zs.size(); ++k) p.softmax[k] = std::exp(double(zs[k]) - zmax) / total;
  p.grad.resize(x.numel());
  for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] = -x.grad()[i];
  if (!std::isfinite(p.objective) || !std::all_of(p.grad.begin(), p.grad.end(), [](float g) { return std::isfinite(g); })) {
    throw NumericError("actmax: non-finite objective or gradient for class " + std::to_string(target));
  }
  return p;
}

}  // namespace detail

/// Gradient ascent on the input, starting at cfg.step_size. A step that lowers
/// the objective is rejected and the step size halved; an accepted step doubles
/// it. Stops when softmax(target) reaches cfg.target_confidence, the
/// step cap is hit, or the step size underflows.
inline OneHotImage maximize(const LogitsFn& logits_fn, const Shape& input_shape, std::size_t classes,
                            std::size_t class_id, const ActMaxConfig& cfg) {
  detail::check_actmax_config(cfg, classes);
  if (class_id >= classes) throw ContractError("actmax: class id " + std::to_string(class_id) + " out of range");

  std::mt19937_64 rng(detail::splitmix64(cfg.seed + 0x9e3779b97f4a7c15ULL * (class_id + 1)));
  std::normal_distribution<double> g(0.0, cfg.init_scale);
  std::vector<float> init(shape_numel(input_shape));
  for (auto& v : init) v = static_cast<float>(g(rng));
  Tensor x(input_shape, std::move(init));

  auto current = detail::probe(logits_fn, x, class_id, cfg.l2_penalty);
  double step = cfg.step_size;
  OneHotImage out;
  out.class_id = class_id;
  std::size_t it = 0;
  for (; it < cfg.steps && current.softmax[class_id] < cfg.target_confidence; ++it) {
    auto candidate = x.clone();
    auto c = candidate.mutable_data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += static_cast<float>(step * current.grad[i]);
    auto next = detail::probe(logits_fn, candidate, class_id, cfg.l2_penalty);
    if (next.objective >= current.objective) {
      x = std::move(candidate);
      current = std::move(next);
      step *= 2;
    } else {
      step /= 2;
      if (step < cfg.step_size * 1e-9) break;
    }
  }
  out.input = x;
  out.softmax = current.softmax;
  out.objective = current.objective;
  out.iterations = it;
  out.reached = current.softmax[class_id] >= cfg.target_confidence;
  return out;
}

/// One image per class for a model, with parameters frozen and dropout off.
inline std::vector<OneHotImage> maximize_all(const Model& model, const ActMaxConfig& cfg, std::size_t jobs = 1) {
  auto frozen = model.clone();
  frozen.set_trainable(false);
  const auto& spec = frozen.spec();
  const LogitsFn fn = [&frozen](const Tensor& x) { return frozen.forward(x, false); };
  const std::size_t k = spec.num_classes;
  std::vector<OneHotImage> images(k);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t c; (c = next++) < k;) {
      try {
        images[c] = maximize(fn, {1, 2, spec.input_length}, k, c, cfg);
      } catch (...) {
        const std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < std::min(jobs, k); ++j) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);
  return images;
}

/// For each class, the first frame of `index` at the highest SNR present in it.
inline std::vector<IqFrame> reference_frames(const Dataset& ds, const std::vector<std::size_t>& index) {
  if (index.empty()) throw ContractError("reference_frames: no frames");
  int top = ds.frames.at(index.front()).snr_db;
  for (const auto i : index) top = std::max<int>(top, ds.frames.at(i).snr_db);
  std::vector<IqFrame> out(ds.mod_names.size());
  std::vector<bool> found(out.size(), false);
  for (const auto i : index) {
    const auto& f = ds.frames[i];
    if (f.snr_db == top && !found[f.mod_id]) {
      out[f.mod_id] = f;
      found[f.mod_id] = true;
    }
  }
  for (std::size_t c = 0; c < found.size(); ++c) {
    if (!found[c]) throw ContractError("reference_frames: no " + ds.mod_names[c] + " frame at " + std::to_string(top) + " dB");
  }
  return out;
}

namespace detail {

inline void iq_panel(svg::Document& doc, double x0, double y0, double w, double h, std::span<const float> i_row,
                     std::span<const float> q_row, const std::string& title) {
  doc.rect(x0, y0, w, h, "#fafafa", "#ccc");
  doc.text(x0 + 4, y0 + 12, title, 10);
  float peak = 1e-12f;
  for (const float v : i_row) peak = std::max(peak, std::abs(v));
  for (const float v : q_row) peak = std::max(peak, std::abs(v));
  const svg::Scale xs{0, static_cast<double>(i_row.size() - 1), x0 + 4, x0 + w - 4};
  const svg::Scale ys{-peak, peak, y0 + h - 4, y0 + 18};
  doc.line(x0 + 4, ys(0), x0 + w - 4, ys(0), "#ddd");
  for (const auto& [row, color] : {std::pair{i_row, "#1f77b4"}, std::pair{q_row, "#d62728"}}) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t n = 0; n < row.size(); ++n) pts.emplace_back(xs(static_cast<double>(n)), ys(row[n]));
    doc.polyline(pts, color, 1);
  }
}

}  // namespace detail

/// Writes gallery.svg (one row per class: one-hot input beside a reference
/// frame, I in blue and Q in red) and gallery.json with achieved confidences.
inline std::vector<std::filesystem::path> render_gallery(const std::vector<OneHotImage>& images,
                                                         const std::vector<IqFrame>& references,
                                                         const std::vector<std::string>& class_names,
                                                         const std::filesystem::path& dir) {
  const std::size_t k = class_names.size();
  std::vector<const OneHotImage*> by_class(k, nullptr);
  for (const auto& img : images) {
    if (img.class_id >= k || by_class[img.class_id]) throw ContractError("render_gallery: bad or repeated class id");
    if (img.input.numel() != 2 * kFrameLength) throw DimensionError("render_gallery: input is not 2 x 128");
    by_class[img.class_id] = &img;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!by_class[c]) throw ContractError("render_gallery: no image for class " + class_names[c]);
  }
  if (references.size() != k) throw ContractError("render_gallery: need one reference frame per class");

  const double pw = 300, ph = 90, gap = 10;
  svg::Document doc(2 * pw + 3 * gap, 30 + static_cast<double>(k) * (ph + gap));
  doc.text(gap, 20, "one-hot inputs (left) and reference frames (right)", 13);
  nlohmann::json sidecar = nlohmann::json::array();
  for (std::size_t c = 0; c < k; ++c) {
    const auto& img = *by_class[c];
    const auto d = img.input.data();
    const double y0 = 30 + static_cast<double>(c) * (ph + gap);
    char title[96];
    std::snprintf(title, sizeof title, "%s  p = %.4f", class_names[c].c_str(), img.softmax.at(c));
    detail::iq_panel(doc, gap, y0, pw, ph, d.subspan(0, kFrameLength), d.subspan(kFrameLength, kFrameLength), title);
    const auto& ref = references[c].samples;
    detail::iq_panel(doc, 2 * gap + pw, y0, pw, ph, std::span(ref).subspan(0, kFrameLength),
                     std::span(ref).subspan(kFrameLength, kFrameLength),
                     class_names[c] + " reference, " + std::to_string(references[c].snr_db) + " dB");
    sidecar.push_back({{"class", class_names[c]},
                       {"class_id", c},
                       {"confidence", img.softmax.at(c)},
                       {"softmax", img.softmax},
                       {"reached", img.reached},
                       {"iterations", img.iterations},
                       {"objective", img.objective},
                       {"reference_snr_db", references[c].snr_db}});
  }
  std::filesystem::create_directories(dir);
  const auto svg_path = dir / "gallery.svg", json_path = dir / "gallery.json";
  std::ofstream(svg_path, std::ios::binary) << doc.str();
  std::ofstream(json_path, std::ios::binary) << sidecar.dump(1) << '\n';
  if (!std::filesystem::exists(svg_path) || !std::filesystem::exists(json_path)) {
    throw std::runtime_error("render_gallery: cannot write into " + dir.string());
  }
  return {svg_path, json_path};
}

}  // namespace cplx
