#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cplx/dataio.hpp"
#include "cplx/stats.hpp"
#include "cplx/svg.hpp"
#include "cplx/train.hpp"

namespace cplx {

/// counts[true][predicted]
using Confusion = std::vector<std::vector<std::uint64_t>>;
using Matrix = std::vector<std::vector<double>>;

struct TrialResult {
  std::string architecture;
  std::string paradigm;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  std::size_t epochs = 0;
  std::size_t train_frames = 0;
  std::vector<std::string> classes;
  std::map<int, double> accuracy;
  std::map<int, Confusion> confusion;
  double overall_accuracy = 0;

  [[nodiscard]] std::size_t test_frames() const {
    std::size_t n = 0;
    for (const auto& [snr, c] : confusion) {
      for (const auto& row : c) n += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
    }
    return n;
  }
};

/// Tallies predictions into per-SNR confusion counts and accuracies.
inline TrialResult score_predictions(std::span<const int> truth, std::span<const int> predicted,
                                     std::span<const int> snr, std::size_t classes) {
  if (truth.size() != predicted.size() || truth.size() != snr.size()) {
    throw DimensionError("score_predictions: length mismatch");
  }
  TrialResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(std::max(truth[i], predicted[i])) >= classes) {
      throw DimensionError("score_predictions: class id out of range");
    }
    auto& c = r.confusion[snr[i]];
    if (c.empty()) c.assign(classes, std::vector<std::uint64_t>(classes, 0));
    ++c[truth[i]][predicted[i]];
    correct += truth[i] == predicted[i];
  }
  for (const auto& [s, c] : r.confusion) {
    std::uint64_t hit = 0, total = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      hit += c[k][k];
      total += std::accumulate(c[k].begin(), c[k].end(), std::uint64_t{0});
    }
    r.accuracy[s] = static_cast<double>(hit) / static_cast<double>(total);
  }
  r.overall_accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  return r;
}

[[nodiscard]] inline std::map<int, double> accuracy_by_snr(const TrialResult& r) { return r.accuracy; }

struct CurvePoint {
  double mean = 0;
  double std = 0;
};

/// Mean and sample std of the per-SNR accuracy across trials.
inline std::map<int, CurvePoint> accuracy_curve(std::span<const TrialResult> results) {
  std::map<int, std::vector<double>> by_snr;
  for (const auto& r : results) {
    for (const auto& [s, a] : r.accuracy) by_snr[s].push_back(a);
  }
  std::map<int, CurvePoint> out;
  for (const auto& [s, v] : by_snr) out[s] = {mean(v), stddev(v)};
  return out;
}

/// Row-normalized confusion averaged over every (trial, SNR) pair; rows with no
/// frames do not take part in the average.
inline Matrix mean_confusion(std::span<const TrialResult> results) {
  if (results.empty()) throw ContractError("mean_confusion: no results");
  std::size_t k = 0;
  for (const auto& r : results) {
    for (const auto& [s, c] : r.confusion) k = std::max(k, c.size());
  }
  Matrix sum(k, std::vector<double>(k, 0.0));
  std::vector<std::size_t> rows(k, 0);
  for (const auto& r : results) {
    for (const auto& [s, c] : r.confusion) {
      for (std::size_t t = 0; t < c.size(); ++t) {
        const auto n = std::accumulate(c[t].begin(), c[t].end(), std::uint64_t{0});
        if (n == 0) continue;
        for (std::size_t p = 0; p < c.size(); ++p) sum[t][p] += static_cast<double>(c[t][p]) / static_cast<double>(n);
        ++rows[t];
      }
    }
  }
  for (std::size_t t = 0; t < k; ++t) {
    if (rows[t] == 0) continue;
    for (auto& v : sum[t]) v /= static_cast<double>(rows[t]);
  }
  return sum;
}

inline void to_json(nlohmann::json& j, const TrialResult& r) {
  nlohmann::json acc = nlohmann::json::object(), conf = nlohmann::json::object();
  for (const auto& [s, a] : r.accuracy) acc[std::to_string(s)] = a;
  for (const auto& [s, c] : r.confusion) conf[std::to_string(s)] = c;
  j = {{"architecture", r.architecture}, {"paradigm", r.paradigm},
       {"trial", r.trial},               {"seed", r.seed},
       {"parameters", r.parameters},     {"epochs", r.epochs},
       {"train_frames", r.train_frames}, {"test_frames", r.test_frames()},
       {"overall_accuracy", r.overall_accuracy}, {"accuracy_by_snr", acc},
       {"classes", r.classes},           {"confusion", conf}};
}

inline void from_json(const nlohmann::json& j, TrialResult& r) {
  r.architecture = j.at("architecture").get<std::string>();
  r.paradigm = j.at("paradigm").get<std::string>();
  r.trial = j.at("trial").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.parameters = j.at("parameters").get<std::size_t>();
  r.epochs = j.at("epochs").get<std::size_t>();
  r.train_frames = j.at("train_frames").get<std::size_t>();
  r.overall_accuracy = j.at("overall_accuracy").get<double>();
  r.classes = j.value("classes", std::vector<std::string>{});
  r.accuracy.clear();
  r.confusion.clear();
  for (const auto& [k, v] : j.at("accuracy_by_snr").items()) r.accuracy[std::stoi(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("confusion").items()) r.confusion[std::stoi(k)] = v.get<Confusion>();
}

[[nodiscard]] inline std::string trial_file_name(const TrialResult& r) {
  return "trial_" + r.paradigm + "_" + r.architecture + "_" + std::to_string(r.trial) + ".json";
}

inline void save_trial(const TrialResult& r, const std::filesystem::path& dir) {
  std::ofstream out(dir / trial_file_name(r));
  out << nlohmann::json(r).dump(1) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / trial_file_name(r)).string());
}

/// Every trial_*.json under dir, ordered by (architecture, trial).
inline std::vector<TrialResult> load_trials(const std::filesystem::path& dir) {
  std::vector<TrialResult> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("trial_") || entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    try {
      out.push_back(nlohmann::json::parse(in).get<TrialResult>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(name + ": " + e.what(), 0);
    }
  }
  std::sort(out.begin(), out.end(), [](const TrialResult& a, const TrialResult& b) {
    return std::tie(a.architecture, a.trial) < std::tie(b.architecture, b.trial);
  });
  return out;
}

struct ExperimentConfig {
  Paradigm paradigm = Paradigm::Original;
  std::size_t trials = 5;
  std::uint64_t seed = 0;
  std::vector<ModelSpec> architectures = {model_spec("CNN2"), model_spec("CNN2-257"), model_spec("Complex")};
  TrainConfig train;
  std::size_t jobs = 1;
};

/// FNV-1a, stable across platforms and runs.
[[nodiscard]] inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

[[nodiscard]] inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) {
  return detail::splitmix64(base + 0x9e3779b97f4a7c15ULL * (trial + 1));
}

/// Trains and tests one architecture on one split.
inline TrialResult run_trial(const Dataset& ds, const Split& s, const ModelSpec& spec, std::size_t trial,
                             std::uint64_t seed, const ExperimentConfig& cfg) {
  const auto [x_train, y_train] = to_tensor(ds, s.train);
  const auto [x_test, y_test] = to_tensor(ds, s.test);
  auto model = build(spec, detail::splitmix64(seed ^ name_hash(spec.name)));
  auto tc = cfg.train;
  tc.seed = seed;
  const auto history = train(model, x_train, y_train, tc);
  const auto pred = predict(model, x_test);
  std::vector<int> snr(s.test.size());
  for (std::size_t i = 0; i < snr.size(); ++i) snr[i] = ds.frames[s.test[i]].snr_db;
  auto r = score_predictions(y_test, pred, snr, ds.mod_names.size());
  r.architecture = spec.name;
  r.paradigm = paradigm_name(cfg.paradigm);
  r.trial = trial;
  r.seed = seed;
  r.parameters = model.param_count();
  r.epochs = history.epochs.size();
  r.train_frames = s.train.size();
  r.classes = ds.mod_names;
  return r;
}

/// All trials of one paradigm. Each trial draws a fresh split and fresh weights
/// from its own seed; within a trial every architecture sees the same split.
/// Results come back ordered by (trial, architecture); `on_result` fires as each
/// one completes. A failing run aborts the experiment with the run named.
inline std::vector<TrialResult> run_paradigm(const Dataset& ds, const ExperimentConfig& cfg,
                                             const std::function<void(const TrialResult&)>& on_result = {}) {
  if (cfg.trials == 0 || cfg.architectures.empty()) throw ConfigError("run_paradigm: nothing to run");
  std::vector<Split> splits;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    auto spec = paradigm_split(cfg.paradigm, trial_seed(cfg.seed, t));
    splits.push_back(split(ds, spec));
    if (splits.back().train.empty() || splits.back().test.empty()) {
      throw ConfigError("run_paradigm: empty train or test side");
    }
  }

  const std::size_t n_arch = cfg.architectures.size(), tasks = cfg.trials * n_arch;
  std::vector<TrialResult> results(tasks);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;

  auto worker = [&] {
    for (std::size_t task; !failed && (task = next++) < tasks;) {
      const std::size_t t = task / n_arch;
      const auto& spec = cfg.architectures[task % n_arch];
      try {
        results[task] = run_trial(ds, splits[t], spec, t, trial_seed(cfg.seed, t), cfg);
        const std::lock_guard lock(mu);
        if (on_result) on_result(results[task]);
      } catch (const NumericError& e) {
        const std::lock_guard lock(mu);
        if (!failed.exchange(true)) {
          error = std::make_exception_ptr(
              NumericError("trial " + std::to_string(t) + " (" + spec.name + "): " + e.what()));
        }
      } catch (...) {
        const std::lock_guard lock(mu);
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < std::min(cfg.jobs, tasks); ++j) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

struct ArchSummary {
  std::string name;
  std::size_t parameters = 0;
  std::vector<double> overall;
  CurvePoint mean;
  std::map<int, CurvePoint> curve;
  Matrix confusion;
};

struct SignificanceReport {
  std::string a, b;
  TTest test;
  CurvePoint mean_a, mean_b;
};

struct Report {
  std::string paradigm;
  std::vector<std::string> class_names;
  std::vector<ArchSummary> archs;
  std::vector<SignificanceReport> pairs;
};

/// Groups trial results by architecture (first-seen order) and runs the t-test
/// on overall accuracy for every pair with at least two trials on each side.
inline Report build_report(std::span<const TrialResult> results, std::vector<std::string> class_names = {}) {
  if (results.empty()) throw ContractError("build_report: no results");
  if (class_names.empty()) class_names = results.front().classes;
  Report rep;
  rep.paradigm = results.front().paradigm;
  rep.class_names = std::move(class_names);
  std::vector<std::vector<TrialResult>> groups;
  for (const auto& r : results) {
    auto it = std::find_if(rep.archs.begin(), rep.archs.end(), [&](const auto& a) { return a.name == r.architecture; });
    if (it == rep.archs.end()) {
      rep.archs.push_back({r.architecture, r.parameters, {}, {}, {}, {}});
      groups.emplace_back();
      it = rep.archs.end() - 1;
    }
    groups[static_cast<std::size_t>(it - rep.archs.begin())].push_back(r);
  }
  for (std::size_t i = 0; i < rep.archs.size(); ++i) {
    auto& a = rep.archs[i];
    for (const auto& r : groups[i]) a.overall.push_back(r.overall_accuracy);
    a.mean = {mean(a.overall), stddev(a.overall)};
    a.curve = accuracy_curve(groups[i]);
    a.confusion = mean_confusion(groups[i]);
  }
  for (std::size_t i = 0; i < rep.archs.size(); ++i) {
    for (std::size_t j = i + 1; j < rep.archs.size(); ++j) {
      const auto &a = rep.archs[i], &b = rep.archs[j];
      if (a.overall.size() < 2 || b.overall.size() < 2) continue;
      rep.pairs.push_back({a.name, b.name, t_test_unpaired(a.overall, b.overall), a.mean, b.mean});
    }
  }
  return rep;
}

inline nlohmann::json report_json(const Report& rep) {
  nlohmann::json j;
  j["paradigm"] = rep.paradigm;
  j["classes"] = rep.class_names;
  for (const auto& a : rep.archs) {
    nlohmann::json curve = nlohmann::json::object();
    for (const auto& [s, p] : a.curve) curve[std::to_string(s)] = {{"mean", p.mean}, {"std", p.std}};
    j["architectures"].push_back({{"name", a.name},
                                  {"parameters", a.parameters},
                                  {"trials", a.overall.size()},
                                  {"overall_accuracy", a.overall},
                                  {"mean", a.mean.mean},
                                  {"std", a.mean.std},
                                  {"accuracy_by_snr", curve},
                                  {"confusion", a.confusion}});
  }
  j["significance"] = nlohmann::json::array();
  for (const auto& p : rep.pairs) {
    j["significance"].push_back({{"a", p.a},
                                 {"b", p.b},
                                 {"t", std::isfinite(p.test.t) ? nlohmann::json(p.test.t) : nlohmann::json(nullptr)},
                                 {"df", p.test.df},
                                 {"p", p.test.p},
                                 {"degenerate", p.test.degenerate},
                                 {"mean_a", p.mean_a.mean},
                                 {"std_a", p.mean_a.std},
                                 {"mean_b", p.mean_b.mean},
                                 {"std_b", p.mean_b.std}});
  }
  return j;
}

/// Plain-text summary: parameter counts, overall accuracy and p-values.
inline std::string format_summary(const Report& rep) {
  std::ostringstream os;
  char line[160];
  os << "paradigm " << rep.paradigm << '\n';
  for (const auto& a : rep.archs) {
    std::snprintf(line, sizeof line, "  %-10s params %9zu  accuracy %6.2f%% +/- %5.2f  (%zu trials)\n", a.name.c_str(),
                  a.parameters, 100 * a.mean.mean, 100 * a.mean.std, a.overall.size());
    os << line;
  }
  for (const auto& p : rep.pairs) {
    std::snprintf(line, sizeof line, "  %s vs %s: t = %.4f, df = %.0f, p = %.4g%s\n", p.a.c_str(), p.b.c_str(), p.test.t,
                  p.test.df, p.test.p, p.test.degenerate ? " (zero variance)" : "");
    os << line;
  }
  return os.str();
}

namespace detail {

inline std::string accuracy_plot(const Report& rep) {
  const double w = 640, h = 420, l = 60, r = 150, t = 30, b = 50;
  svg::Document doc(w, h);
  int lo = 0, hi = 0;
  bool first = true;
  for (const auto& a : rep.archs) {
    for (const auto& [s, p] : a.curve) {
      lo = first ? s : std::min(lo, s);
      hi = first ? s : std::max(hi, s);
      first = false;
    }
  }
  const svg::Scale x{static_cast<double>(lo), static_cast<double>(hi), l, w - r};
  const svg::Scale y{0, 1, h - b, t};
  for (int k = 0; k <= 10; k += 2) {
    doc.line(l, y(k / 10.0), w - r, y(k / 10.0), "#ddd");
    doc.text(l - 6, y(k / 10.0) + 4, svg::num(k / 10.0).substr(0, 3), 11, "end");
  }
  for (const auto& a : rep.archs) {
    for (const auto& [s, p] : a.curve) doc.text(x(s), h - b + 16, std::to_string(s), 10, "middle");
    break;
  }
  doc.line(l, h - b, w - r, h - b, "#000");
  doc.line(l, t, l, h - b, "#000");
  doc.text((l + w - r) / 2, h - 10, "SNR (dB)", 12, "middle");
  doc.text(14, t - 10, "accuracy", 12, "start");
  doc.text((l + w - r) / 2, 18, "Accuracy vs SNR (" + rep.paradigm + ")", 13, "middle");
  for (std::size_t i = 0; i < rep.archs.size(); ++i) {
    const auto& a = rep.archs[i];
    const auto& color = svg::palette()[i % svg::palette().size()];
    std::vector<std::pair<double, double>> pts;
    for (const auto& [s, p] : a.curve) {
      pts.emplace_back(x(s), y(p.mean));
      doc.line(x(s), y(std::min(1.0, p.mean + p.std)), x(s), y(std::max(0.0, p.mean - p.std)), color);
      doc.circle(x(s), y(p.mean), 2.5, color);
    }
    doc.polyline(pts, color);
    doc.line(w - r + 15, t + 20 + 18.0 * i, w - r + 35, t + 20 + 18.0 * i, color, 2);
    doc.text(w - r + 40, t + 24 + 18.0 * i, a.name, 11);
  }
  return doc.str();
}

inline std::string overall_plot(const Report& rep) {
  const double w = 520, h = 380 + 16.0 * static_cast<double>(rep.pairs.size()), l = 60, t = 30, plot_h = 280;
  svg::Document doc(w, h);
  const svg::Scale y{0, 1, t + plot_h, t};
  for (int k = 0; k <= 10; k += 2) {
    doc.line(l, y(k / 10.0), w - 20, y(k / 10.0), "#ddd");
    doc.text(l - 6, y(k / 10.0) + 4, svg::num(k / 10.0).substr(0, 3), 11, "end");
  }
  doc.text(w / 2, 18, "Mean overall accuracy (" + rep.paradigm + ")", 13, "middle");
  const double slot = (w - 20 - l) / static_cast<double>(std::max<std::size_t>(rep.archs.size(), 1));
  for (std::size_t i = 0; i < rep.archs.size(); ++i) {
    const auto& a = rep.archs[i];
    const auto& color = svg::palette()[i % svg::palette().size()];
    const double cx = l + slot * (static_cast<double>(i) + 0.5);
    doc.rect(cx - slot * 0.3, y(a.mean.mean), slot * 0.6, y(0) - y(a.mean.mean), color);
    doc.line(cx, y(std::min(1.0, a.mean.mean + a.mean.std)), cx, y(std::max(0.0, a.mean.mean - a.mean.std)), "#000",
             1.5);
    doc.text(cx, y(a.mean.mean) - 6, svg::num(100 * a.mean.mean) + "%", 11, "middle");
    doc.text(cx, t + plot_h + 16, a.name, 11, "middle");
  }
  doc.line(l, t + plot_h, w - 20, t + plot_h, "#000");
  double ty = t + plot_h + 44;
  for (const auto& p : rep.pairs) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s vs %s: p = %.3g", p.a.c_str(), p.b.c_str(), p.test.p);
    doc.text(l, ty, buf, 11);
    ty += 16;
  }
  return doc.str();
}

inline std::string confusion_plot(const ArchSummary& a, const std::vector<std::string>& names,
                                  const std::string& paradigm) {
  const std::size_t k = a.confusion.size();
  const double cell = 34, l = 80, t = 40;
  svg::Document doc(l + cell * static_cast<double>(k) + 20, t + cell * static_cast<double>(k) + 70);
  doc.text(l + cell * static_cast<double>(k) / 2, 22, a.name + " confusion (" + paradigm + ")", 13, "middle");
  for (std::size_t r = 0; r < k; ++r) {
    const std::string label = r < names.size() ? names[r] : std::to_string(r);
    doc.text(l - 6, t + cell * (static_cast<double>(r) + 0.6), label, 10, "end");
    doc.text(l + cell * (static_cast<double>(r) + 0.5), t + cell * static_cast<double>(k) + 14, label, 9, "middle");
    for (std::size_t c = 0; c < k; ++c) {
      const double v = a.confusion[r][c];
      const double x0 = l + cell * static_cast<double>(c), y0 = t + cell * static_cast<double>(r);
      doc.rect(x0, y0, cell, cell, svg::heat(v), "#fff");
      doc.text(x0 + cell / 2, y0 + cell * 0.6, svg::num(v).substr(0, 4), 9, "middle", v > 0.5 ? "#fff" : "#000");
    }
  }
  doc.text(l + cell * static_cast<double>(k) / 2, t + cell * static_cast<double>(k) + 34, "predicted", 11, "middle");
  doc.text(8, t - 8, "true", 11);
  return doc.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace detail

/// Writes report.json, accuracy_by_snr.csv, summary.txt and the SVG figures.
/// Returns the paths written.
inline std::vector<std::filesystem::path> write_report(const Report& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    detail::write_text(dir / name, text);
    written.push_back(dir / name);
  };
  emit("report.json", report_json(rep).dump(1) + "\n");

  std::ostringstream csv;
  csv << "snr_db";
  for (const auto& a : rep.archs) csv << ',' << a.name << "_mean," << a.name << "_std";
  csv << '\n';
  std::set<int> snrs;
  for (const auto& a : rep.archs) {
    for (const auto& [s, p] : a.curve) snrs.insert(s);
  }
  for (const int s : snrs) {
    csv << s;
    for (const auto& a : rep.archs) {
      const auto it = a.curve.find(s);
      if (it == a.curve.end()) {
        csv << ",,";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f", it->second.mean, it->second.std);
        csv << buf;
      }
    }
    csv << '\n';
  }
  emit("accuracy_by_snr.csv", csv.str());
  emit("summary.txt", format_summary(rep));
  emit("accuracy_vs_snr.svg", detail::accuracy_plot(rep));
  emit("overall_accuracy.svg", detail::overall_plot(rep));
  for (const auto& a : rep.archs) emit("confusion_" + a.name + ".svg", detail::confusion_plot(a, rep.class_names, rep.paradigm));
  return written;
}

}  // namespace cplx
