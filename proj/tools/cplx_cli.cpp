#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "json.hpp"

#include "cplx/actmax.hpp"
#include "cplx/experiments.hpp"
#include "cplx/signal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kFormat = 3, kNumeric = 4 };

struct TrainOverrides {
  std::size_t epochs = cplx::TrainConfig{}.epochs;
  std::size_t batch_size = cplx::TrainConfig{}.batch_size;
  double lr = cplx::AdamConfig{}.lr;
  std::size_t patience = cplx::TrainConfig{}.patience;
  double val_fraction = cplx::TrainConfig{}.val_fraction;

  void add_to(CLI::App& app) {
    app.add_option("--epochs", epochs, "Maximum training epochs")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--lr", lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--patience", patience, "Early-stopping patience in epochs")->capture_default_str();
    app.add_option("--val-fraction", val_fraction, "Held-out share of the training rows")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 0.99));
  }

  [[nodiscard]] cplx::TrainConfig config() const {
    cplx::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.adam.lr = lr;
    c.patience = patience;
    c.val_fraction = val_fraction;
    return c;
  }

  [[nodiscard]] json echo() const {
    const auto c = config();
    return {{"epochs", epochs},         {"batch_size", batch_size}, {"lr", lr},
            {"beta1", c.adam.beta1},    {"beta2", c.adam.beta2},    {"eps", c.adam.eps},
            {"patience", patience},     {"val_fraction", val_fraction}};
  }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<cplx::ModelSpec> resolve_architectures(const std::vector<std::string>& names) {
  std::vector<cplx::ModelSpec> out;
  if (names.empty()) {
    for (const auto& n : cplx::architecture_names()) out.push_back(cplx::model_spec(n));
  }
  for (const auto& n : names) out.push_back(cplx::model_spec(n));
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100 * v);
  return buf;
}

struct Options {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  // gen
  std::size_t count = 0;
  std::string out;

  // shared
  std::string data;
  std::string paradigm = "original";
  std::vector<std::string> archs;
  std::size_t trials = 5;
  TrainOverrides train;

  // actmax
  std::string checkpoint;
  cplx::ActMaxConfig actmax;

  // report
  std::string results;
};

int cmd_gen(const Options& o) {
  if (o.count == 0) throw CLI::ValidationError("--count", "must be at least 1");
  const auto ds = cplx::signal::generate_dataset(o.count, o.seed, o.jobs);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  cplx::write_iqds(ds, out.string());
  write_json(out.string() + ".config.json",
             {{"command", "gen"}, {"count", o.count}, {"seed", o.seed}, {"jobs", o.jobs}, {"out", o.out},
              {"frames", ds.size()}});
  std::cout << "wrote " << ds.size() << " frames to " << o.out << '\n';
  return kOk;
}

int cmd_convert_info(const Options& o) {
  const auto ds = cplx::read_iqds(o.data);
  std::map<std::pair<int, int>, std::size_t> cells;
  for (const auto& f : ds.frames) ++cells[{f.mod_id, f.snr_db}];
  std::size_t lo = ds.size(), hi = 0;
  for (const auto& [k, n] : cells) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  std::cout << o.data << ": valid IQDS v" << cplx::kIqdsVersion << '\n'
            << "  frames      " << ds.size() << '\n'
            << "  classes     " << ds.mod_names.size() << ':';
  for (const auto& n : ds.mod_names) std::cout << ' ' << n;
  std::cout << "\n  snrs        " << ds.snrs.size() << ':';
  for (const auto s : ds.snrs) std::cout << ' ' << s;
  std::cout << "\n  cells       " << cells.size() << " non-empty, " << (cells.empty() ? 0 : lo) << " to " << hi
            << " frames each\n";
  return kOk;
}

int cmd_train(const Options& o) {
  if (o.archs.size() != 1) throw CLI::ValidationError("--arch", "train takes exactly one architecture");
  const auto spec = cplx::model_spec(o.archs.front());
  const auto paradigm = cplx::parse_paradigm(o.paradigm);
  const auto ds = cplx::read_iqds(o.data);
  const auto s = cplx::split(ds, cplx::paradigm_split(paradigm, o.seed));
  const fs::path out(o.out);
  fs::create_directories(out);
  json echo{{"command", "train"}, {"data", o.data},  {"paradigm", o.paradigm}, {"arch", spec.name},
            {"seed", o.seed},     {"out", o.out},    {"train", o.train.echo()}};
  write_json(out / "config.json", echo);

  const auto [x, y] = cplx::to_tensor(ds, s.train);
  auto model = cplx::build(spec, o.seed);
  auto tc = o.train.config();
  tc.seed = o.seed;
  json epochs = json::array();
  const auto history = cplx::train(model, x, y, tc, [&](const cplx::EpochStats& e) {
    std::printf("epoch %3zu  train loss %.4f  val loss %.4f  val acc %s\n", e.epoch, e.train_loss, e.val_loss,
                percent(e.val_accuracy).c_str());
    std::fflush(stdout);
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
  });
  cplx::save_checkpoint(model, (out / "model.ckpt").string());

  const auto [xt, yt] = cplx::to_tensor(ds, s.test);
  const auto pred = cplx::predict(model, xt);
  std::vector<int> snr(s.test.size());
  for (std::size_t i = 0; i < snr.size(); ++i) snr[i] = ds.frames[s.test[i]].snr_db;
  auto result = cplx::score_predictions(yt, pred, snr, ds.mod_names.size());
  write_json(out / "history.json", {{"epochs", epochs},
                                     {"best_epoch", history.best_epoch},
                                     {"stopped_early", history.stopped_early},
                                     {"test_accuracy", result.overall_accuracy},
                                     {"parameters", model.param_count()}});
  std::cout << spec.name << ": " << model.param_count() << " parameters, test accuracy "
            << percent(result.overall_accuracy) << " on " << s.test.size() << " frames\n";
  return kOk;
}

int cmd_experiment(const Options& o) {
  cplx::ExperimentConfig cfg;
  cfg.paradigm = cplx::parse_paradigm(o.paradigm);
  cfg.trials = o.trials;
  cfg.seed = o.seed;
  cfg.architectures = resolve_architectures(o.archs);
  cfg.train = o.train.config();
  cfg.jobs = o.jobs;
  const auto ds = cplx::read_iqds(o.data);

  const fs::path out(o.out);
  fs::create_directories(out);
  json arch_names = json::array();
  for (const auto& a : cfg.architectures) arch_names.push_back(a.name);
  write_json(out / "config.json", {{"command", "experiment"},
                                   {"data", o.data},
                                   {"paradigm", o.paradigm},
                                   {"architectures", arch_names},
                                   {"trials", o.trials},
                                   {"seed", o.seed},
                                   {"jobs", o.jobs},
                                   {"out", o.out},
                                   {"train", o.train.echo()}});

  json completed = json::array();
  const std::size_t expected = cfg.trials * cfg.architectures.size();
  auto manifest = [&](const std::string& status, const std::string& error) {
    json m{{"status", status}, {"expected", expected}, {"completed", completed}};
    if (!error.empty()) m["error"] = error;
    write_json(out / "manifest.json", m);
  };
  std::vector<cplx::TrialResult> results;
  try {
    results = cplx::run_paradigm(ds, cfg, [&](const cplx::TrialResult& r) {
      cplx::save_trial(r, out);
      completed.push_back(cplx::trial_file_name(r));
      std::printf("trial %zu %-9s accuracy %s (%zu epochs)\n", r.trial, r.architecture.c_str(),
                  percent(r.overall_accuracy).c_str(), r.epochs);
      std::fflush(stdout);
    });
  } catch (const std::exception& e) {
    manifest("failed", e.what());
    throw;
  }
  manifest("complete", "");
  const auto rep = cplx::build_report(results, ds.mod_names);
  cplx::write_report(rep, out);
  std::cout << cplx::format_summary(rep);
  return kOk;
}

int cmd_actmax(const Options& o) {
  // Everything is loaded before the output directory is touched.
  const auto model = cplx::load_checkpoint(o.checkpoint);
  const auto ds = cplx::read_iqds(o.data);
  const auto s = cplx::split(ds, cplx::paradigm_split(cplx::parse_paradigm(o.paradigm), o.seed));
  const auto refs = cplx::reference_frames(ds, s.train);
  auto cfg = o.actmax;
  cfg.seed = o.seed;
  const auto images = cplx::maximize_all(model, cfg, o.jobs);

  const fs::path out(o.out);
  fs::create_directories(out);
  write_json(out / "config.json", {{"command", "actmax"},
                                   {"checkpoint", o.checkpoint},
                                   {"data", o.data},
                                   {"paradigm", o.paradigm},
                                   {"seed", o.seed},
                                   {"jobs", o.jobs},
                                   {"out", o.out},
                                   {"steps", cfg.steps},
                                   {"step_size", cfg.step_size},
                                   {"l2_penalty", cfg.l2_penalty},
                                   {"target_confidence", cfg.target_confidence},
                                   {"init_scale", cfg.init_scale}});
  cplx::render_gallery(images, refs, ds.mod_names, out);
  int hits = 0;
  for (const auto& img : images) {
    const bool top = cplx::argmax_rows(model.forward(img.input, false))[0] == static_cast<int>(img.class_id);
    hits += top;
    std::printf("%-7s p = %.4f  %s  (%zu steps)\n", ds.mod_names[img.class_id].c_str(), img.softmax[img.class_id],
                top ? "argmax" : "      ", img.iterations);
  }
  std::printf("%d of %zu classes reach argmax\n", hits, images.size());
  return kOk;
}

int cmd_report(const Options& o) {
  const auto trials = cplx::load_trials(o.results);
  if (trials.empty()) throw cplx::ConfigError("no trial_*.json files in " + o.results);
  const auto rep = cplx::build_report(trials);
  const fs::path out(o.out.empty() ? o.results : o.out);
  cplx::write_report(rep, out);
  write_json(out / "report_config.json", {{"command", "report"}, {"results", o.results}, {"out", out.string()}});
  std::cout << cplx::format_summary(rep);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complex-valued convolutions for modulation classification"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--seed", o.seed, "Base seed")->envname("CPLX_SEED")->capture_default_str();
  app.add_option("--jobs", o.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic IQDS dataset");
  gen->add_option("--count", o.count, "Frames per (modulation, SNR) cell")->required();
  gen->add_option("--out", o.out, "Output .iqds file")->required();

  auto* info = app.add_subcommand("convert-info", "Validate an IQDS file and summarize it");
  info->add_option("file", o.data, "IQDS file")->required();

  const std::string paradigms = "Train/test paradigm: original, exp1 or exp2";
  auto* train = app.add_subcommand("train", "Train one architecture on one split");
  train->add_option("--data", o.data, "IQDS dataset")->required();
  train->add_option("--arch", o.archs, "CNN2, CNN2-257 or Complex")->required();
  train->add_option("--paradigm", o.paradigm, paradigms)->capture_default_str();
  train->add_option("--out", o.out, "Output directory")->required();
  o.train.add_to(*train);

  auto* exp = app.add_subcommand("experiment", "Repeated trials of every architecture on one paradigm");
  exp->add_option("--data", o.data, "IQDS dataset")->required();
  exp->add_option("--paradigm", o.paradigm, paradigms)->capture_default_str();
  exp->add_option("--trials", o.trials, "Trials per architecture")->capture_default_str()->check(CLI::PositiveNumber);
  exp->add_option("--arch", o.archs, "Restrict to these architectures");
  exp->add_option("--out", o.out, "Output directory")->required();
  o.train.add_to(*exp);

  auto* act = app.add_subcommand("actmax", "One-hot inputs for every class of a trained model");
  act->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  act->add_option("--data", o.data, "IQDS dataset for reference frames")->required();
  act->add_option("--paradigm", o.paradigm, "Paradigm whose training side supplies references")->capture_default_str();
  act->add_option("--out", o.out, "Output directory")->required();
  act->add_option("--steps", o.actmax.steps, "Iteration cap")->capture_default_str();
  act->add_option("--step-size", o.actmax.step_size, "Initial ascent step")->capture_default_str();
  act->add_option("--l2", o.actmax.l2_penalty, "Input-norm penalty")->capture_default_str();
  act->add_option("--target", o.actmax.target_confidence, "Stop at this softmax value")->capture_default_str();
  act->add_option("--init-scale", o.actmax.init_scale, "Std of the random start")->capture_default_str();

  auto* report = app.add_subcommand("report", "Rebuild tables and figures from trial files");
  report->add_option("--results", o.results, "Directory holding trial_*.json")->required();
  report->add_option("--out", o.out, "Output directory (default: the results directory)");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen(o);
    if (info->parsed()) return cmd_convert_info(o);
    if (train->parsed()) return cmd_train(o);
    if (exp->parsed()) return cmd_experiment(o);
    if (act->parsed()) return cmd_actmax(o);
    if (report->parsed()) return cmd_report(o);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const cplx::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const cplx::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const cplx::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
