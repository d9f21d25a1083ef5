// SPDX-License-Identifier: Apache-2.0
#include "leafnet_cli/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <optional>

#include "CLI11.hpp"
#include "leafnet/checkpoint.hpp"
#include "leafnet/data.hpp"
#include "leafnet/error.hpp"
#include "leafnet/metrics.hpp"
#include "leafnet/optim.hpp"
#include "leafnet/parallel.hpp"
#include "leafnet/train.hpp"
#include "leafnet_cli/config.hpp"

namespace leafnet::cli {

namespace fs = std::filesystem;

namespace {

// Raised for usage problems detected after option parsing.
struct UsageError {
  std::string message;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownConfigKey:
    case ErrorCode::KOutOfRange:
      return kBadArgs;
    case ErrorCode::NonFiniteLoss:
      return kTrainingAborted;
    default:
      return kDataError;
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension(suffix);
  return p;
}

struct RunOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string data, out, preset;
  std::optional<std::uint64_t> seed;
};

void add_run_options(CLI::App* sub, RunOptions& o) {
  sub->add_option("--data", o.data, "Dataset root containing train/ and/or test/");
  sub->add_option("--out", o.out, "Output checkpoint path");
  sub->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", o.overrides, "Override a config key (key=value); repeatable");
  sub->add_option("--seed", o.seed, "Random seed");
}

Config resolve_config(const RunOptions& o) {
  Config cfg;
  if (!o.config.empty()) cfg.merge_file(o.config);
  for (const auto& kv : o.overrides) cfg.merge_text(kv, "--set");
  if (!o.data.empty()) cfg.set("data", o.data);
  if (!o.out.empty()) cfg.set("out", o.out);
  if (!o.preset.empty()) cfg.set("preset", o.preset);
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  if (const auto t = cfg.get_size("threads"); t > 0) set_num_threads(t);
  return cfg;
}

void require_keys(const Config& cfg, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (cfg.get(k).empty()) throw UsageError{std::string("missing required --") + k};
  }
}

Dataset load_training_split(const Config& cfg, const InputSpec& input, DType dtype, std::ostream& out) {
  const auto manifest = scan_dataset(cfg.get("data"));
  for (const auto& u : manifest.unreadable) out << "warning: unreadable " << u.path.string() << " (" << u.reason << ")\n";
  return load_split(manifest, "train", input.height, input.width, dtype);
}

void print_epochs(const TrainResult& r, std::ostream& out) {
  for (const auto& e : r.history) {
    out << "epoch " << e.epoch << "  train_loss " << fmt("%.4f", e.train_loss) << "  train_acc "
        << fmt("%.4f", e.train_acc) << "  val_loss " << fmt("%.4f", e.val_loss) << "  val_acc "
        << fmt("%.4f", e.val_acc) << "  lr " << fmt("%.3g", e.lr);
    for (const auto& ev : e.events) out << "  [" << ev << "]";
    out << '\n';
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCode::IoFailure, "cannot write " + path.string());
  f << text;
}

void persist_run(const std::string& command, const Config& cfg, ModelGraph& model, const TrainConfig& tc,
                 const TrainResult& result, const std::vector<std::string>& class_names, std::ostream& out) {
  const fs::path ckpt_path = cfg.get("out");
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  const Optimizer opt(tc.optimizer);
  Checkpoint ckpt = make_checkpoint(model, &opt, result.best_epoch,
                                    result.best_epoch ? std::optional<double>(result.best_val_loss) : std::nullopt);
  ckpt.extra["class_names"] = class_names;
  save_checkpoint(ckpt, ckpt_path);
  write_history_csv(result.history, sibling(ckpt_path, ".history.csv"));
  write_text(sibling(ckpt_path, ".run.cfg"), "# leafnet " + command + " run manifest\n" + cfg.dump());
  out << "checkpoint " << ckpt_path.string() << "\n";
}

int cmd_scan(const std::string& data, std::ostream& out) {
  const auto m = scan_dataset(data);
  out << "classes " << m.class_names.size() << '\n';
  for (const auto& [split, listing] : m.splits) {
    out << split << ' ' << listing.files.size() << " images\n";
    for (std::size_t k = 0; k < m.class_names.size(); ++k)
      out << "  " << k << ' ' << m.class_names[k] << ' ' << listing.counts[k] << '\n';
  }
  for (const auto& u : m.unreadable) out << "unreadable " << u.path.string() << " (" << u.reason << ")\n";
  return kOk;
}

int cmd_train(const RunOptions& o, std::ostream& out) {
  Config cfg = resolve_config(o);
  require_keys(cfg, {"data", "out"});
  const InputSpec input = cfg.input();
  cfg.set("image_size", std::to_string(input.height));
  TrainConfig tc = cfg.train_config();
  if (cfg.get("epochs") == "auto") tc.max_epochs = TrainConfig::baseline().max_epochs;
  cfg.set("epochs", std::to_string(tc.max_epochs));
  out << cfg.dump();

  const Dataset data = load_training_split(cfg, input, cfg.dtype(), out);
  ModelGraph model = build_backbone(cfg.preset(), input, tc.seed, cfg.dtype());
  attach_head(model, cfg.head(data.class_count()));
  const TrainResult result = train(model, data, tc);
  print_epochs(result, out);
  persist_run("train", cfg, model, tc, result, data.class_names, out);
  return kOk;
}

int cmd_finetune(const RunOptions& o, std::optional<std::size_t> unfreeze, std::optional<std::size_t> head,
                 std::ostream& out) {
  RunOptions opts = o;
  Config cfg = resolve_config(opts);
  if (unfreeze) cfg.set("unfreeze_last", std::to_string(*unfreeze));
  if (head) cfg.set("head_classes", std::to_string(*head));
  require_keys(cfg, {"base", "data", "out"});

  ModelGraph model = model_from_checkpoint(load_checkpoint(cfg.get("base")));
  if (cfg.is_set("preset")) {
    require(cfg.preset() == model.preset, ErrorCode::ShapeMismatchOnLoad,
            "base checkpoint is a " + std::string(to_string(model.preset)) + " model, not " + cfg.get("preset"));
  }
  cfg.set("preset", std::string(to_string(model.preset)));
  cfg.set("image_size", std::to_string(model.input.height));
  cfg.set("dtype", std::string(to_string(model.dtype)));
  TrainConfig tc = cfg.train_config();
  if (cfg.get("epochs") == "auto") tc.max_epochs = TrainConfig::fine_tune().max_epochs;
  cfg.set("epochs", std::to_string(tc.max_epochs));
  out << cfg.dump();

  const Dataset data = load_training_split(cfg, model.input, model.dtype, out);
  const std::size_t classes = cfg.get_size("head_classes") ? cfg.get_size("head_classes") : data.class_count();
  if (classes != data.class_count())
    throw UsageError{"--head " + std::to_string(classes) + " does not match the dataset's " +
                     std::to_string(data.class_count()) + " classes"};

  strip_head(model);
  model.seed = tc.seed;
  attach_head(model, cfg.head(classes));
  const auto groups = model.param_groups();
  std::size_t head_groups = 0;
  for (const auto& g : groups) head_groups += g.head;
  const std::size_t k = cfg.get_size("unfreeze_last");
  if (k > groups.size() - head_groups)
    throw UsageError{"--unfreeze-last " + std::to_string(k) + " exceeds the " +
                     std::to_string(groups.size() - head_groups) + " backbone layers"};
  set_trainable(model, TrainablePolicy::UnfreezeLastK, head_groups + k);
  const auto summary = parameter_summary(model);
  out << "parameters " << summary.total << " trainable " << summary.trainable << " frozen " << summary.frozen
      << '\n';

  const TrainResult result = train(model, data, tc);
  print_epochs(result, out);
  if (!result.history.empty()) {
    double best_acc = 0.0;
    for (const auto& e : result.history) best_acc = std::max(best_acc, e.val_acc);
    out << "val_acc first " << fmt("%.4f", result.history.front().val_acc) << " best " << fmt("%.4f", best_acc)
        << '\n';
  }
  persist_run("finetune", cfg, model, tc, result, data.class_names, out);
  return kOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_root, const std::string& report_path,
                 std::string split, std::size_t batch_size, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  ModelGraph model = model_from_checkpoint(ckpt);
  require(model.has_head(), ErrorCode::ShapeMismatchOnLoad, "checkpoint has no classification head");
  const auto manifest = scan_dataset(data_root);
  if (split.empty()) split = manifest.has_split("test") ? "test" : "train";
  if (ckpt.extra.contains("class_names")) {
    const auto names = ckpt.extra.at("class_names").get<std::vector<std::string>>();
    require(names == manifest.class_names, ErrorCode::SchemaMismatch,
            "dataset classes do not match the checkpoint's classes");
  }
  const Dataset data = load_split(manifest, split, model.input.height, model.input.width, model.dtype);
  ReportMetadata meta{fs::path(ckpt_path).stem().string(), data_root + ":" + split, utc_timestamp()};
  const EvalReport report = evaluate(model, data, meta, batch_size);
  if (!report_path.empty()) save_report(report, report_path);
  out << render_comparison({report});
  if (report.auc_w) out << "auc_w " << fmt("%.4f", *report.auc_w) << '\n';
  return kOk;
}

int cmd_compare(const std::vector<std::string>& paths, bool csv, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (const auto& p : paths) reports.push_back(load_report(p));
  out << render_comparison(reports, csv ? TableFormat::Csv : TableFormat::Text);
  return kOk;
}

int cmd_schedule(double lr0, double lr_min, std::size_t steps, const std::string& path, std::ostream& out) {
  if (steps < 1) throw UsageError{"--steps must be at least 1"};
  if (!(lr_min >= 0.0 && lr_min <= lr0)) throw UsageError{"need 0 <= --min-lr <= --lr0"};
  const CosineSchedule s{lr0, lr_min, steps};
  std::string csv = "step,lr\n";
  for (std::size_t t = 0; t <= steps; ++t) csv += std::to_string(t) + "," + fmt("%.17g", cosine_lr(s, t)) + "\n";
  if (path.empty()) {
    out << csv;
  } else {
    write_text(path, csv);
    out << "wrote " << steps + 1 << " rows to " << path << '\n';
  }
  return kOk;
}

int cmd_synth(std::size_t classes, std::size_t per_class, std::size_t test_per_class, std::size_t size,
              std::uint64_t seed, std::size_t variant, const std::string& root, std::ostream& out) {
  if (classes < 2) throw UsageError{"--classes must be at least 2"};
  if (per_class < 4) throw UsageError{"--per-class must be at least 4"};
  if (size < 1) throw UsageError{"--size must be positive"};
  SynthOptions so;
  so.variant = variant;
  write_dataset_tree(synth_dataset(classes, per_class, size, size, seed, so), root, "train");
  if (test_per_class > 0) {
    if (test_per_class < 4) throw UsageError{"--test-per-class must be 0 or at least 4"};
    write_dataset_tree(synth_dataset(classes, test_per_class, size, size, derive_seed(seed, "test"), so), root,
                       "test");
  }
  out << "wrote " << classes << " classes to " << root << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual-network image classifier toolkit", "leafnet"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  std::string scan_data;
  auto* scan = app.add_subcommand("scan", "Summarize a class-per-directory dataset tree");
  scan->add_option("--data", scan_data, "Dataset root")->required();

  RunOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a model from random initialization");
  add_run_options(train_cmd, train_opts);
  train_cmd->add_option("--preset", train_opts.preset, "Backbone preset (mini or resnet50)");

  RunOptions ft_opts;
  std::string ft_base;
  std::optional<std::size_t> ft_unfreeze, ft_head;
  auto* finetune = app.add_subcommand("finetune", "Attach a new head to a trained backbone and fine-tune");
  add_run_options(finetune, ft_opts);
  finetune->add_option("--base", ft_base, "Base checkpoint");
  finetune->add_option("--unfreeze-last", ft_unfreeze, "Backbone layers to unfreeze (head always trains)");
  finetune->add_option("--head", ft_head, "Head class count (defaults to the dataset's)");
  finetune->add_option("--preset", ft_opts.preset, "Expected backbone preset of the base checkpoint");

  std::string ev_ckpt, ev_data, ev_report, ev_split;
  std::size_t ev_batch = 32;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint and write a JSON report");
  evaluate_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  evaluate_cmd->add_option("--data", ev_data, "Dataset root")->required();
  evaluate_cmd->add_option("--report", ev_report, "Report JSON output path");
  evaluate_cmd->add_option("--split", ev_split, "train or test (default: test when present)")
      ->check(CLI::IsMember({"train", "test"}));
  evaluate_cmd->add_option("--batch-size", ev_batch, "Evaluation batch size")->check(CLI::PositiveNumber);

  std::vector<std::string> cmp_reports;
  bool cmp_csv = false;
  auto* compare = app.add_subcommand("compare", "Render a comparison table from report JSON files");
  compare->add_option("--reports", cmp_reports, "Report JSON files")->required();
  compare->add_flag("--csv", cmp_csv, "Emit CSV instead of aligned text");

  double sc_lr0 = 1e-4, sc_min = 0.0;
  std::size_t sc_steps = 0;
  std::string sc_out;
  auto* schedule = app.add_subcommand("schedule", "Dump the cosine learning-rate schedule as CSV");
  schedule->add_option("--lr0", sc_lr0, "Initial learning rate")->required();
  schedule->add_option("--min-lr", sc_min, "Final learning rate");
  schedule->add_option("--steps", sc_steps, "Decay horizon in steps")->required();
  schedule->add_option("--out", sc_out, "CSV output path (default: stdout)");

  std::size_t sy_classes = 4, sy_per = 64, sy_test = 0, sy_size = 32, sy_variant = 0;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic PDIMG dataset tree");
  synth->add_option("--classes", sy_classes, "Class count");
  synth->add_option("--per-class", sy_per, "Training images per class");
  synth->add_option("--test-per-class", sy_test, "Test images per class (0: no test split)");
  synth->add_option("--size", sy_size, "Image height and width");
  synth->add_option("--seed", sy_seed, "Random seed");
  synth->add_option("--variant", sy_variant, "Task variant (0: base task; others are shifted)");
  synth->add_option("--out", sy_out, "Output root")->required();

  std::vector<const char*> argv{"leafnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadArgs;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == scan) return cmd_scan(scan_data, out);
    if (active == train_cmd) return cmd_train(train_opts, out);
    if (active == finetune) {
      if (!ft_base.empty()) ft_opts.overrides.push_back("base=" + ft_base);
      return cmd_finetune(ft_opts, ft_unfreeze, ft_head, out);
    }
    if (active == evaluate_cmd) return cmd_evaluate(ev_ckpt, ev_data, ev_report, ev_split, ev_batch, out);
    if (active == compare) return cmd_compare(cmp_reports, cmp_csv, out);
    if (active == schedule) return cmd_schedule(sc_lr0, sc_min, sc_steps, sc_out, out);
    if (active == synth) return cmd_synth(sy_classes, sy_per, sy_test, sy_size, sy_seed, sy_variant, sy_out, out);
  } catch (const UsageError& e) {
    err << "leafnet " << active->get_name() << ": " << e.message << "\n\n" << active->help();
    return kBadArgs;
  } catch (const Error& e) {
    err << "leafnet " << active->get_name() << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "leafnet " << active->get_name() << ": " << e.what() << '\n';
    return kDataError;
  }
  return kBadArgs;
}

}  // namespace leafnet::cli
