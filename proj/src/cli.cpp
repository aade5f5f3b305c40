#include "ssm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "ssm/checkpoint.hpp"
#include "ssm/config.hpp"
#include "ssm/datagen.hpp"
#include "ssm/gradcheck.hpp"
#include "ssm/pretrainer.hpp"
#include "ssm/recognizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssm::cli {

namespace {

// Shortcut flag -> config key. Shortcuts and --section.key=value flags both override the config file.
struct Shortcut {
  const char* flag;
  const char* key;
  const char* help;
};

struct Command {
  std::string name;
  RunConfig rc;
  fs::path run_dir;
};

fs::path default_run_dir(const std::string& command, const RunConfig& rc) {
  const char* env = std::getenv("SSM_OUTPUT_ROOT");
  fs::path root = (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("runs");
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream name;
  name << command << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << rc.digest();
  return root / name.str();
}

void prepare_run_dir(Command& cmd) {
  const std::string& out = cmd.rc.get("run.out");
  cmd.run_dir = out.empty() ? default_run_dir(cmd.name, cmd.rc) : fs::path(out);
  fs::create_directories(cmd.run_dir);
  std::ofstream f(cmd.run_dir / "run_config.json", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (cmd.run_dir / "run_config.json").string());
  f << json{{"command", cmd.name}, {"config", cmd.rc.to_json()}}.dump(2) << '\n';
}

fs::path require_file(const RunConfig& rc, const std::string& key) {
  const std::string& v = rc.get(key);
  if (v.empty()) throw ConfigError(key + " is required");
  if (!fs::is_regular_file(v)) throw ConfigError(key + ": no such file '" + v + "'");
  return v;
}

std::string fmt_acc(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

// --- commands -------------------------------------------------------------------------------------------

int cmd_gen_data(Command& cmd) {
  const CorpusConfig corpus = corpus_config_from(cmd.rc);
  prepare_run_dir(cmd);
  const DatasetManifest m = gen_corpus(corpus, cmd.run_dir);
  std::cout << (cmd.run_dir / "manifest.jsonl").string() << '\n';
  std::cerr << "gen-data: " << m.records.size() << " records\n";
  return kOk;
}

int cmd_pretrain(Command& cmd) {
  const PretrainConfig config = pretrain_config_from(cmd.rc);
  const fs::path manifest = require_file(cmd.rc, "data.manifest");
  std::optional<fs::path> resume;
  if (!cmd.rc.get("pretrain.resume").empty()) resume = require_file(cmd.rc, "pretrain.resume");
  prepare_run_dir(cmd);
  const PretrainRunResult r = pretrain_run(config, manifest, cmd.run_dir, resume, cmd.rc.to_json());
  std::cout << r.checkpoint_path.string() << '\n';
  return kOk;
}

int cmd_finetune(Command& cmd) {
  const FinetuneConfig config = finetune_config_from(cmd.rc);
  const fs::path manifest = require_file(cmd.rc, "data.manifest");
  if (config.init_checkpoint && !fs::is_regular_file(*config.init_checkpoint)) {
    throw ConfigError("finetune.init: no such file '" + config.init_checkpoint->string() + "'");
  }
  std::vector<double> fractions;
  for (const auto& f : cmd.rc.get_list("finetune.fractions")) {
    try {
      fractions.push_back(std::stod(f));
    } catch (const std::exception&) {
      throw ConfigError("finetune.fractions: cannot parse '" + f + "'");
    }
  }
  prepare_run_dir(cmd);
  if (!fractions.empty()) {
    const EvalReport report = data_ratio_run(config, manifest, fractions, cmd.run_dir);
    std::cout << "| fraction | n_train | val | test |\n|---|---|---|---|\n";
    for (const auto& row : report.rows) {
      std::cout << "| " << row.at("fraction").get<double>() << " | " << row.at("n_train") << " | "
                << fmt_acc(row.value("val", 0.0)) << " | " << fmt_acc(row.value("test", 0.0)) << " |\n";
    }
    return kOk;
  }
  const FinetuneResult r = finetune_run(config, manifest, cmd.run_dir);
  for (const auto& [split, acc] : r.report.accuracy) std::cout << split << " word_accuracy " << fmt_acc(acc) << '\n';
  return kOk;
}

int cmd_eval(Command& cmd) {
  const fs::path ckpt_path = require_file(cmd.rc, "eval.checkpoint");
  const fs::path manifest = require_file(cmd.rc, "data.manifest");
  std::vector<Split> splits;
  for (const auto& s : cmd.rc.get_list("eval.splits")) splits.push_back(parse_split(s));
  if (splits.empty()) throw ConfigError("eval.splits is empty");
  Recognizer rec = Recognizer::from_checkpoint(Checkpoint::load(ckpt_path));
  prepare_run_dir(cmd);

  EvalReport report;
  report.config = rec.config.to_json();
  for (Split split : splits) {
    const auto items = load_dataset(manifest, split);
    if (items.empty()) continue;
    auto [acc, samples] = evaluate(rec, items);
    report.accuracy[to_string(split)] = acc;
    // Per-sample predictions follow the last listed split (test by default), matching fine-tuning output.
    report.samples = std::move(samples);
  }
  report.write(cmd.run_dir / "report.jsonl");
  report.write_predictions(cmd.run_dir / "predictions.jsonl");
  for (const auto& [split, acc] : report.accuracy) std::cout << split << " word_accuracy " << fmt_acc(acc) << '\n';
  return kOk;
}

int cmd_reconstruct(Command& cmd) {
  const fs::path ckpt_path = require_file(cmd.rc, "reconstruct.checkpoint");
  const fs::path manifest = require_file(cmd.rc, "data.manifest");
  std::vector<InversionKind> kinds;
  for (const auto& k : cmd.rc.get_list("reconstruct.kinds")) kinds.push_back(parse_inversion_kind(k));
  const int n = cmd.rc.get_int("reconstruct.n_images");
  if (n <= 0) throw ConfigError("reconstruct.n_images must be positive");
  const Split split = parse_split(cmd.rc.get("reconstruct.split"));
  Pretrainer trainer = Pretrainer::from_checkpoint(Checkpoint::load(ckpt_path));
  auto items = load_dataset(manifest, split);
  if (items.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  std::vector<Image> images;
  for (std::size_t i = 0; i < items.size() && static_cast<int>(i) < n; ++i) images.push_back(items[i].image);
  prepare_run_dir(cmd);
  const fs::path out = cmd.run_dir / "reconstruction.png";
  const int panels = reconstruct_grid(trainer, images, kinds, out);
  std::cout << out.string() << '\n';
  std::cerr << "reconstruct: " << panels << " panels\n";
  return kOk;
}

struct AblationRow {
  std::string name;
  std::map<std::string, double> accuracy;
  double avg() const {
    if (accuracy.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, a] : accuracy) s += a;
    return s / static_cast<double>(accuracy.size());
  }
};

// Pretrain with rc, fine-tune from the result, return held-out accuracies.
AblationRow ablation_cell(const std::string& name, const RunConfig& rc, const fs::path& manifest, const fs::path& dir) {
  const PretrainConfig pc = pretrain_config_from(rc);
  const PretrainRunResult pr = pretrain_run(pc, manifest, dir / "pretrain", std::nullopt, rc.to_json());
  FinetuneConfig fc = finetune_config_from(rc);
  fc.init_checkpoint = pr.checkpoint_path;
  const FinetuneResult fr = finetune_run(fc, manifest, dir / "finetune");
  AblationRow row{name, fr.report.accuracy};
  for (const auto& [split, acc] : row.accuracy) {
    if (!std::isfinite(acc) || acc < 0.0 || acc > 1.0) {
      throw std::runtime_error("ablation cell " + name + " produced an invalid accuracy for " + split);
    }
  }
  return row;
}

void write_table(const fs::path& stem, const std::vector<std::string>& lead_cols,
                 const std::vector<std::vector<std::string>>& lead, const std::vector<AblationRow>& rows) {
  std::vector<std::string> splits{"val", "test"};
  splits.erase(std::remove_if(splits.begin(), splits.end(),
                              [&](const std::string& s) {
                                return std::none_of(rows.begin(), rows.end(),
                                                    [&](const AblationRow& r) { return r.accuracy.count(s) > 0; });
                              }),
               splits.end());
  for (const auto& r : rows) {
    for (const auto& [s, _] : r.accuracy) {
      if (std::find(splits.begin(), splits.end(), s) == splits.end()) splits.push_back(s);
    }
  }
  std::ostringstream md;
  md << '|';
  for (const auto& c : lead_cols) md << ' ' << c << " |";
  for (const auto& s : splits) md << ' ' << s << " |";
  md << " Avg |\n|";
  for (std::size_t i = 0; i < lead_cols.size() + splits.size() + 1; ++i) md << "---|";
  md << '\n';
  std::ofstream jl(stem.string() + ".jsonl", std::ios::binary | std::ios::trunc);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    md << '|';
    for (const auto& c : lead[r]) md << ' ' << c << " |";
    json j{{"row", rows[r].name}};
    for (const auto& s : splits) {
      const auto it = rows[r].accuracy.find(s);
      md << ' ' << (it == rows[r].accuracy.end() ? "-" : fmt_acc(it->second)) << " |";
      if (it != rows[r].accuracy.end()) j[s] = it->second;
    }
    md << ' ' << fmt_acc(rows[r].avg()) << " |\n";
    j["avg"] = rows[r].avg();
    jl << j.dump() << '\n';
  }
  std::ofstream(stem.string() + ".md", std::ios::binary | std::ios::trunc) << md.str();
  std::cout << md.str() << '\n';
}

int cmd_ablate(Command& cmd) {
  const fs::path manifest = require_file(cmd.rc, "data.manifest");
  std::vector<InputMode> modes;
  for (const auto& m : cmd.rc.get_list("ablate.modes")) modes.push_back(parse_input_mode(m));
  struct LossCell {
    std::string label;
    bool dis, den;
  };
  std::vector<LossCell> losses;
  for (const auto& l : cmd.rc.get_list("ablate.losses")) {
    if (l == "dis") losses.push_back({"L_dis", true, false});
    else if (l == "den") losses.push_back({"L_den", false, true});
    else if (l == "dis+den" || l == "den+dis") losses.push_back({"L_dis+L_den", true, true});
    else throw ConfigError("ablate.losses: unknown entry '" + l + "' (dis, den, dis+den)");
  }
  if (modes.empty() && losses.empty()) throw ConfigError("ablate: nothing to run");
  parse_input_mode(cmd.rc.get("ablate.loss_mode"));
  // Validate every derived config before any work starts.
  pretrain_config_from(cmd.rc);
  finetune_config_from(cmd.rc);
  prepare_run_dir(cmd);

  if (!modes.empty()) {
    std::vector<AblationRow> rows;
    std::vector<std::vector<std::string>> lead;
    for (InputMode mode : modes) {
      RunConfig rc = cmd.rc;
      rc.set("pretrain.input_mode", to_string(mode));
      rows.push_back(ablation_cell(to_string(mode), rc, manifest, cmd.run_dir / ("input_" + to_string(mode))));
      auto mark = [&](InputMode m) { return std::string(mode == m || mode == InputMode::Mixed ? "x" : ""); };
      std::string input = mode == InputMode::NoiseBlur    ? "add noise & blur"
                          : mode == InputMode::OtherImage ? "add another image"
                                                          : to_string(mode);
      lead.push_back({input, mark(InputMode::HS), mark(InputMode::VS), mark(InputMode::RS)});
    }
    std::cout << "Input type ablation\n";
    write_table(cmd.run_dir / "ablation_input", {"Input", "HS", "VS", "RS"}, lead, rows);
  }
  if (!losses.empty()) {
    std::vector<AblationRow> rows;
    std::vector<std::vector<std::string>> lead;
    for (const auto& cell : losses) {
      RunConfig rc = cmd.rc;
      rc.set("pretrain.input_mode", rc.get("ablate.loss_mode"));
      rc.set("pretrain.use_dis", cell.dis ? "true" : "false");
      rc.set("pretrain.use_den", cell.den ? "true" : "false");
      std::string dir = cell.label;
      std::replace(dir.begin(), dir.end(), '+', '_');
      rows.push_back(ablation_cell(cell.label, rc, manifest, cmd.run_dir / ("loss_" + dir)));
      lead.push_back({cell.label});
    }
    std::cout << "Feature reconstruction loss ablation\n";
    write_table(cmd.run_dir / "ablation_loss", {"Reconstruction loss"}, lead, rows);
  }
  return kOk;
}

int cmd_gradcheck(Command& cmd) {
  GradCheckOptions opts;
  opts.step = cmd.rc.get_double("gradcheck.step");
  if (!(opts.step > 0.0)) throw ConfigError("gradcheck.step must be positive");
  const auto results = run_gradcheck_suite(cmd.rc.get_u64("run.seed"), opts);
  double worst = 0.0;
  for (const auto& r : results) {
    std::cout << std::left << std::setw(14) << r.component << " entries " << std::setw(6) << r.checked
              << std::scientific << std::setprecision(3) << " max_rel_error " << r.max_rel_error << " ("
              << r.worst_tensor << ")  max_entry_rel_error " << r.max_entry_rel_error << " max_abs_error "
              << r.max_abs_error << std::defaultfloat << '\n';
    worst = std::max(worst, r.max_rel_error);
  }
  std::cout << "overall max_rel_error " << std::scientific << worst << std::defaultfloat << '\n';
  return kOk;
}

// --- parsing --------------------------------------------------------------------------------------------

const std::map<std::string, std::vector<Shortcut>>& shortcuts() {
  static const std::map<std::string, std::vector<Shortcut>> table{
      {"gen-data",
       {{"--n-pretrain", "data.n_pretrain", "unlabeled pretraining images"},
        {"--n-labeled", "data.n_labeled", "labeled images (train/val/test)"}}},
      {"pretrain",
       {{"--data", "data.manifest", "manifest.jsonl"},
        {"--epochs", "pretrain.epochs", "epochs"},
        {"--preset", "model.preset", "model preset"},
        {"--input-mode", "pretrain.input_mode", "HS, VS, RS, mixed, noise_blur, other_image"},
        {"--batch-size", "pretrain.batch_size", "batch size"},
        {"--resume", "pretrain.resume", "checkpoint to resume from"}}},
      {"finetune",
       {{"--data", "data.manifest", "manifest.jsonl"},
        {"--init", "finetune.init", "pretraining checkpoint or 'scratch'"},
        {"--epochs", "finetune.epochs", "epochs"},
        {"--preset", "model.preset", "model preset"},
        {"--fractions", "finetune.fractions", "comma-separated train fractions (data-ratio sweep)"}}},
      {"eval",
       {{"--data", "data.manifest", "manifest.jsonl"},
        {"--checkpoint", "eval.checkpoint", "recognizer checkpoint"},
        {"--splits", "eval.splits", "comma-separated splits"}}},
      {"reconstruct",
       {{"--data", "data.manifest", "manifest.jsonl"},
        {"--checkpoint", "reconstruct.checkpoint", "pretraining checkpoint"},
        {"--kinds", "reconstruct.kinds", "comma-separated HFlip, VFlip, Rotate180"},
        {"--n-images", "reconstruct.n_images", "number of source images"},
        {"--split", "reconstruct.split", "split to draw images from"}}},
      {"ablate",
       {{"--data", "data.manifest", "manifest.jsonl"},
        {"--modes", "ablate.modes", "comma-separated input modes"},
        {"--losses", "ablate.losses", "comma-separated loss cells: dis, den, dis+den"},
        {"--preset", "model.preset", "model preset"}}},
      {"gradcheck", {{"--step", "gradcheck.step", "finite-difference step"}}},
  };
  return table;
}

// Turns leftover "--section.key=value" / "--section.key value" tokens into overrides.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos) {
      throw ConfigError("unrecognized argument '" + tok + "'");
    }
    std::string body = tok.substr(2);
    if (body.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) throw ConfigError("flag '" + tok + "' needs a value");
      body += "=" + extras[++i];
    }
    out.push_back(body);
  }
  return out;
}

std::string first_line(const std::string& s) {
  const auto nl = s.find('\n');
  return nl == std::string::npos ? s : s.substr(0, nl);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Symmetric superimposition pretraining and text recognition", "ssm"};
  app.require_subcommand(1);

  struct SubState {
    CLI::App* app = nullptr;
    std::string config_file, out;
    std::optional<uint64_t> seed;
    std::vector<std::string> sets;
    std::map<std::string, std::string> shortcut_values;
    bool freeze = false;
  };
  std::map<std::string, SubState> subs;
  const std::map<std::string, std::string> descriptions{
      {"gen-data", "render the synthetic corpus and its manifest"},
      {"pretrain", "symmetric superimposition pretraining"},
      {"finetune", "train the text recognizer (optionally from a pretraining checkpoint)"},
      {"eval", "evaluate a recognizer checkpoint"},
      {"reconstruct", "write a reconstruction panel grid from a pretraining checkpoint"},
      {"ablate", "input-type and loss ablation tables"},
      {"gradcheck", "finite-difference gradient check on the tiny config"},
  };
  for (const auto& [name, desc] : descriptions) {
    SubState& st = subs[name];
    st.app = app.add_subcommand(name, desc);
    st.app->allow_extras();
    st.app->add_option("--config", st.config_file, "sectioned key = value config file");
    st.app->add_option("--out", st.out, "run directory (default: $SSM_OUTPUT_ROOT/<command>-<time>-<hash>)");
    st.app->add_option("--seed", st.seed, "global seed");
    st.app->add_option("--set", st.sets, "section.key=value override (repeatable)");
    for (const auto& sc : shortcuts().at(name)) st.app->add_option(sc.flag, st.shortcut_values[sc.key], sc.help);
    if (name == "finetune") st.app->add_flag("--freeze-encoder", st.freeze, "train the decoder only");
  }
  app.footer("Every config key can also be set with --section.key=value.");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ssm: error: " << first_line(e.what()) << '\n';
    return kUserError;
  }

  std::string which;
  for (const auto& [name, st] : subs) {
    if (st.app->parsed()) which = name;
  }

  try {
    SubState& st = subs.at(which);
    Command cmd{which, RunConfig::defaults(), {}};
    if (!st.config_file.empty()) cmd.rc.merge_file(st.config_file);
    for (const auto& sc : shortcuts().at(which)) {
      if (st.app->count(sc.flag) > 0) cmd.rc.set(sc.key, st.shortcut_values[sc.key]);
    }
    if (st.freeze) cmd.rc.set("finetune.freeze_encoder", "true");
    if (st.seed) cmd.rc.set("run.seed", std::to_string(*st.seed));
    if (!st.out.empty()) cmd.rc.set("run.out", st.out);
    for (const auto& s : st.sets) cmd.rc.merge_override(s);
    for (const auto& s : collect_overrides(st.app->remaining())) cmd.rc.merge_override(s);

    torch::manual_seed(cmd.rc.get_u64("run.seed"));
    if (which == "gen-data") return cmd_gen_data(cmd);
    if (which == "pretrain") return cmd_pretrain(cmd);
    if (which == "finetune") return cmd_finetune(cmd);
    if (which == "eval") return cmd_eval(cmd);
    if (which == "reconstruct") return cmd_reconstruct(cmd);
    if (which == "ablate") return cmd_ablate(cmd);
    if (which == "gradcheck") return cmd_gradcheck(cmd);
    throw std::logic_error("unhandled command " + which);
  } catch (const std::invalid_argument& e) {
    std::cerr << "ssm " << which << ": error: " << first_line(e.what()) << '\n';
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "ssm " << which << ": internal error: " << first_line(e.what()) << '\n';
    return kInternalError;
  }
}

}  // namespace ssm::cli
