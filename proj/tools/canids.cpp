// canids: command-line front end for the CAN-ID autoencoder IDS.
//
//   canids gen --profile standard --duration 180 --out benign.csv
//   canids gen --attack dos --duration 120 --seed 7 --out dos.csv
//   canids train --data benign.csv --out run/
//   canids calibrate --data benign.csv --model run/model.bin --out run/
//   canids quantize --data benign.csv --model run/model.bin --out run/
//   canids eval --data dos.csv --qmodel run/model.q8 --attack dos --paper-table --out run/
//   canids replay --data dos.csv --qmodel run/model.q8 --rate 10000 --out run/
//
// Every flag can also be set from a flat key=value file passed with --config;
// flags on the command line win.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "canids/canids.hpp"

namespace fs = std::filesystem;
using namespace canids;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string schema = "csv";
  std::string model;
  std::string qmodel;
  std::optional<int> threshold;
  std::uint64_t seed = 1;
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 0.001;
  double rate = 0.0;
  std::string out = ".";
  bool paper_table = false;
  bool skip_bad = false;

  // gen
  std::string profile = "standard";
  double duration = 180.0;
  std::string attack = "none";
  double attack_rate = 0.0;
  std::string spoof_id = "316";
  double burst_every = 10.0;
  double burst_length = 4.0;

  // replay
  std::string pacing = "virtual";
  bool live = false;
};

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return fs::path(o.out);
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorCode::InvalidArgument, std::string("--") + what + " is required");
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::Io, std::string(what) + " not found: " + path);
}

Dataset load(const Options& o, LoadReport* report = nullptr) {
  require_file(o.data, "data");
  LoadOptions lo;
  lo.policy = o.skip_bad ? ParsePolicy::SkipAndCount : ParsePolicy::FailFast;
  return load_dataset(o.data, LogSchema::from_name(o.schema), lo, report);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << text;
}

AttackSpec::Kind attack_kind(const std::string& name) {
  if (name == "dos") return AttackSpec::Kind::DoS;
  if (name == "fuzzy") return AttackSpec::Kind::Fuzzy;
  if (name == "spoof" || name == "gear" || name == "rpm") return AttackSpec::Kind::Spoof;
  throw Error(ErrorCode::InvalidArgument, "unknown attack '" + name + "'");
}

double default_attack_rate(AttackSpec::Kind k) {
  switch (k) {
    case AttackSpec::Kind::DoS: return 2000.0;
    case AttackSpec::Kind::Fuzzy: return 500.0;
    case AttackSpec::Kind::Spoof: return 1000.0;
  }
  return 0.0;
}

int run_gen(const Options& o) {
  TrafficProfile profile;
  if (o.profile == "standard") profile = TrafficProfile::standard(o.duration, o.seed);
  else if (o.profile == "small") profile = TrafficProfile::small(o.duration, o.seed);
  else throw Error(ErrorCode::InvalidProfile, "unknown profile '" + o.profile + "'");
  Dataset ds = generate_benign(profile);
  if (o.attack != "none") {
    AttackSchedule s;
    s.kind = attack_kind(o.attack);
    s.rate = o.attack_rate > 0 ? o.attack_rate : default_attack_rate(s.kind);
    s.spoof_id = static_cast<std::uint32_t>(std::stoul(o.spoof_id, nullptr, 16));
    s.every = o.burst_every;
    s.length = o.burst_length;
    s.seed = o.seed * 1000003u + 17u;
    ds = inject_attack_bursts(ds, s);
  }
  fs::path path = o.out;
  if (fs::is_directory(path)) path /= o.attack == "none" ? "benign.csv" : o.attack + ".csv";
  save_dataset(ds, path.string());
  const auto counts = ds.label_counts();
  std::cout << path.string() << ": " << ds.size() << " frames (" << counts[0] << " benign, " << counts[1]
            << " attack)\n";
  return 0;
}

int run_ingest_check(const Options& o) {
  LoadReport report;
  const Dataset ds = load(o, &report);
  const auto counts = ds.label_counts();
  const BlockSet blocks = build_blocks(ds.frames);
  std::size_t attack_blocks = 0;
  for (const auto& b : blocks.blocks) attack_blocks += b.label == Label::Attack;
  std::cout << "lines: " << report.lines << "\nframes: " << ds.size() << "\nskipped: " << report.skipped
            << "\nbenign: " << counts[0] << "\nattack: " << counts[1] << "\nunlabeled: " << counts[2]
            << "\nblocks: " << blocks.blocks.size() << " (" << attack_blocks << " attack)\nremainder: "
            << blocks.dropped_frames << "\nmax_id: 0x" << std::hex << report.max_id << std::dec
            << "\nids_above_0x7ff: " << report.ids_above_base_range << '\n';
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

struct Splits {
  std::vector<MessageBlock> train, val, test;
};

Splits split_blocks(const Dataset& ds, std::uint64_t seed) {
  SplitSpec spec;
  spec.seed = seed;
  auto [tr, va, te] = split_contiguous(ds, spec);
  return {build_blocks(tr.frames).blocks, build_blocks(va.frames).blocks, build_blocks(te.frames).blocks};
}

int run_train(const Options& o) {
  const Dataset ds = load(o);
  const fs::path dir = out_dir(o);
  const fs::path model_path = o.model.empty() ? dir / "model.bin" : fs::path(o.model);
  const Splits s = split_blocks(ds, o.seed);
  nn::TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.seed = o.seed;
  std::cerr << "training on " << s.train.size() << " blocks, validating on " << s.val.size() << '\n';
  auto result = nn::train(nn::make_cae<float>(o.seed), s.train, s.val, cfg, [](const nn::EpochLoss& e) {
    std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << '\n';
  });
  nn::save_model(result.model, model_path.string());
  std::ostringstream hist;
  hist << "epoch,train_loss,val_loss\n";
  for (const auto& e : result.history) {
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss);
    hist << line;
  }
  write_text(dir / "train_history.csv", hist.str());
  std::cout << "model: " << model_path.string() << " (best epoch " << result.best_epoch << ", val loss "
            << result.best_loss << ")\n";
  return 0;
}

template <typename F>
int with_model(const Options& o, F&& f) {
  if (!o.qmodel.empty()) {
    require_file(o.qmodel, "qmodel");
    return f(quant::load_quant_model(o.qmodel), "QCAE");
  }
  if (o.model.empty()) throw Error(ErrorCode::ModelMissing, "pass --model or --qmodel");
  require_file(o.model, "model");
  return f(nn::load_model(o.model), "CAE");
}

int resolve_threshold(const Options& o) {
  if (o.threshold) return *o.threshold;
  const fs::path saved = fs::path(o.out) / "threshold.txt";
  if (fs::is_regular_file(saved)) {
    std::ifstream f(saved);
    int t = kDefaultThreshold;
    if (f >> t) return t;
  }
  return kDefaultThreshold;
}

int run_calibrate(const Options& o) {
  const Dataset ds = load(o);
  const fs::path dir = out_dir(o);
  const Splits s = split_blocks(ds, o.seed);
  return with_model(o, [&](const auto& model, const char* name) {
    const ThresholdCalibration cal = calibrate_threshold(model, s.val);
    std::ostringstream csv;
    write_calibration_csv(csv, cal);
    write_text(dir / "calibration.csv", csv.str());
    write_text(dir / "threshold.txt", std::to_string(cal.chosen) + "\n");
    std::cout << name << " threshold: " << cal.chosen << " over " << cal.blocks << " benign blocks";
    if (!cal.zero_fp_found()) std::cout << " (no zero-FP threshold in [0, 20]; fewest FPs chosen)";
    std::cout << '\n';
    return 0;
  });
}

int run_quantize(const Options& o) {
  const Dataset ds = load(o);
  const fs::path dir = out_dir(o);
  require_file(o.model, "model");
  const auto model = nn::load_model(o.model);
  const Splits s = split_blocks(ds, o.seed);
  const auto stats = quant::calibrate(model, s.train);
  const quant::QuantModel qm = quant::quantize(model, stats);
  const fs::path path = o.qmodel.empty() ? dir / "model.q8" : fs::path(o.qmodel);
  quant::save_quant_model(qm, path.string());
  std::cout << "quantized model: " << path.string() << " (calibrated on " << stats.blocks << " blocks)\n";
  return 0;
}

int run_eval(const Options& o) {
  const Dataset ds = load(o);
  const fs::path dir = out_dir(o);
  const int threshold = resolve_threshold(o);
  const std::string set = o.attack == "none" ? fs::path(o.data).stem().string() : o.attack;
  return with_model(o, [&](const auto& model, const char* name) {
    const Evaluation ev = evaluate_dataset(model, ds, threshold);
    std::ostringstream verdicts, csv;
    write_verdict_csv(verdicts, ev.verdicts);
    write_report_csv(csv, set, ev.report);
    const std::string stem = "eval_" + set + "_" + name;
    write_text(dir / (stem + "_verdicts.csv"), verdicts.str());
    write_text(dir / (stem + ".csv"), csv.str());
    auto j = report_json(set, ev.report);
    j["model"] = name;
    j["threshold"] = threshold;
    j["blocks"] = ev.verdicts.size();
    j["remainder"] = ev.dropped_frames;
    write_text(dir / (stem + ".json"), j.dump() + "\n");
    write_report_table(std::cout, set, ev.report);
    if (o.paper_table) std::cout << paper_table_row(set, name, ev.report) << '\n';
    return 0;
  });
}

int run_replay(const Options& o) {
  const Dataset ds = load(o);
  const fs::path dir = out_dir(o);
  const int threshold = resolve_threshold(o);
  ReplayConfig cfg;
  if (o.pacing == "afap" || o.rate <= 0.0) cfg.pacing = Pacing::AsFastAsPossible;
  else if (o.pacing == "virtual") cfg.pacing = Pacing::Virtual;
  else if (o.pacing == "wall") cfg.pacing = Pacing::WallClock;
  else throw Error(ErrorCode::InvalidArgument, "unknown pacing '" + o.pacing + "'");
  if (o.pacing != "afap" && o.rate < 0.0) throw Error(ErrorCode::RateNonPositive, "rate must be positive");
  cfg.rate = o.rate;
  if (o.live) {
    cfg.on_verdict = [](const DetectionVerdict& v) { write_verdict_csv_row(std::cout, v); };
  }
  return with_model(o, [&](const auto& model, const char*) {
    const ReplayResult r = replay(ds, make_classifier(model, threshold), cfg);
    std::ostringstream verdicts;
    write_verdict_csv(verdicts, r.verdicts);
    write_text(dir / "replay_verdicts.csv", verdicts.str());
    const std::string stats = report_stats(r.stats);
    write_text(dir / "replay_stats.txt", stats);
    std::cout << stats;
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"CAN-ID convolutional autoencoder intrusion detector"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key=value file; every key mirrors a flag");

  app.add_option("--data", o.data, "CAN log (CSV or normal-text)");
  app.add_option("--schema", o.schema, "log schema: csv | csv-benign | normal-text")->capture_default_str();
  app.add_option("--model", o.model, "float model file");
  app.add_option("--qmodel", o.qmodel, "int8 model file");
  app.add_option("--threshold", o.threshold, "hamming threshold (default: out/threshold.txt, else 10)");
  app.add_option("--seed", o.seed, "RNG seed")->envname("IDS_SEED")->capture_default_str();
  app.add_option("--epochs", o.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--batch", o.batch)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--lr", o.lr)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--rate", o.rate, "replay rate in frames/s; 0 replays as fast as possible")->capture_default_str();
  app.add_option("--out", o.out, "output directory (gen: file or directory)")->capture_default_str();
  app.add_flag("--paper-table", o.paper_table, "also print an attack|model|P|R|F1|FPR|FNR row");
  app.add_flag("--skip-bad", o.skip_bad, "skip malformed log lines instead of failing");
  app.add_option("--profile", o.profile, "gen: standard | small")->capture_default_str();
  app.add_option("--duration", o.duration, "gen: seconds of traffic")->capture_default_str();
  app.add_option("--attack", o.attack, "gen/eval: none | dos | fuzzy | spoof")->capture_default_str();
  app.add_option("--attack-rate", o.attack_rate, "gen: injected frames/s (0 = per-attack default)");
  app.add_option("--spoof-id", o.spoof_id, "gen: spoofed ID in hex")->capture_default_str();
  app.add_option("--burst-every", o.burst_every, "gen: seconds between attack bursts")->capture_default_str();
  app.add_option("--burst-length", o.burst_length, "gen: seconds per attack burst")->capture_default_str();
  app.add_option("--pacing", o.pacing, "replay: virtual | wall | afap")->capture_default_str();
  app.add_flag("--live", o.live, "replay: print one verdict line per block");

  auto* gen = app.add_subcommand("gen", "generate a synthetic benign or attack corpus");
  auto* ingest = app.add_subcommand("ingest-check", "parse a log and report counts");
  auto* train = app.add_subcommand("train", "train the float model on the benign training split");
  auto* calibrate = app.add_subcommand("calibrate", "pick the threshold on the benign validation split");
  auto* quantize = app.add_subcommand("quantize", "post-training int8 quantization");
  auto* eval = app.add_subcommand("eval", "evaluate a labeled log");
  auto* replay_cmd = app.add_subcommand("replay", "stream a log through the ping-pong pipeline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) return run_gen(o);
    if (*ingest) return run_ingest_check(o);
    if (*train) return run_train(o);
    if (*calibrate) return run_calibrate(o);
    if (*quantize) return run_quantize(o);
    if (*eval) return run_eval(o);
    if (*replay_cmd) return run_replay(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
