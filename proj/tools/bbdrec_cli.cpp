// bbdrec command-line front end: train, eval, recommend, verify, synth, sweep.

#include "bbdrec/bbdrec.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace bbdrec;

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
  const char* env = std::getenv("BBDREC_LOG_LEVEL");
  const std::string v = env ? env : "info";
  if (v == "quiet" || v == "error") return Verbosity::quiet;
  if (v == "debug") return Verbosity::debug;
  return Verbosity::info;
}

void info(const std::string& msg) {
  if (verbosity() != Verbosity::quiet) std::cerr << msg << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> ks;
  for (const auto& tok : split_list(s)) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || k < 1) throw std::invalid_argument("--ks expects positive integers, got '" + tok + "'");
    ks.push_back(k);
  }
  if (ks.empty()) throw std::invalid_argument("--ks is empty");
  return ks;
}

DatasetSplits load_splits(const std::string& csv, Index history_len) {
  const InteractionLog raw = load_csv(csv);
  return prepare_dataset(raw, history_len);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream o;
  write_report_text(r, o);
  return o.str();
}

std::string report_table(const EvalReport& r) {
  std::ostringstream o;
  write_report_table(r, o);
  return o.str();
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, log, splits_dir;
  std::optional<std::uint64_t> seed;
};

ModelCheckpoint run_training(const TrainConfig& config, const DatasetSplits& splits, std::ostream* log) {
  info("training on " + std::to_string(splits.train.size()) + " samples, " + std::to_string(splits.n_items) +
       " items (variant " + config.variant + ")");
  const auto result = train<double>(config, splits, {}, log);
  const auto& best = result.best;
  std::ostringstream msg;
  msg << "finished after " << result.epochs_run << " epochs; best epoch " << best.epoch << " "
      << config.selection_metric << '=' << std::fixed << std::setprecision(4) << best.validation.back();
  info(msg.str());
  return best;
}

int cmd_train(const TrainArgs& a) {
  TrainConfig config = load_config(a.config);
  if (a.seed) config.seed = *a.seed;
  const DatasetSplits splits = load_splits(a.data, config.L);
  if (!a.splits_dir.empty()) {
    std::filesystem::create_directories(a.splits_dir);
    for (const auto& [name, part] : {std::pair{"train", &splits.train}, {"valid", &splits.valid}, {"test", &splits.test}}) {
      std::ofstream out(std::filesystem::path(a.splits_dir) / (std::string(name) + ".tsv"));
      write_split(*part, out);
    }
  }
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot write training log " + log_path);
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    Tee(std::streambuf* x, std::streambuf* y) : a(x), b(y) {}
    int overflow(int c) override {
      if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
      a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee(log.rdbuf(), verbosity() == Verbosity::debug ? std::cerr.rdbuf() : nullptr);
  std::ostream log_stream(&tee);
  const ModelCheckpoint best = run_training(config, splits, &log_stream);
  save_checkpoint(best, a.out);
  info("wrote checkpoint " + a.out + " and log " + log_path);
  return 0;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, ks = "10,20", out, split = "test";
  bool timing = false;
  int repeats = 5;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

int cmd_eval(const EvalArgs& a) {
  const ModelCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const DatasetSplits splits = load_splits(a.data, ckpt.config.L);
  if (splits.item_names != ckpt.item_names) {
    throw std::runtime_error("dataset item vocabulary does not match the checkpoint");
  }
  const std::vector<Sample>* part = a.split == "test"    ? &splits.test
                                    : a.split == "valid" ? &splits.valid
                                    : a.split == "train" ? &splits.train
                                                         : nullptr;
  if (!part) throw std::invalid_argument("--split must be train|valid|test");
  if (part->empty()) throw std::runtime_error("the " + a.split + " split is empty");

  const Model model = restore_model(ckpt);
  const BridgeSchedule schedule = build_schedule(ckpt.config.T, ckpt.config.m);
  InferenceOptions io = inference_options(ckpt.config);
  if (a.seed) io.seed = *a.seed;
  if (a.deterministic) io.noise = NoiseMode::deterministic;
  const Recommender<double> rec(model, schedule, io);
  EvalOptions eo;
  eo.ks = parse_ks(a.ks);
  const EvalReport report = evaluate(rec, *part, splits.popularity, eo);
  std::cout << report_text(report);
  if (!a.out.empty()) write_text_file(a.out, report_table(report));
  if (a.timing) {
    const InferenceTiming t = time_inference(rec, *part, a.repeats);
    std::cout << std::setprecision(6) << "TIME encoder_only " << t.encoder_seconds << '\n'
              << "TIME full " << t.full_seconds << '\n'
              << "TIME per_sample_full " << t.full_seconds / static_cast<double>(part->size()) << '\n'
              << "TIME ratio " << t.full_seconds / t.encoder_seconds << '\n';
  }
  std::ostringstream msg;
  msg << part->size() << " samples evaluated in " << std::setprecision(3) << report.total_seconds << " s";
  info(msg.str());
  return 0;
}

// --- recommend ------------------------------------------------------------

struct RecommendArgs {
  std::string checkpoint, history;
  int k = 10;
  bool deterministic = false;
  std::uint64_t seed = 0;
  bool internal_ids = false;
};

int cmd_recommend(const RecommendArgs& a) {
  const ModelCheckpoint ckpt = load_checkpoint(a.checkpoint);
  if (a.k < 1) throw std::invalid_argument("--k must be >= 1");
  std::unordered_map<std::string, ItemId> by_name;
  for (std::size_t i = 1; i < ckpt.item_names.size(); ++i) by_name.emplace(ckpt.item_names[i], static_cast<ItemId>(i));
  std::vector<ItemId> ids;
  for (const auto& tok : split_list(a.history)) {
    const auto it = by_name.find(tok);
    if (it == by_name.end()) throw std::invalid_argument("unknown item id '" + tok + "'");
    ids.push_back(it->second);
  }
  if (ids.empty()) throw std::invalid_argument("--history has no items");
  const auto L = static_cast<std::size_t>(ckpt.config.L);
  std::vector<ItemId> window(L, kPaddingId);
  const std::size_t take = std::min(L, ids.size());
  std::copy(ids.end() - static_cast<std::ptrdiff_t>(take), ids.end(), window.end() - static_cast<std::ptrdiff_t>(take));

  const Model model = restore_model(ckpt);
  const BridgeSchedule schedule = build_schedule(ckpt.config.T, ckpt.config.m);
  InferenceOptions io = inference_options(ckpt.config);
  io.seed = a.seed;
  if (a.deterministic) io.noise = NoiseMode::deterministic;
  const Recommender<double> rec(model, schedule, io);
  const auto top = rec.recommend(window, a.k);
  std::cout << std::setprecision(6);
  for (std::size_t r = 0; r < top.size(); ++r) {
    const std::string name = a.internal_ids ? std::to_string(top[r].item) : ckpt.item_names[top[r].item];
    std::cout << r + 1 << '\t' << name << '\t' << top[r].score << '\n';
  }
  return 0;
}

// --- verify ---------------------------------------------------------------

struct VerifyArgs {
  std::string suite = "all", report;
  std::uint64_t seed = 0;
  bool inject_failure = false;
};

int cmd_verify(const VerifyArgs& a) {
  verify::Report r = verify::run_suite(a.suite, a.seed);
  if (a.inject_failure) r.add({"injected", "forced_failure", false, 1.0, 0.0, "requested with --inject-failure"});
  std::ostringstream text;
  verify::write_report(r, text);
  std::cout << text.str();
  if (!a.report.empty()) write_text_file(a.report, text.str());
  return r.ok() ? 0 : 1;
}

// --- synth ----------------------------------------------------------------

struct SynthArgs {
  SynthParams p;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const InteractionLog log = synth_markov(a.p);
  {
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    write_csv(log, out);
  }
  const nlohmann::json meta{{"generator", "synth_markov"},     {"n_items", a.p.n_items},
                            {"p_noise", a.p.p_noise},           {"n_users", a.p.n_users},
                            {"min_len", a.p.min_len},           {"max_len", a.p.max_len},
                            {"start_spread", a.p.start_spread}, {"seed", a.p.seed},
                            {"n_records", log.records.size()}};
  write_text_file(a.out + ".meta.json", meta.dump(2) + "\n");
  info("wrote " + std::to_string(log.records.size()) + " interactions to " + a.out);
  return 0;
}

// --- sweep ----------------------------------------------------------------

struct SweepArgs {
  std::string param, values, config, data, out;
  std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.param != "m" && a.param != "T") throw std::invalid_argument("--param must be m or T");
  std::vector<double> values;
  for (const auto& tok : split_list(a.values)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw std::invalid_argument("--values: cannot parse '" + tok + "'");
    if (a.param == "T" && v != std::floor(v)) throw std::invalid_argument("--values: T must be an integer");
    values.push_back(v);
  }
  if (values.empty()) throw std::invalid_argument("--values is empty");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  TrainConfig base = load_config(a.config);
  if (a.seed) base.seed = *a.seed;
  const DatasetSplits splits = load_splits(a.data, base.L);

  std::ostringstream table;
  table << "param\tvalue\tHR@10\tNDCG@10\tHR@20\tNDCG@20\tbest_epoch\n" << std::setprecision(8);
  for (const double v : values) {
    TrainConfig c = base;
    if (a.param == "m") {
      c.m = v;
    } else {
      c.T = static_cast<int>(v);
    }
    if (const auto problems = validate(c); !problems.empty()) throw ConfigError(problems);
    std::ostringstream label;
    label << a.param << '=' << v;
    info("sweep " + label.str());
    const ModelCheckpoint best = run_training(c, splits, nullptr);
    const Model model = restore_model(best);
    const BridgeSchedule schedule = build_schedule(c.T, c.m);
    const Recommender<double> rec(model, schedule, inference_options(c));
    EvalOptions eo;
    eo.slices = false;
    const EvalReport r = evaluate(rec, splits.test, splits.popularity, eo);
    table << a.param << '\t' << v << '\t' << r.hr(10) << '\t' << r.ndcg(10) << '\t' << r.hr(20) << '\t' << r.ndcg(20)
          << '\t' << best.epoch << '\n';
  }
  std::cout << table.str();
  if (!a.out.empty()) write_text_file(a.out, table.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brownian-bridge diffusion for sequential recommendation"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--config", ta.config, "flat JSON config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", ta.data, "interaction CSV (user_id,item_id,timestamp)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "checkpoint path")->required();
  train_cmd->add_option("--seed", ta.seed, "overrides the config seed");
  train_cmd->add_option("--log", ta.log, "training log path (default <out>.log.jsonl)");
  train_cmd->add_option("--splits-dir", ta.splits_dir, "also dump the processed splits here");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ea.data, "the CSV the model was trained on")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--ks", ea.ks, "comma-separated cutoffs")->capture_default_str();
  eval_cmd->add_option("--out", ea.out, "machine-readable report table");
  eval_cmd->add_option("--split", ea.split, "train|valid|test")->capture_default_str();
  eval_cmd->add_option("--seed", ea.seed, "inference noise seed");
  eval_cmd->add_flag("--deterministic", ea.deterministic, "run the reverse chain without noise");
  eval_cmd->add_flag("--timing", ea.timing, "also time encoder-only vs full inference");
  eval_cmd->add_option("--repeats", ea.repeats, "timing repeats")->capture_default_str()->check(CLI::PositiveNumber);

  RecommendArgs ra;
  auto* rec_cmd = app.add_subcommand("recommend", "top-k items for one history");
  rec_cmd->add_option("--checkpoint", ra.checkpoint)->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--history", ra.history, "comma-separated original item ids, oldest first")->required();
  rec_cmd->add_option("--k", ra.k)->capture_default_str();
  rec_cmd->add_flag("--deterministic", ra.deterministic, "run the reverse chain without noise");
  rec_cmd->add_option("--seed", ra.seed, "inference noise seed")->capture_default_str();
  rec_cmd->add_flag("--internal-ids", ra.internal_ids, "print internal ids instead of original ones");

  VerifyArgs va;
  auto* verify_cmd = app.add_subcommand("verify", "run the numerical self-checks");
  verify_cmd->add_option("--suite", va.suite)->capture_default_str()->check(CLI::IsMember(verify::suite_names()));
  verify_cmd->add_option("--report", va.report, "also write the report here");
  verify_cmd->add_option("--seed", va.seed)->capture_default_str();
  verify_cmd->add_flag("--inject-failure", va.inject_failure)->group("");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic cyclic-walk dataset");
  synth_cmd->add_option("--n-items", sa.p.n_items)->capture_default_str();
  synth_cmd->add_option("--p-noise", sa.p.p_noise)->capture_default_str();
  synth_cmd->add_option("--n-users", sa.p.n_users)->capture_default_str();
  synth_cmd->add_option("--min-len", sa.p.min_len)->capture_default_str();
  synth_cmd->add_option("--max-len", sa.p.max_len)->capture_default_str();
  synth_cmd->add_option("--start-spread", sa.p.start_spread)->capture_default_str();
  synth_cmd->add_option("--seed", sa.p.seed)->capture_default_str();
  synth_cmd->add_option("--out", sa.out)->required();

  SweepArgs wa;
  auto* sweep_cmd = app.add_subcommand("sweep", "train one model per value of T or m");
  sweep_cmd->add_option("--param", wa.param)->required()->check(CLI::IsMember({"m", "T"}));
  sweep_cmd->add_option("--values", wa.values, "comma-separated values")->required();
  sweep_cmd->add_option("--config", wa.config)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--data", wa.data)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", wa.out, "result table path");
  sweep_cmd->add_option("--seed", wa.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*rec_cmd) return cmd_recommend(ra);
    if (*verify_cmd) return cmd_verify(va);
    if (*synth_cmd) return cmd_synth(sa);
    if (*sweep_cmd) return cmd_sweep(wa);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
