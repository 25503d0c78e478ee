// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver. Every subcommand writes its outputs plus a config.json
// (resolved settings, seed, version, input hashes) into --out, and a compact
// eval.json that the report subcommand later aggregates.
//
// Exit codes: 0 ok, 2 usage, 3 i/o, 4 contract violation, 5 numeric failure,
// 6 data generation failure.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "onionlab/gru.hpp"
#include "onionlab/heatmap.hpp"
#include "onionlab/interventions.hpp"
#include "onionlab/io.hpp"
#include "onionlab/probes.hpp"
#include "onionlab/report.hpp"
#include "onionlab/taskgen.hpp"
#include "onionlab/toy.hpp"
#include "onionlab/trainer.hpp"
#include "onionlab/version.hpp"

using namespace onionlab;

namespace {

// ---------------------------------------------------------------------------
// artifact plumbing

struct RunContext {
  std::string out;
  std::string command;
  Json resolved = Json::object();
  std::vector<std::pair<std::string, std::string>> inputs;  // label, path

  void note_input(const std::string& label, const std::string& path) {
    inputs.emplace_back(label, path);
  }
  void write_manifest() const {
    ensure_dir(out);
    Json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["resolved"] = resolved;
    Json ins = Json::object();
    for (const auto& [label, path] : inputs)
      ins[label] = Json{{"path", path}, {"hash", hash_file_hex(path)}};
    j["inputs"] = ins;
    write_json_file(out + "/config.json", j);
  }
  void write_eval(const Json& j) const { write_json_file(out + "/eval.json", j); }
};

// metrics.jsonl accumulator; flushed atomically at the end of the run.
struct MetricLog {
  std::vector<Json> lines;
  MetricSink sink() {
    return [this](const Json& j) { lines.push_back(j); };
  }
  void flush(const std::string& out_dir) const {
    write_jsonl(out_dir + "/metrics.jsonl", lines);
  }
};

TaskConfig task_from(int n_symbols, int l_max) {
  TaskConfig t;
  t.n_symbols = n_symbols;
  t.l_max = l_max;
  return t;
}

GruParams load_model(const std::string& path) {
  return load_checkpoint(path).params;
}

// ---------------------------------------------------------------------------
// subcommand bodies

struct GenDataOpts {
  int n_symbols = 30, l_max = 9;
  int64_t train = 200000, test = 5000;
  uint64_t seed = 0;
  std::string out;
};

void run_gen_data(const GenDataOpts& o) {
  TaskConfig task = task_from(o.n_symbols, o.l_max);
  task.train_size = o.train;
  task.test_size = o.test;
  Rng root(o.seed);
  Rng rng = root.fork(kStreamData);
  Corpus train = build_corpus(task, o.train, rng);
  Corpus test = build_corpus(task, o.test, rng, &train);
  RunContext ctx;
  ctx.out = o.out;
  ctx.command = "gen-data";
  ctx.resolved = {{"n_symbols", o.n_symbols}, {"l_max", o.l_max},
                  {"train", o.train},         {"test", o.test},
                  {"seed", o.seed}};
  ensure_dir(o.out);
  write_corpus(o.out + "/train.bin", train);
  write_corpus(o.out + "/test.bin", test);
  ctx.note_input("train", o.out + "/train.bin");
  ctx.note_input("test", o.out + "/test.bin");
  ctx.write_manifest();
  std::cout << "wrote " << train.seqs.size() << " train / " << test.seqs.size()
            << " test sequences to " << o.out << "\n";
}

struct TrainOpts {
  std::string train_path, test_path, out;
  int n_symbols = 30, l_max = 9;
  int hidden = 64;
  std::string mode = "ar", feedback = "selffed", profile = "desk";
  int steps = 10000, batch = 256, eval_every = 1000;
  int64_t eval_limit = -1;
  double lr = 1e-3, wd = 0.1;
  uint64_t seed = 0;
  bool steps_set = false;
};

void run_train(const TrainOpts& o) {
  TaskConfig task = task_from(o.n_symbols, o.l_max);
  Corpus train = read_corpus(o.train_path);
  Corpus test = read_corpus(o.test_path);
  TrainConfig cfg;
  cfg.batch_size = o.batch;
  cfg.max_steps = o.steps;
  if (!o.steps_set && o.profile == "paper") cfg.max_steps = 40000;
  cfg.lr = o.lr;
  cfg.weight_decay = o.wd;
  cfg.seed = o.seed;
  cfg.eval_every = o.eval_every;
  cfg.eval_limit = o.eval_limit;
  cfg.hidden = o.hidden;
  cfg.mode = decode_mode_from_string(o.mode);
  cfg.feedback = feedback_from_string(o.feedback);

  RunContext ctx;
  ctx.out = o.out;
  ctx.command = "train";
  ctx.resolved = {{"hidden", cfg.hidden},
                  {"mode", to_string(cfg.mode)},
                  {"feedback", to_string(cfg.feedback)},
                  {"steps", cfg.max_steps},
                  {"batch", cfg.batch_size},
                  {"lr", cfg.lr},
                  {"weight_decay", cfg.weight_decay},
                  {"eval_every", cfg.eval_every},
                  {"seed", cfg.seed},
                  {"n_symbols", o.n_symbols},
                  {"l_max", o.l_max},
                  {"profile", o.profile}};
  ctx.note_input("train", o.train_path);
  ctx.note_input("test", o.test_path);
  ensure_dir(o.out);
  ctx.write_manifest();

  MetricLog log;
  TrainOutcome outcome = train_model(cfg, task, train, test, log.sink());
  log.flush(o.out);
  save_checkpoint(o.out + "/model.ckpt",
                  outcome.params, Json{{"mode", to_string(cfg.mode)}, {"seed", cfg.seed}});
  Json ev = {{"kind", "base"},
             {"hidden", cfg.hidden},
             {"mode", to_string(cfg.mode)},
             {"feedback", to_string(cfg.feedback)},
             {"exact_match", outcome.final_eval},
             {"first_step_99", outcome.first_step_99},
             {"steps", cfg.max_steps},
             {"seed", cfg.seed},
             {"aborted", outcome.aborted}};
  ctx.write_eval(ev);
  std::cout << "exact_match " << outcome.final_eval << "\n";
  if (outcome.aborted)
    std::cout << "note: run aborted early (" << outcome.abort_reason
              << "); checkpoint holds the last stable state\n";
}

struct EvalOpts {
  std::string model, test_path, out;
  std::string mode = "ar";
  int64_t limit = -1;
  uint64_t seed = 0;
};

void run_eval(const EvalOpts& o) {
  GruParams model = load_model(o.model);
  Corpus test = read_corpus(o.test_path);
  DecodeMode mode = decode_mode_from_string(o.mode);
  const double em = exact_match(model, test, mode, o.limit);
  if (!o.out.empty()) {
    RunContext ctx;
    ctx.out = o.out;
    ctx.command = "eval";
    ctx.resolved = {{"mode", o.mode}, {"limit", o.limit}, {"seed", o.seed}};
    ctx.note_input("model", o.model);
    ctx.note_input("test", o.test_path);
    ensure_dir(o.out);
    ctx.write_manifest();
    ctx.write_eval(Json{{"kind", "base"},
                        {"hidden", model.n},
                        {"mode", to_string(mode)},
                        {"feedback", to_string(Feedback::SelfFed)},
                        {"exact_match", em},
                        {"seed", o.seed}});
  }
  std::cout << "exact_match " << em << "\n";
}

struct InterveneOpts {
  std::string model, test_path, out;
  std::string mode = "ar";
  std::string constraint = "free";  // onion only
  int steps = 10000, batch = 256, eval_every = 1000, eval_count = 1000;
  double lr = 1e-3, wd = 0.1;
  uint64_t seed = 0, eval_seed = 1;
};

void run_intervene_das(const InterveneOpts& o, DasGranularity g) {
  GruParams model = load_model(o.model);
  Corpus test = read_corpus(o.test_path);
  (void)test;  // eval counterfactuals are generated, not read, but the
               // corpus hash still pins the evaluation distribution
  DasTrainConfig cfg;
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.weight_decay = o.wd;
  cfg.seed = o.seed;
  cfg.eval_every = o.eval_every;
  cfg.mode = decode_mode_from_string(o.mode);
  Rng eval_rng(o.eval_seed);
  auto eval_set = make_counterfactual_set(model.task, g, o.eval_count, eval_rng);

  RunContext ctx;
  ctx.out = o.out;
  ctx.command = std::string("intervene-") + to_string(g);
  ctx.resolved = {{"objective", std::string("das-") + to_string(g)},
                  {"mode", to_string(cfg.mode)},
                  {"steps", cfg.steps},
                  {"batch", cfg.batch_size},
                  {"lr", cfg.lr},
                  {"weight_decay", cfg.weight_decay},
                  {"eval_count", o.eval_count},
                  {"seed", cfg.seed},
                  {"eval_seed", o.eval_seed}};
  ctx.note_input("model", o.model);
  ctx.note_input("test", o.test_path);
  ensure_dir(o.out);
  ctx.write_manifest();

  MetricLog log;
  DasOutcome outcome = train_das(model, g, cfg, &eval_set, log.sink());
  log.flush(o.out);
  save_das(o.out + "/intervention.bin", outcome.das, Json{{"seed", cfg.seed}});
  ctx.write_eval(Json{{"kind", "intervention"},
                      {"objective", std::string("das-") + to_string(g)},
                      {"hidden", model.n},
                      {"mode", to_string(cfg.mode)},
                      {"accuracy", outcome.final_accuracy},
                      {"seed", cfg.seed}});
  std::cout << "accuracy " << outcome.final_accuracy << "\n";
}

void run_intervene_onion(const InterveneOpts& o) {
  GruParams model = load_model(o.model);
  Corpus test = read_corpus(o.test_path);
  OnionTrainConfig cfg;
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.weight_decay = o.wd;
  cfg.seed = o.seed;
  cfg.eval_every = o.eval_every;
  cfg.mode = decode_mode_from_string(o.mode);
  OnionConstraint constraint = OnionConstraint::Free;
  if (o.constraint == "fixed") constraint = OnionConstraint::FixedGammaBetaOne;
  else if (o.constraint != "free")
    throw ContractError("intervene onion: constraint must be free or fixed");
  Rng eval_rng(o.eval_seed);
  auto eval_set = make_edit_set(model.task, test, o.eval_count, eval_rng);

  const std::string objective =
      constraint == OnionConstraint::Free ? "onion" : "onion-control";
  RunContext ctx;
  ctx.out = o.out;
  ctx.command = "intervene-onion";
  ctx.resolved = {{"objective", objective},
                  {"mode", to_string(cfg.mode)},
                  {"constraint", to_string(constraint)},
                  {"steps", cfg.steps},
                  {"batch", cfg.batch_size},
                  {"lr", cfg.lr},
                  {"weight_decay", cfg.weight_decay},
                  {"eval_count", o.eval_count},
                  {"seed", cfg.seed},
                  {"eval_seed", o.eval_seed}};
  ctx.note_input("model", o.model);
  ctx.note_input("test", o.test_path);
  ensure_dir(o.out);
  ctx.write_manifest();

  MetricLog log;
  OnionOutcome outcome = train_onion(model, cfg, constraint, &eval_set, log.sink());
  log.flush(o.out);
  save_onion(o.out + "/intervention.bin", outcome.op, Json{{"seed", cfg.seed}});
  ctx.write_eval(Json{{"kind", "intervention"},
                      {"objective", objective},
                      {"hidden", model.n},
                      {"mode", to_string(cfg.mode)},
                      {"accuracy", outcome.final_accuracy},
                      {"gamma_went_negative", outcome.gamma_went_negative},
                      {"seed", cfg.seed}});
  std::cout << "accuracy " << outcome.final_accuracy << "\n";
}

struct ProbeOpts {
  std::string model, train_path, test_path, out;
  int steps = 10000, batch = 256, eval_every = 1000;
  int64_t eval_limit = -1;
  double lr = 1e-3, wd = 0.1;
  uint64_t seed = 0;
};

void run_probe(const ProbeOpts& o, ProbeKind kind) {
  GruParams model = load_model(o.model);
  Corpus test = read_corpus(o.test_path);
  Corpus train;
  const bool has_train = !o.train_path.empty();
  if (has_train) train = read_corpus(o.train_path);
  ProbeTrainConfig cfg;
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.weight_decay = o.wd;
  cfg.seed = o.seed;
  cfg.eval_every = o.eval_every;
  cfg.eval_limit = o.eval_limit;

  RunContext ctx;
  ctx.out = o.out;
  ctx.command = std::string("probe-") + to_string(kind);
  ctx.resolved = {{"probe", to_string(kind)}, {"steps", cfg.steps},
                  {"batch", cfg.batch_size}, {"lr", cfg.lr},
                  {"weight_decay", cfg.weight_decay}, {"seed", cfg.seed}};
  ctx.note_input("model", o.model);
  ctx.note_input("test", o.test_path);
  if (has_train) ctx.note_input("train", o.train_path);
  ensure_dir(o.out);
  ctx.write_manifest();

  MetricLog log;
  ProbeOutcome outcome = train_probe(kind, model, cfg,
                                     has_train ? &train : nullptr, log.sink(), &test);
  log.flush(o.out);
  const std::string bundle = o.out + "/probe.bin";
  if (outcome.flat) save_flat_probe(bundle, *outcome.flat, Json{{"seed", cfg.seed}});
  else if (outcome.gru) save_gru_probe(bundle, *outcome.gru, kind, Json{{"seed", cfg.seed}});
  else save_onion_probe(bundle, *outcome.onion, Json{{"seed", cfg.seed}});
  ctx.write_eval(Json{{"kind", "probe"},
                      {"probe", to_string(kind)},
                      {"hidden", model.n},
                      {"seq_exact", outcome.final_eval.seq_exact},
                      {"token_acc", outcome.final_eval.token_acc},
                      {"seed", cfg.seed}});
  std::cout << "seq_exact " << outcome.final_eval.seq_exact << " token_acc "
            << outcome.final_eval.token_acc << "\n";
}

struct GatesOpts {
  std::string model, test_path, input, out;
  std::string mode = "ar";
  int count = 100;
};

void run_gates(const GatesOpts& o) {
  GruParams model = load_model(o.model);
  DecodeMode mode = decode_mode_from_string(o.mode);
  std::vector<Seq> seqs;
  int csv_cols = -1;
  if (!o.input.empty()) {
    Seq s;
    std::istringstream is(o.input);
    int tok;
    while (is >> tok) {
      if (tok < 0 || tok >= model.task.n_symbols)
        throw ContractError("gates: token out of range in --input");
      s.push_back(static_cast<uint8_t>(tok));
    }
    if (s.empty() || static_cast<int>(s.size()) > model.task.l_max)
      throw ContractError("gates: --input length out of range");
    csv_cols = static_cast<int>(s.size()) + 1;  // input phase plus trigger
    seqs.push_back(std::move(s));
  } else {
    if (o.test_path.empty())
      throw ContractError("gates: need --test or --input");
    Corpus test = read_corpus(o.test_path);
    for (const Seq& s : test.seqs) {
      if (static_cast<int>(s.size()) == model.task.l_max) seqs.push_back(s);
      if (static_cast<int>(seqs.size()) >= o.count) break;
    }
    if (static_cast<int>(seqs.size()) < o.count)
      throw GenerationError("gates: corpus has too few full-length sequences");
  }

  GateTrace trace = collect_gate_trace(model, seqs, mode);
  if (csv_cols > 0 && csv_cols < trace.steps) {
    GateTrace cut;
    cut.n = trace.n;
    cut.steps = csv_cols;
    cut.mean.resize(static_cast<size_t>(cut.n) * cut.steps);
    for (int k = 0; k < cut.n; ++k)
      for (int t = 0; t < cut.steps; ++t)
        cut.mean[static_cast<size_t>(k) * cut.steps + t] = trace.at(k, t);
    trace = std::move(cut);
  }
  const double frac = gate_monotone_fraction(trace, model.task.l_max);

  RunContext ctx;
  ctx.out = o.out;
  ctx.command = "gates";
  ctx.resolved = {{"mode", to_string(mode)},
                  {"sequences", static_cast<int>(seqs.size())},
                  {"input", o.input}};
  ctx.note_input("model", o.model);
  if (!o.test_path.empty()) ctx.note_input("test", o.test_path);
  ensure_dir(o.out);
  ctx.write_manifest();
  write_gate_csv(o.out + "/gates.csv", trace);
  write_gate_ppm(o.out + "/gates.ppm", trace);
  ctx.write_eval(Json{{"kind", "gates"},
                      {"hidden", model.n},
                      {"mode", to_string(mode)},
                      {"monotone_fraction", frac},
                      {"sequences", static_cast<int>(seqs.size())}});
  std::cout << "monotone_fraction " << frac << "\n";
}

struct ToyOpts {
  std::string test_path, out;
  std::string seeds = "0,1,2,3,4";
  int n_symbols = 30, l_max = 9;
  int hidden = 64, steps = 10000, batch = 256, eval_every = 500;
  int64_t eval_limit = 2000;
  double lr = 1e-3, wd = 0.1;
};

void run_toy(const ToyOpts& o) {
  TaskConfig task = task_from(o.n_symbols, o.l_max);
  Corpus validation = read_corpus(o.test_path);
  std::vector<uint64_t> seeds;
  {
    std::istringstream is(o.seeds);
    std::string item;
    while (std::getline(is, item, ',')) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw ContractError("toy: no seeds given");
  ensure_dir(o.out);
  double min_acc = 1.0;
  for (uint64_t seed : seeds) {
    ToyTrainConfig cfg;
    cfg.hidden = o.hidden;
    cfg.steps = o.steps;
    cfg.batch_size = o.batch;
    cfg.lr = o.lr;
    cfg.weight_decay = o.wd;
    cfg.seed = seed;
    cfg.eval_every = o.eval_every;
    cfg.eval_limit = o.eval_limit;

    RunContext ctx;
    ctx.out = o.out + "/seed-" + std::to_string(seed);
    ctx.command = "toy";
    ctx.resolved = {{"hidden", cfg.hidden}, {"steps", cfg.steps},
                    {"batch", cfg.batch_size}, {"lr", cfg.lr},
                    {"weight_decay", cfg.weight_decay}, {"seed", seed},
                    {"n_symbols", o.n_symbols}, {"l_max", o.l_max}};
    ctx.note_input("test", o.test_path);
    ensure_dir(ctx.out);
    ctx.write_manifest();

    MetricLog log;
    ToyOutcome outcome = toy_train(task, cfg, validation, log.sink());
    log.flush(ctx.out);
    save_toy(ctx.out + "/toy.bin", outcome.params, Json{{"seed", seed}});
    ctx.write_eval(Json{{"kind", "toy"},
                        {"seed", seed},
                        {"accuracy", outcome.final_eval},
                        {"steps_run", outcome.steps_run}});
    min_acc = std::min(min_acc, outcome.final_eval);
    std::cout << "seed " << seed << " accuracy " << outcome.final_eval
              << " steps " << outcome.steps_run << "\n";
  }
  std::cout << "min_accuracy " << min_acc << "\n";
}

struct ReportOpts {
  std::string root, out;
};

void run_report(const ReportOpts& o) {
  auto artifacts = scan_artifacts(o.root);
  const std::string text = render_report(artifacts);
  if (!o.out.empty()) atomic_write_file(o.out, text);
  std::cout << text;
}

// ---------------------------------------------------------------------------
// wiring

void add_aux_train_flags(CLI::App* cmd, InterveneOpts& o) {
  cmd->add_option("--model", o.model, "frozen model checkpoint")->required();
  cmd->add_option("--test", o.test_path, "held-out corpus")->required();
  cmd->add_option("--out", o.out, "artifact directory")->required();
  cmd->add_option("--mode", o.mode, "decode mode for evaluation (ar|noinput)");
  cmd->add_option("--steps", o.steps, "training steps");
  cmd->add_option("--batch", o.batch, "batch size");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--wd", o.wd, "weight decay");
  cmd->add_option("--seed", o.seed, "training seed");
  cmd->add_option("--eval-seed", o.eval_seed, "evaluation set seed");
  cmd->add_option("--eval-every", o.eval_every, "evaluation interval");
  cmd->add_option("--eval-count", o.eval_count, "evaluation set size");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("onionlab ") + kVersion +
               " -- sequence-model representation laboratory\n"
               "exit codes: 0 ok, 2 usage, 3 i/o, 4 contract, 5 numeric, 6 generation"};
  app.require_subcommand(0, 1);
  app.set_config("--config", "", "read options from an INI/TOML file");
  app.set_version_flag("--version", std::string(kVersion));

  std::function<void()> action;

  // ---- gen-data
  GenDataOpts gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate disjoint train/test corpora");
  c_gen->add_option("--n-symbols", gen.n_symbols, "alphabet size");
  c_gen->add_option("--l-max", gen.l_max, "maximum sequence length");
  c_gen->add_option("--train", gen.train, "train corpus size");
  c_gen->add_option("--test", gen.test, "test corpus size");
  c_gen->add_option("--seed", gen.seed, "generation seed");
  c_gen->add_option("--out", gen.out, "artifact directory")->required();
  c_gen->callback([&] { action = [&] { run_gen_data(gen); }; });

  // ---- train
  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "train a repeat-task model");
  c_train->add_option("--train", tr.train_path, "train corpus")->required();
  c_train->add_option("--test", tr.test_path, "test corpus")->required();
  c_train->add_option("--out", tr.out, "artifact directory")->required();
  c_train->add_option("--n", tr.hidden, "hidden size");
  c_train->add_option("--n-symbols", tr.n_symbols, "alphabet size");
  c_train->add_option("--l-max", tr.l_max, "maximum sequence length");
  c_train->add_option("--mode", tr.mode, "decode mode (ar|noinput)");
  c_train->add_option("--feedback", tr.feedback, "decode feedback (selffed|tf)");
  auto* steps_opt = c_train->add_option("--steps", tr.steps, "training steps");
  c_train->add_option("--batch", tr.batch, "batch size");
  c_train->add_option("--lr", tr.lr, "learning rate");
  c_train->add_option("--wd", tr.wd, "weight decay");
  c_train->add_option("--seed", tr.seed, "training seed");
  c_train->add_option("--eval-every", tr.eval_every, "evaluation interval");
  c_train->add_option("--eval-limit", tr.eval_limit, "evaluation subset size");
  c_train->add_option("--profile", tr.profile, "desk|paper step defaults");
  c_train->callback([&, steps_opt] {
    tr.steps_set = steps_opt->count() > 0;
    action = [&] { run_train(tr); };
  });

  // ---- eval
  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  c_eval->add_option("--model", ev.model, "model checkpoint")->required();
  c_eval->add_option("--test", ev.test_path, "held-out corpus")->required();
  c_eval->add_option("--mode", ev.mode, "decode mode (ar|noinput)");
  c_eval->add_option("--limit", ev.limit, "evaluate only the first K");
  c_eval->add_option("--out", ev.out, "artifact directory (optional)");
  c_eval->callback([&] { action = [&] { run_eval(ev); }; });

  // ---- intervene
  auto* c_int = app.add_subcommand("intervene", "train and score an intervention");
  c_int->require_subcommand(1);
  InterveneOpts iu, ib, io_;
  auto* c_uni = c_int->add_subcommand("unigram", "rotated per-position subspace swap");
  add_aux_train_flags(c_uni, iu);
  c_uni->callback([&] { action = [&] { run_intervene_das(iu, DasGranularity::Unigram); }; });
  auto* c_bi = c_int->add_subcommand("bigram", "rotated token-pair subspace swap");
  add_aux_train_flags(c_bi, ib);
  c_bi->callback([&] { action = [&] { run_intervene_das(ib, DasGranularity::Bigram); }; });
  auto* c_on = c_int->add_subcommand("onion", "scaled-embedding token edit");
  add_aux_train_flags(c_on, io_);
  c_on->add_option("--constraint", io_.constraint, "free|fixed (fixed pins gamma=beta=1)");
  c_on->callback([&] { action = [&] { run_intervene_onion(io_); }; });

  // ---- probe
  auto* c_probe = app.add_subcommand("probe", "train and score a probe");
  c_probe->require_subcommand(1);
  std::map<std::string, std::pair<ProbeOpts, ProbeKind>> probe_opts;
  probe_opts["linear"] = {ProbeOpts{}, ProbeKind::Linear};
  probe_opts["mlp"] = {ProbeOpts{}, ProbeKind::Mlp};
  probe_opts["gru-ar"] = {ProbeOpts{}, ProbeKind::GruAr};
  probe_opts["gru-noinput"] = {ProbeOpts{}, ProbeKind::GruNoInput};
  probe_opts["onion"] = {ProbeOpts{}, ProbeKind::Onion};
  for (auto& [name, entry] : probe_opts) {
    auto* cmd = c_probe->add_subcommand(name, std::string("probe kind: ") + name);
    ProbeOpts& po = entry.first;
    cmd->add_option("--model", po.model, "frozen model checkpoint")->required();
    cmd->add_option("--test", po.test_path, "held-out corpus")->required();
    cmd->add_option("--out", po.out, "artifact directory")->required();
    cmd->add_option("--train", po.train_path, "train corpus (omit for online sampling)");
    cmd->add_option("--steps", po.steps, "training steps");
    cmd->add_option("--batch", po.batch, "batch size");
    cmd->add_option("--lr", po.lr, "learning rate");
    cmd->add_option("--wd", po.wd, "weight decay");
    cmd->add_option("--seed", po.seed, "training seed");
    cmd->add_option("--eval-every", po.eval_every, "evaluation interval");
    cmd->add_option("--eval-limit", po.eval_limit, "evaluation subset size");
    ProbeKind kind = entry.second;
    cmd->callback([&action, &po, kind] { action = [&po, kind] { run_probe(po, kind); }; });
  }

  // ---- gates
  GatesOpts ga;
  auto* c_gates = app.add_subcommand("gates", "export update-gate traces");
  c_gates->add_option("--model", ga.model, "model checkpoint")->required();
  c_gates->add_option("--out", ga.out, "artifact directory")->required();
  c_gates->add_option("--test", ga.test_path, "corpus for averaged traces");
  c_gates->add_option("--input", ga.input, "explicit space-separated token sequence");
  c_gates->add_option("--mode", ga.mode, "decode mode (ar|noinput)");
  c_gates->add_option("--count", ga.count, "sequences to average");
  c_gates->callback([&] { action = [&] { run_gates(ga); }; });

  // ---- toy
  ToyOpts ty;
  auto* c_toy = app.add_subcommand("toy", "train the fixed-scale toy memory");
  c_toy->add_option("--test", ty.test_path, "validation corpus")->required();
  c_toy->add_option("--out", ty.out, "artifact directory")->required();
  c_toy->add_option("--seeds", ty.seeds, "comma-separated seed list");
  c_toy->add_option("--n", ty.hidden, "hidden size");
  c_toy->add_option("--n-symbols", ty.n_symbols, "alphabet size");
  c_toy->add_option("--l-max", ty.l_max, "maximum sequence length");
  c_toy->add_option("--steps", ty.steps, "training steps");
  c_toy->add_option("--batch", ty.batch, "batch size");
  c_toy->add_option("--lr", ty.lr, "learning rate");
  c_toy->add_option("--wd", ty.wd, "weight decay");
  c_toy->add_option("--eval-every", ty.eval_every, "evaluation interval");
  c_toy->add_option("--eval-limit", ty.eval_limit, "validation subset size");
  c_toy->callback([&] { action = [&] { run_toy(ty); }; });

  // ---- report
  ReportOpts rp;
  auto* c_rep = app.add_subcommand("report", "aggregate eval.json artifacts into tables");
  c_rep->add_option("--root", rp.root, "artifact tree to scan")->required();
  c_rep->add_option("--out", rp.out, "also write the report to this file");
  c_rep->callback([&] { action = [&] { run_report(rp); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (!action) {
    std::cout << app.help();
    return 2;
  }

  auto error_record = [](const char* cls, const std::string& msg, int code) {
    Json j = {{"error", cls}, {"message", msg}, {"exit_code", code}};
    std::cerr << j.dump() << "\n";
    return code;
  };
  try {
    action();
  } catch (const IoError& e) {
    return error_record("IoError", e.what(), 3);
  } catch (const ContractError& e) {
    return error_record("ContractError", e.what(), 4);
  } catch (const NumericError& e) {
    return error_record("NumericError", e.what(), 5);
  } catch (const GenerationError& e) {
    return error_record("GenerationError", e.what(), 6);
  } catch (const std::exception& e) {
    return error_record("Error", e.what(), 1);
  }
  return 0;
}
