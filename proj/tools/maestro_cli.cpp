#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "maestro/maestro.hpp"

// Command-line front end: corpus generation, curriculum training,
// held-out evaluation, alignment inspection, and the two self-checks
// (finite differences, transducer path enumeration). Machine-readable
// outputs go to the output directory; a human summary goes to stdout.
// Every output directory receives the effective config; re-running from
// that echo reproduces the run bitwise.

namespace fs = std::filesystem;
using namespace maestro;

namespace {

struct CliArgs {
  std::string config_path;
  std::string out;
  std::string checkpoint;
  u64 seed = 0;
  bool seed_set = false;
  i64 stage_override = -1;
};

std::string ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write " + path);
  f << content;
  require(f.good(), "failed writing " + path);
}

void echo_config(RunConfig& cfg, const std::string& dir) {
  write_file(dir + "/effective.cfg", dump_run_config(cfg));
}

RunConfig resolve_config(const CliArgs& a, bool seed_is_corpus_seed) {
  RunConfig cfg = load_run_config(a.config_path);
  if (a.seed_set) {
    if (seed_is_corpus_seed)
      cfg.corpus.seed = a.seed;
    else
      cfg.seed = a.seed;
  }
  if (a.stage_override >= 0) {
    require(a.stage_override <= 3, "--stage-override must be 0..3");
    cfg.stage_override = a.stage_override;
  }
  return cfg;
}

int cmd_gen_corpus(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, true);
  if (!a.out.empty()) cfg.corpus_dir = a.out;
  std::string dir = ensure_dir(cfg.corpus_dir);
  Corpus corpus = generate_corpus(cfg.corpus);
  save_corpus(corpus, dir);
  echo_config(cfg, dir);
  std::cout << "corpus written to " << dir << "\n"
            << "  vocab " << cfg.corpus.vocab << ", frame_dim " << cfg.corpus.frame_dim << "\n"
            << "  speech " << corpus.speech.size() << ", text " << corpus.text.size()
            << ", paired " << corpus.paired.size() << ", eval_paired "
            << corpus.eval_paired.size() << ", eval_text " << corpus.eval_text.size() << "\n";
  return 0;
}

int cmd_train(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, false);
  if (!a.out.empty()) cfg.out_dir = a.out;
  std::string dir = ensure_dir(cfg.out_dir);
  echo_config(cfg, dir);
  LoadedCorpus corpus = load_corpus(cfg.corpus_dir);

  bool resuming = !a.checkpoint.empty();
  std::ofstream metrics(dir + "/metrics.log",
                        std::ios::binary | (resuming ? std::ios::app : std::ios::trunc));
  require(metrics.good(), "cannot open " + dir + "/metrics.log");

  Trainer<double> trainer(cfg, corpus, &metrics);
  if (resuming) trainer.restore(a.checkpoint);
  i64 start_step = trainer.step();

  auto t0 = std::chrono::steady_clock::now();
  trainer.train();
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string final_path = dir + "/ckpt_final.mstp";
  trainer.save(final_path);

  std::cout << std::setprecision(6) << "trained steps " << start_step << ".." << trainer.step()
            << " in " << secs << "s\n"
            << "  skipped optimizer steps " << trainer.skipped_optimizer_steps()
            << ", speech batches skipped " << trainer.speech_skipped()
            << ", infeasible text items " << trainer.text_infeasible() << "\n";
  if (!trainer.eval_history().empty())
    std::cout << "  final mm_mse_eval " << trainer.eval_history().back().second << " at step "
              << trainer.eval_history().back().first << "\n";
  std::cout << "  metrics " << dir << "/metrics.log\n  checkpoint " << final_path << "\n";
  return 0;
}

int cmd_eval(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, false);
  if (!a.out.empty()) cfg.out_dir = a.out;
  std::string dir = ensure_dir(cfg.out_dir);
  LoadedCorpus corpus = load_corpus(cfg.corpus_dir);
  Trainer<double> trainer(cfg, corpus);
  if (!a.checkpoint.empty()) trainer.restore(a.checkpoint);
  Model<double> teacher = trainer.teacher();
  EvalReport rep = evaluate(trainer.model(), teacher, corpus.eval_paired, corpus.eval_text);
  echo_config(cfg, dir);
  write_file(dir + "/eval_report.txt", rep.summary());
  std::cout << rep.summary() << "report " << dir << "/eval_report.txt\n";
  return 0;
}

int cmd_align(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, false);
  if (!a.out.empty()) cfg.out_dir = a.out;
  std::string dir = ensure_dir(cfg.out_dir);
  LoadedCorpus corpus = load_corpus(cfg.corpus_dir);
  require(!corpus.eval_paired.empty(), "align: no held-out paired items");
  Trainer<double> trainer(cfg, corpus);
  if (!a.checkpoint.empty()) trainer.restore(a.checkpoint);
  Model<double> teacher = trainer.teacher();

  std::ostringstream table;
  table << "item token gold aligned\n";
  i64 within = 0, total = 0;
  for (size_t i = 0; i < corpus.eval_paired.size(); ++i) {
    const CorpusItem& item = corpus.eval_paired[i];
    std::vector<i64> aligned =
        teacher_align_durations(teacher, frames_to<double>(item.frames), item.tokens);
    for (size_t u = 0; u < item.tokens.size(); ++u) {
      table << i << " " << u << " " << item.durations[u] << " " << aligned[u] << "\n";
      if (std::abs(aligned[u] - item.durations[u]) <= 1) ++within;
      ++total;
    }
  }
  echo_config(cfg, dir);
  write_file(dir + "/alignments.txt", table.str());
  double pct = 100.0 * static_cast<double>(within) / static_cast<double>(total);
  std::cout << std::setprecision(4) << "tokens within one frame of gold: " << pct << "% ("
            << within << "/" << total << " over " << corpus.eval_paired.size() << " items)\n"
            << "table " << dir << "/alignments.txt\n";
  return 0;
}

int cmd_gradcheck(const CliArgs& a) {
  u64 seed = a.seed_set ? a.seed : 7;
  GradCheckSuite suite = run_gradient_checks(seed);
  std::cout << suite.summary();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_file(a.out + "/gradcheck.txt", suite.summary());
  }
  if (!suite.pass()) fail("gradient check failed: max rel err " +
                          std::to_string(suite.max_rel_err()));
  return 0;
}

int cmd_oracle_check(const CliArgs& a) {
  u64 seed = a.seed_set ? a.seed : 1234;
  CounterRng rng(seed);
  const i64 trials = 100;
  i64 agreements = 0;
  double max_diff = 0;
  std::ostringstream table;
  table << "trial t_len u_len vocab dp oracle diff\n";
  for (i64 trial = 0; trial < trials; ++trial) {
    i64 t_len = rng.next_int(1, 4);
    i64 u_len = rng.next_int(0, 3);
    i64 vocab = rng.next_int(1, 5);
    std::vector<i64> tokens;
    for (i64 u = 0; u < u_len; ++u) tokens.push_back(rng.next_int(1, vocab));
    Array<double> lat({t_len * (u_len + 1), vocab + 1});
    for (double& v : lat.data) v = rng.next_normal();
    double dp = rnnt_loss(lat, tokens, t_len);
    OracleResult<double> oracle = oracle_rnnt(lat, tokens, t_len);
    double diff = std::abs(dp - (-oracle.log_z));
    max_diff = std::max(max_diff, diff);
    if (diff <= 1e-10) ++agreements;
    table << trial << " " << t_len << " " << u_len << " " << vocab << " "
          << std::setprecision(17) << dp << " " << -oracle.log_z << " " << diff << "\n";
  }
  std::cout << agreements << "/" << trials << " DP-vs-enumeration agreements, max abs diff "
            << std::scientific << std::setprecision(3) << max_diff << "\n";
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_file(a.out + "/oracle_check.txt", table.str());
  }
  if (agreements != trials)
    fail("oracle check failed: " + std::to_string(trials - agreements) + " disagreements");
  return 0;
}

void add_common_flags(CLI::App* sub, CliArgs& a, bool with_checkpoint, bool with_stage) {
  sub->add_option("--config", a.config_path, "config file; defaults apply when absent");
  sub->add_option("--out", a.out, "output directory");
  auto* seed_opt = sub->add_option("--seed", a.seed, "seed override");
  sub->parse_complete_callback([&a, seed_opt] { a.seed_set = seed_opt->count() > 0; });
  if (with_checkpoint) sub->add_option("--checkpoint", a.checkpoint, "checkpoint file to load");
  if (with_stage)
    sub->add_option("--stage-override", a.stage_override,
                    "pin the stream mix to one stage (1..3) instead of the curriculum");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint speech-text representation trainer"};
  app.require_subcommand(1);
  CliArgs a;

  CLI::App* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  add_common_flags(gen, a, false, false);
  CLI::App* train = app.add_subcommand("train", "run the three-stage curriculum");
  add_common_flags(train, a, true, true);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out items");
  add_common_flags(eval_cmd, a, true, false);
  CLI::App* align = app.add_subcommand("align", "teacher forced alignment vs gold durations");
  add_common_flags(align, a, true, false);
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  add_common_flags(gradcheck, a, false, false);
  CLI::App* oracle = app.add_subcommand("oracle-check", "transducer DP vs path enumeration");
  add_common_flags(oracle, a, false, false);

  CLI11_PARSE(app, argc, argv);

  std::string detail_dir = a.out;
  try {
    if (gen->parsed()) return cmd_gen_corpus(a);
    if (train->parsed()) return cmd_train(a);
    if (eval_cmd->parsed()) return cmd_eval(a);
    if (align->parsed()) return cmd_align(a);
    if (gradcheck->parsed()) return cmd_gradcheck(a);
    if (oracle->parsed()) return cmd_oracle_check(a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::string detail = detail_dir.empty() ? "maestro_error.txt" : detail_dir + "/error.txt";
    try {
      if (!detail_dir.empty()) fs::create_directories(detail_dir);
      std::ofstream f(detail);
      f << "command:";
      for (int i = 0; i < argc; ++i) f << " " << argv[i];
      f << "\ncause: " << e.what() << "\n";
      std::cerr << "detail: " << detail << "\n";
    } catch (...) {
    }
    return 1;
  }
  return 0;
}
