#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dualde/bench.hpp"
#include "dualde/checkpoint.hpp"
#include "dualde/error.hpp"
#include "dualde/eval.hpp"
#include "dualde/kg_data.hpp"
#include "dualde/models.hpp"
#include "dualde/synth.hpp"
#include "dualde/trainer.hpp"

namespace dualde {

// Everything a CLI run needs: the distillation hyperparameters plus the
// dataset, model and output plumbing around them.
struct RunConfig {
  DistillConfig distill;

  std::filesystem::path dataset;
  DatasetFormat format = DatasetFormat::kOpenKeId;
  Family family = Family::kComplEx;
  int p_norm = 2;
  bool rotate_unsquared = false;
  std::size_t dim = 0;  // model dim for train; 0 falls back to teacher_dim
  std::filesystem::path teacher_ckpt;
  std::filesystem::path ckpt;
  std::filesystem::path reference;
  std::filesystem::path out;

  std::string stage_split = "plateau";
  std::vector<std::string> ablations;
  double fixed_p = 0.5;

  std::string split = "test";
  bool pooled = false;
  bool raw = false;
  int repetitions = 3;

  LatentGraphSpec synth;

  ModelFamily model_family() const {
    ModelFamily f{family};
    f.p_norm = p_norm;
    f.rotate_squared = !rotate_unsquared;
    return f;
  }

  // Folds the string-valued switches into `distill`.
  void resolve() {
    auto& d = distill;
    d.skip_stage_one = d.skip_stage_two = false;
    d.weights = WeightPolicy{};
    for (const auto& a : ablations) {
      if (a == "sem")
        d.weights = WeightPolicy::fixed(fixed_p);
      else if (a == "s1")
        d.skip_stage_one = true;
      else if (a == "s2")
        d.skip_stage_two = true;
      else
        throw ConfigError("unknown ablation '" + a + "' (expected sem, s1 or s2)");
    }
    if (stage_split == "plateau") {
      d.stage_split = StageSplit::kPlateau;
    } else {
      std::size_t pos = 0;
      long long n = -1;
      try {
        n = std::stoll(stage_split, &pos);
      } catch (const std::exception&) {
      }
      if (n < 0 || pos != stage_split.size())
        throw ConfigError("--stage-split must be 'plateau' or a non-negative epoch count, got '" + stage_split + "'");
      d.stage_split = StageSplit::kFixed;
      d.stage_one_epochs = static_cast<std::size_t>(n);
    }
    if (p_norm != 1 && p_norm != 2) throw ConfigError("--p-norm must be 1 or 2");
    if (repetitions < 1) throw ConfigError("--repetitions must be >= 1");
    d.validate();
  }
};

namespace detail {

inline const std::map<std::string, DatasetFormat> kFormatNames = {{"openke-id", DatasetFormat::kOpenKeId},
                                                                   {"raw-tsv", DatasetFormat::kRawTsv}};
inline const std::map<std::string, Family> kFamilyNames = {{"transe", Family::kTransE},
                                                            {"simple", Family::kSimplE},
                                                            {"complex", Family::kComplEx},
                                                            {"rotate", Family::kRotatE}};
inline const std::map<std::string, CorruptionMode> kCorruptionNames = {
    {"head", CorruptionMode::kHead}, {"tail", CorruptionMode::kTail}, {"both", CorruptionMode::kUniformBoth}};
inline const std::map<std::string, LatentRule> kRuleNames = {{"bilinear", LatentRule::kBilinear},
                                                              {"translational", LatentRule::kTranslational}};

template <class E>
CLI::Transformer names(const std::map<std::string, E>& m) {
  return CLI::Transformer(m, CLI::ignore_case);
}

inline std::string hex_hash(const std::string& s) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << std::hash<std::string>{}(s);
  return os.str();
}

inline void ensure_dir(const std::filesystem::path& p) {
  if (p.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory " + p.string() + ": " + ec.message());
}

inline void require(const std::filesystem::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string(flag) + " is required");
}

inline KnowledgeGraph load(const RunConfig& rc) {
  require(rc.dataset, "--dataset");
  return load_dataset(rc.dataset, rc.format);
}

inline void check_matches(const ModelParams& p, const KnowledgeGraph& kg, const std::string& what) {
  if (p.num_entities != kg.num_entities() || p.num_relations != kg.num_relations())
    throw ConfigError(what + " has " + std::to_string(p.num_entities) + " entities / " +
                      std::to_string(p.num_relations) + " relations but the dataset has " +
                      std::to_string(kg.num_entities()) + " / " + std::to_string(kg.num_relations()));
}

template <class E>
std::string name_of(const std::map<std::string, E>& m, const std::string& numeric) {
  for (const auto& [name, value] : m)
    if (std::to_string(static_cast<int>(value)) == numeric) return name;
  return numeric;
}

// INI text of the selected subcommand's options (given or defaulted), in a
// form --config reads back.
inline std::string config_text(const CLI::App& sub) {
  std::ostringstream os;
  os << "[" << sub.get_name() << "]\n";
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help") continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->get_type_size() == 0 ? std::vector<std::string>{"true"} : opt->results();
    } else if (!opt->get_default_str().empty()) {
      values = {opt->get_default_str()};
    }
    if (values.empty()) continue;
    for (auto& v : values) {
      if (name == "family") v = name_of(kFamilyNames, v);
      if (name == "format") v = name_of(kFormatNames, v);
      if (name == "corruption") v = name_of(kCorruptionNames, v);
      if (name == "rule") v = name_of(kRuleNames, v);
    }
    os << name << "=";
    if (values.size() == 1) {
      os << '"' << values[0] << '"';
    } else {
      os << '[';
      for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << '"' << values[i] << '"';
      os << ']';
    }
    os << "\n";
  }
  return os.str();
}

inline nlohmann::json to_json(const RankReport& r) {
  return {{"mrr", r.mrr},         {"hits@1", r.hits1},     {"hits@3", r.hits3},         {"hits@10", r.hits10},
          {"filtered", r.filtered}, {"pooled", r.pooled}, {"tie_policy", r.tie_policy}, {"candidates", r.candidates},
          {"triples", r.ranks.size()}};
}

inline nlohmann::json to_json(const BenchReport& b) {
  return {{"family", b.family},
          {"dim", b.dim},
          {"queries", b.queries},
          {"candidates_scored", b.candidates_scored},
          {"batch_size", b.batch_size},
          {"repetitions", b.repetitions},
          {"sweep_seconds", b.sweep_seconds},
          {"mean_seconds", b.mean_seconds},
          {"speedup", b.speedup}};
}

inline Metadata run_metadata(const std::string& config_text, const RunConfig& rc, const TrainReport& report) {
  std::ostringstream mrr;
  mrr << std::setprecision(17) << report.best_valid_mrr;
  return {{"config_hash", hex_hash(config_text)},
          {"seed", std::to_string(rc.distill.seed)},
          {"epoch", std::to_string(report.best_epoch)},
          {"valid_mrr", mrr.str()},
          {"epochs_run", std::to_string(report.epochs.size())}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
}

inline void write_report(const std::filesystem::path& p, const TrainReport& report) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << std::setprecision(10);
  report.write_tsv(f);
}

inline int cmd_prepare(const RunConfig& rc, std::ostream& out) {
  const KnowledgeGraph kg = load(rc);
  ensure_dir(rc.out);
  save_openke(kg, rc.out);
  out << "prepared " << rc.out.string() << ": " << kg.num_entities() << " entities, " << kg.num_relations()
      << " relations, " << kg.train.size() << "/" << kg.valid.size() << "/" << kg.test.size()
      << " train/valid/test\n";
  return 0;
}

inline int cmd_synth(const RunConfig& rc, std::ostream& out) {
  ensure_dir(rc.out);
  const KnowledgeGraph kg = make_latent_graph(rc.synth);
  save_openke(kg, rc.out);
  out << "synthesised " << rc.out.string() << ": " << kg.num_entities() << " entities, " << kg.num_relations()
      << " relations, " << kg.train.size() << "/" << kg.valid.size() << "/" << kg.test.size()
      << " train/valid/test\n";
  return 0;
}

inline int cmd_train(const RunConfig& rc, const std::string& config_text, std::ostream& out) {
  const KnowledgeGraph kg = load(rc);
  ensure_dir(rc.out);
  write_text(rc.out / "run_config.ini", config_text);
  const std::size_t dim = rc.dim ? rc.dim : rc.distill.teacher_dim;
  const TrainResult r = train_teacher(kg, rc.model_family(), dim, rc.distill);
  save_checkpoint(rc.out / "model.kged", r.params, nullptr, run_metadata(config_text, rc, r.report));
  write_report(rc.out / "train_report.tsv", r.report);
  out << "trained " << family_name(rc.family) << " dim " << dim << ": best valid MRR " << r.report.best_valid_mrr
      << " at epoch " << r.report.best_epoch << " -> " << (rc.out / "model.kged").string() << "\n";
  if (r.report.diverged) throw NumericError("training diverged; best checkpoint before divergence was saved");
  return 0;
}

inline int cmd_distill(const RunConfig& rc, const std::string& config_text, std::ostream& out) {
  require(rc.teacher_ckpt, "--teacher-ckpt");
  const KnowledgeGraph kg = load(rc);
  const Checkpoint teacher = load_checkpoint(rc.teacher_ckpt);
  check_matches(teacher.params, kg, "teacher checkpoint");
  ensure_dir(rc.out);
  write_text(rc.out / "run_config.ini", config_text);
  const DistillResult r = distill(teacher.params, kg, teacher.params.family, rc.distill.student_dim, rc.distill);
  const Metadata meta = run_metadata(config_text, rc, r.report);
  save_checkpoint(rc.out / "student.kged", r.student, &r.gates, meta);
  save_checkpoint(rc.out / "teacher_adjusted.kged", r.teacher, &r.gates, meta);
  write_report(rc.out / "distill_report.tsv", r.report);
  out << "distilled " << family_name(teacher.params.family.tag) << " " << teacher.params.dim << " -> "
      << rc.distill.student_dim << ": best valid MRR " << r.report.best_valid_mrr << " at epoch "
      << r.report.best_epoch;
  if (r.report.stage_two_start) out << " (stage two from epoch " << *r.report.stage_two_start << ")";
  out << "\n";
  if (r.report.diverged) throw NumericError("distillation diverged; best student before divergence was saved");
  return 0;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  require(rc.ckpt, "--ckpt");
  const KnowledgeGraph kg = load(rc);
  const Checkpoint ck = load_checkpoint(rc.ckpt);
  check_matches(ck.params, kg, "checkpoint");
  Split split = Split::kTest;
  if (rc.split == "valid")
    split = Split::kValid;
  else if (rc.split == "train")
    split = Split::kTrain;
  else if (rc.split != "test")
    throw ConfigError("--split must be train, valid or test");
  if (kg.split(split).empty()) throw DataError("the " + rc.split + " split is empty");
  EvalOptions opts;
  opts.filtered = !rc.raw;
  opts.pooled = rc.pooled;
  const RankReport report = evaluate(ck.params, kg, split, opts);
  const auto j = to_json(report);
  out << j.dump(2) << "\n";
  if (!rc.out.empty()) {
    ensure_dir(rc.out);
    write_text(rc.out / "eval.json", j.dump(2) + "\n");
    std::ofstream ranks(rc.out / "ranks.tsv", std::ios::trunc);
    ranks << "head\trelation\ttail\trank_head\trank_tail\tfinal_rank\n";
    for (const auto& t : report.ranks)
      ranks << t.triple.head << '\t' << t.triple.relation << '\t' << t.triple.tail << '\t' << t.head << '\t'
            << t.tail << '\t' << t.final_rank() << '\n';
  }
  return 0;
}

inline int cmd_bench(const RunConfig& rc, std::ostream& out) {
  require(rc.ckpt, "--ckpt");
  require(rc.reference, "--reference");
  const KnowledgeGraph kg = load(rc);
  const Checkpoint model = load_checkpoint(rc.ckpt);
  const Checkpoint ref = load_checkpoint(rc.reference);
  check_matches(model.params, kg, "checkpoint");
  check_matches(ref.params, kg, "reference checkpoint");
  if (kg.test.empty()) throw DataError("the test split is empty");
  if (model.params.family.tag != ref.params.family.tag)
    throw ConfigError("reference is " + std::string(family_name(ref.params.family.tag)) + " but the model is " +
                      std::string(family_name(model.params.family.tag)));
  const BenchReport r = bench_inference(ref.params, kg, 0, rc.repetitions);
  const BenchReport m = bench_inference(model.params, kg, 0, rc.repetitions, &r);
  const auto fmt = [&](const BenchReport& b, double speedup) {
    std::ostringstream s;
    s << std::left << std::setw(10) << b.family << std::right << std::setw(6) << b.dim << std::setw(14)
      << std::fixed << std::setprecision(4) << b.mean_seconds << std::setw(8) << std::setprecision(2) << speedup
      << "x\n";
    return s.str();
  };
  out << std::left << std::setw(10) << "family" << std::right << std::setw(6) << "dim" << std::setw(14) << "seconds"
      << std::setw(9) << "speedup\n";
  out << fmt(r, 1.0) << fmt(m, m.speedup);
  if (!rc.out.empty()) {
    ensure_dir(rc.out);
    write_text(rc.out / "bench.json", nlohmann::json{{"reference", to_json(r)}, {"model", to_json(m)}}.dump(2) + "\n");
  }
  return 0;
}

}  // namespace detail

// Parses argv and runs one subcommand. Returns the process exit code:
// 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  auto& d = rc.distill;
  CLI::App app{"Knowledge graph embedding training, distillation and evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from an INI/TOML file; explicit flags win");

  auto data_opts = [&](CLI::App* c) {
    c->add_option("--dataset", rc.dataset, "Dataset directory");
    c->add_option("--format", rc.format, "openke-id or raw-tsv")->transform(detail::names(detail::kFormatNames));
  };
  auto train_opts = [&](CLI::App* c) {
    c->add_option("--batch-size", d.batch_size, "Positives per batch")->capture_default_str();
    c->add_option("--epochs", d.max_epochs, "Maximum epochs")->capture_default_str();
    c->add_option("--neg", d.negatives, "Negatives per positive")->capture_default_str();
    c->add_option("--corruption", d.corruption, "head, tail or both")
        ->transform(detail::names(detail::kCorruptionNames));
    c->add_option("--lr", d.lr, "Initial learning rate")->capture_default_str();
    c->add_option("--lr-decay", d.lr_decay, "Plateau decay factor")->capture_default_str();
    c->add_option("--lr-patience", d.lr_patience, "Checkpoints without improvement before decay")
        ->capture_default_str();
    c->add_option("--early-stop", d.early_stop_patience, "Checkpoints without improvement before stopping; 0 off")
        ->capture_default_str();
    c->add_option("--valid-max", d.valid_max_triples, "Validate on a sampled subset of this size; 0 for all")
        ->capture_default_str();
    c->add_option("--seed", d.seed, "Random seed")->capture_default_str();
    c->add_option("--out", rc.out, "Output directory");
  };

  auto* prepare = app.add_subcommand("prepare", "Normalise a dataset into openke-id files");
  data_opts(prepare);
  prepare->add_option("--out", rc.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Write a synthetic latent-rule graph in openke-id format");
  synth->add_option("--entities", rc.synth.entities)->capture_default_str();
  synth->add_option("--relations", rc.synth.relations)->capture_default_str();
  synth->add_option("--latent-dim", rc.synth.latent_dim)->capture_default_str();
  synth->add_option("--density", rc.synth.density)->capture_default_str();
  synth->add_option("--rule", rc.synth.rule)->transform(detail::names(detail::kRuleNames));
  synth->add_option("--seed", rc.synth.seed)->capture_default_str();
  synth->add_option("--out", rc.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train a model on hard labels (teacher pretraining)");
  data_opts(train);
  train->add_option("--family", rc.family, "transe, simple, complex or rotate")
      ->transform(detail::names(detail::kFamilyNames));
  train->add_option("--dim", rc.dim, "Embedding dimension")->capture_default_str();
  train->add_option("--p-norm", rc.p_norm, "TransE norm (1 or 2)")->capture_default_str();
  train->add_flag("--rotate-unsquared", rc.rotate_unsquared, "RotatE with the unsquared distance");
  train_opts(train);

  auto* dist = app.add_subcommand("distill", "Distill a teacher checkpoint into a low-dimensional student");
  data_opts(dist);
  dist->add_option("--teacher-ckpt", rc.teacher_ckpt, "Teacher checkpoint");
  dist->add_option("--student-dim", d.student_dim, "Student dimension")->capture_default_str();
  dist->add_option("--stage-split", rc.stage_split, "'plateau' or the number of stage-one epochs")
      ->capture_default_str();
  dist->add_option("--stage-patience", d.stage_patience)->capture_default_str();
  dist->add_option("--stage-cap", d.stage_cap_fraction, "Latest stage switch as a fraction of --epochs")
      ->capture_default_str();
  dist->add_option("--ablate", rc.ablations, "sem, s1 or s2; repeatable")->take_all();
  dist->add_option("--fixed-p", rc.fixed_p, "Soft weight used by --ablate sem")->capture_default_str();
  dist->add_flag("--reset-gates", d.reset_gates_between_stages, "Reinitialise gates when stage two starts");
  train_opts(dist);

  auto* ev = app.add_subcommand("eval", "Filtered link-prediction metrics for a checkpoint");
  data_opts(ev);
  ev->add_option("--ckpt", rc.ckpt, "Checkpoint to evaluate");
  ev->add_option("--split", rc.split, "train, valid or test")->capture_default_str();
  ev->add_flag("--pooled", rc.pooled, "Pool head and tail ranks instead of averaging them");
  ev->add_flag("--raw", rc.raw, "Unfiltered ranking");
  ev->add_option("--out", rc.out, "Also write eval.json and ranks.tsv here");

  auto* bench = app.add_subcommand("bench", "Time full tail-prediction sweeps against a reference");
  data_opts(bench);
  bench->add_option("--ckpt", rc.ckpt, "Model checkpoint");
  bench->add_option("--reference", rc.reference, "Reference checkpoint");
  bench->add_option("--repetitions", rc.repetitions, "Timed sweeps to average")->capture_default_str();
  bench->add_option("--out", rc.out, "Also write bench.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    rc.resolve();
    const auto selected = app.get_subcommands();
    const std::string config_text = selected.empty() ? std::string() : detail::config_text(*selected.front());
    if (*prepare) return detail::cmd_prepare(rc, out);
    if (*synth) return detail::cmd_synth(rc, out);
    if (*train) return detail::cmd_train(rc, config_text, out);
    if (*dist) return detail::cmd_distill(rc, config_text, out);
    if (*ev) return detail::cmd_eval(rc, out);
    if (*bench) return detail::cmd_bench(rc, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  }
  return static_cast<int>(ExitCode::kConfig);
}

}  // namespace dualde
