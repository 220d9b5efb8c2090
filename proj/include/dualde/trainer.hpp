#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <spdlog/spdlog.h>

#include "dualde/error.hpp"
#include "dualde/eval.hpp"
#include "dualde/kg_data.hpp"
#include "dualde/models.hpp"
#include "dualde/objective.hpp"
#include "dualde/optim.hpp"
#include "dualde/sem.hpp"

namespace dualde {

enum class StageSplit {
  // Switch once stage-one validation MRR stops improving for
  // `stage_patience` checkpoints, or at `stage_cap_fraction` of the budget.
  kPlateau,
  // Switch after exactly `stage_one_epochs` epochs.
  kFixed,
};

struct DistillConfig {
  std::size_t teacher_dim = 512;
  std::size_t student_dim = 32;
  std::size_t batch_size = 1024;
  std::size_t max_epochs = 3000;
  std::size_t negatives = 64;
  CorruptionMode corruption = CorruptionMode::kUniformBoth;

  double lr = 1e-3;
  double lr_decay = 0.96;
  int lr_patience = 10;
  // Stop after this many validation checkpoints without improvement; 0 disables.
  int early_stop_patience = 50;

  StageSplit stage_split = StageSplit::kPlateau;
  int stage_patience = 10;
  double stage_cap_fraction = 0.5;
  std::size_t stage_one_epochs = 0;
  bool skip_stage_one = false;  // -S1
  bool skip_stage_two = false;  // -S2
  WeightPolicy weights;         // fixed p is -SEM
  bool reset_gates_between_stages = false;

  // Validation on a seeded subset of this many triples; 0 uses the full split.
  std::size_t valid_max_triples = 0;
  std::uint64_t seed = 0;
  bool log_steps = false;
  double divergence_threshold = 1e6;

  void validate() const {
    if (teacher_dim < 1 || student_dim < 1) throw ConfigError("dimensions must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (negatives < 1) throw ConfigError("negatives per positive must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (skip_stage_one && skip_stage_two) throw ConfigError("-S1 and -S2 together leave no distillation stage");
    if (!weights.adaptive && !(weights.fixed_p > 0.0 && weights.fixed_p < 1.0))
      throw ConfigError("fixed soft weight p must lie in (0, 1)");
    if (!(stage_cap_fraction > 0.0 && stage_cap_fraction <= 1.0))
      throw ConfigError("stage cap fraction must lie in (0, 1]");
    if (teacher_dim < student_dim)
      spdlog::warn("teacher dim {} is smaller than student dim {}", teacher_dim, student_dim);
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  int stage = 0;  // 0 for hard-label training
  double hard = 0.0;
  double soft = 0.0;
  double l_stu = 0.0;
  double l_tea = 0.0;
  double gamma = 0.0;
  double loss = 0.0;
  double valid_mrr = std::numeric_limits<double>::quiet_NaN();
  double lr_student = 0.0;
  double lr_teacher = 0.0;
  double seconds = 0.0;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  int stage = 0;
  double l_stu = 0.0;
  double l_tea = 0.0;
  double gamma = 0.0;
  double loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  // First epoch of stage two, when it ran.
  std::optional<std::size_t> stage_two_start;
  bool diverged = false;
  std::size_t best_epoch = 0;
  double best_valid_mrr = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t skipped_steps = 0;

  // Tab-separated, one header line then one row per epoch.
  void write_tsv(std::ostream& out) const {
    out << "epoch\tstage\thard\tsoft\tl_stu\tl_tea\tgamma\tloss\tvalid_mrr\tlr_student\tlr_teacher\tseconds\n";
    for (const auto& e : epochs) {
      out << e.epoch << '\t' << e.stage << '\t' << e.hard << '\t' << e.soft << '\t' << e.l_stu << '\t' << e.l_tea
          << '\t' << e.gamma << '\t' << e.loss << '\t' << e.valid_mrr << '\t' << e.lr_student << '\t'
          << e.lr_teacher << '\t' << e.seconds << '\n';
    }
  }
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

struct DistillResult {
  ModelParams student;
  ModelParams teacher;
  SemGate gates;
  TrainReport report;
};

namespace detail {

// Shuffled positives with k corruptions each, one batch at a time.
class BatchStream {
 public:
  BatchStream(const KnowledgeGraph& kg, const DistillConfig& config, std::uint64_t seed)
      : kg_(&kg), config_(&config), sampler_(kg, config.corruption, seed), order_(kg.train.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  void start_epoch() {
    std::shuffle(order_.begin(), order_.end(), sampler_.rng());
    cursor_ = 0;
  }

  bool next(LabeledBatch& batch) {
    if (cursor_ >= order_.size()) return false;
    batch.clear();
    const std::size_t end = std::min(order_.size(), cursor_ + config_->batch_size);
    for (; cursor_ < end; ++cursor_) batch.append(sampler_(kg_->train[order_[cursor_]], config_->negatives));
    return true;
  }

 private:
  const KnowledgeGraph* kg_;
  const DistillConfig* config_;
  NegativeSampler sampler_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline double validation_mrr(const ModelParams& params, const KnowledgeGraph& kg, const DistillConfig& config) {
  const auto& split = kg.valid.empty() ? kg.train : kg.valid;
  if (split.empty()) return 0.0;
  EvalOptions opts;
  opts.max_triples = config.valid_max_triples;
  opts.sample_seed = config.seed;
  return evaluate(params, kg, std::span<const Triple>(split), opts).mrr;
}

inline bool diverging(double loss, double threshold) { return !std::isfinite(loss) || loss > threshold; }

}  // namespace detail

// Hard-label training: the teacher pretraining objective, and the
// no-distillation baseline for a student-sized model. Returns the
// best-validation parameters.
inline TrainResult train_hard(const KnowledgeGraph& kg, ModelFamily family, std::size_t dim,
                              const DistillConfig& config) {
  config.validate();
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  TrainResult result;
  ModelParams params = init_params(family, dim, kg.num_entities(), kg.num_relations(), config.seed);
  result.params = params;
  if (config.max_epochs == 0 || kg.train.empty()) return result;

  AdamState adam(params, 0, AdamConfig{config.lr});
  PlateauState lr_plateau{config.lr, config.lr_decay, config.lr_patience};
  Patience stop{std::max(1, config.early_stop_patience)};
  detail::BatchStream stream(kg, config, config.seed ^ 0x5eedu);
  LabeledBatch batch;
  ParamGrad grad(params);
  auto& report = result.report;
  report.best_valid_mrr = -1.0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    stream.start_epoch();
    std::size_t batches = 0;
    while (stream.next(batch)) {
      grad.clear();
      const double loss = hard_objective(params, batch, &grad);
      if (detail::diverging(loss, config.divergence_threshold)) {
        spdlog::error("hard training diverged at epoch {} (loss {}); restoring best checkpoint", epoch, loss);
        report.diverged = true;
        break;
      }
      adam.step(params, grad);
      rec.hard += loss;
      ++batches;
      if (config.log_steps) report.steps.push_back(StepRecord{epoch, step, 0, loss, 0.0, 0.0, loss});
      ++step;
    }
    if (report.diverged) break;
    rec.hard /= static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.l_stu = rec.loss = rec.hard;
    rec.lr_student = adam.lr();
    rec.valid_mrr = detail::validation_mrr(params, kg, config);
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    report.epochs.push_back(rec);

    if (rec.valid_mrr > report.best_valid_mrr) {
      report.best_valid_mrr = rec.valid_mrr;
      report.best_epoch = epoch;
      result.params = params;
    }
    if (lr_plateau.observe(rec.valid_mrr)) adam.set_lr(lr_plateau.lr);
    if (config.early_stop_patience > 0 && stop.observe(rec.valid_mrr)) {
      spdlog::info("early stop at epoch {} (best valid MRR {:.4f} at epoch {})", epoch, report.best_valid_mrr,
                   report.best_epoch);
      break;
    }
  }
  report.skipped_steps = adam.skipped();
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  if (report.best_valid_mrr < 0.0) report.best_valid_mrr = 0.0;
  return result;
}

inline TrainResult train_teacher(const KnowledgeGraph& kg, ModelFamily family, std::size_t dim,
                                 const DistillConfig& config) {
  return train_hard(kg, family, dim, config);
}

// Two-stage distillation. Stage one trains the student on L_Stu against a
// frozen teacher; stage two unfreezes the teacher and minimises
// L_Stu + L_Tea, updating both models and all eight gates. Returns the
// best-validation student and the teacher as it stands at the end.
inline DistillResult distill(const ModelParams& teacher_in, const KnowledgeGraph& kg, ModelFamily student_family,
                             std::size_t student_dim, const DistillConfig& config) {
  config.validate();
  if (teacher_in.family.tag != student_family.tag)
    throw ConfigError("distill: teacher is " + std::string(family_name(teacher_in.family.tag)) + " but student is " +
                      std::string(family_name(student_family.tag)));
  if (teacher_in.num_entities != kg.num_entities() || teacher_in.num_relations != kg.num_relations())
    throw ConfigError("distill: teacher checkpoint does not match the dataset vocabulary");

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  DistillResult result;
  ModelParams teacher = teacher_in;
  ModelParams student =
      init_params(student_family, student_dim, kg.num_entities(), kg.num_relations(), config.seed);
  SemGate gates;
  result.student = student;
  result.teacher = teacher;
  result.gates = gates;
  auto& report = result.report;
  if (config.max_epochs == 0 || kg.train.empty()) return result;

  AdamState student_opt(student, 4, AdamConfig{config.lr});
  std::optional<AdamState> teacher_opt;
  PlateauState lr_plateau{config.lr, config.lr_decay, config.lr_patience};
  Patience stage_patience{std::max(1, config.stage_patience)};
  Patience stop{std::max(1, config.early_stop_patience)};

  const auto cap = static_cast<std::size_t>(std::ceil(config.stage_cap_fraction * double(config.max_epochs)));
  Stage stage = config.skip_stage_one ? Stage::kTwo : Stage::kOne;

  detail::BatchStream stream(kg, config, config.seed ^ 0xd15711u);
  LabeledBatch batch;
  SideGradients student_grad, teacher_grad;
  student_grad.params = ParamGrad(student);
  teacher_grad.params = ParamGrad(teacher);
  report.best_valid_mrr = -1.0;
  std::size_t step = 0;

  auto enter_stage_two = [&](std::size_t epoch) {
    stage = Stage::kTwo;
    report.stage_two_start = epoch;
    teacher_opt.emplace(teacher, 4, AdamConfig{student_opt.lr()});
    if (config.reset_gates_between_stages) gates = SemGate{};
    spdlog::info("distill: stage two from epoch {}", epoch);
  };
  if (stage == Stage::kTwo) enter_stage_two(0);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = static_cast<int>(stage);
    rec.gamma = gamma_for(stage);
    stream.start_epoch();
    std::size_t batches = 0;
    while (stream.next(batch)) {
      student_grad.reset();
      teacher_grad.reset();
      const ObjectiveValue v =
          distill_objective(teacher, student, gates, config.weights, stage, batch, &student_grad, &teacher_grad);
      if (stage == Stage::kOne && !teacher_grad.empty())
        throw std::logic_error("distill: teacher received a gradient while frozen");
      if (detail::diverging(v.loss, config.divergence_threshold)) {
        spdlog::error("distillation diverged at epoch {} (loss {}); restoring best student", epoch, v.loss);
        report.diverged = true;
        break;
      }
      auto sg = gates.student.flat();
      student_opt.step(student, student_grad.params, std::span<double>(sg),
                       std::span<const double>(student_grad.gates));
      if (config.weights.adaptive) gates.student = SideGates::from_flat(sg);
      if (stage == Stage::kTwo) {
        auto tg = gates.teacher.flat();
        teacher_opt->step(teacher, teacher_grad.params, std::span<double>(tg),
                          std::span<const double>(teacher_grad.gates));
        if (config.weights.adaptive) gates.teacher = SideGates::from_flat(tg);
      }
      rec.hard += v.student.hard;
      rec.soft += v.student.soft;
      rec.l_stu += v.student.total();
      rec.l_tea += v.teacher.total();
      rec.loss += v.loss;
      ++batches;
      if (config.log_steps)
        report.steps.push_back(
            StepRecord{epoch, step, static_cast<int>(stage), v.student.total(), v.teacher.total(), v.gamma, v.loss});
      ++step;
    }
    if (report.diverged) break;
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.hard *= inv;
    rec.soft *= inv;
    rec.l_stu *= inv;
    rec.l_tea *= inv;
    rec.loss *= inv;
    rec.lr_student = student_opt.lr();
    rec.lr_teacher = teacher_opt ? teacher_opt->lr() : 0.0;
    rec.valid_mrr = detail::validation_mrr(student, kg, config);
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    report.epochs.push_back(rec);

    if (rec.valid_mrr > report.best_valid_mrr) {
      report.best_valid_mrr = rec.valid_mrr;
      report.best_epoch = epoch;
      result.student = student;
    }
    if (lr_plateau.observe(rec.valid_mrr)) {
      student_opt.set_lr(lr_plateau.lr);
      if (teacher_opt) teacher_opt->set_lr(teacher_opt->lr() * config.lr_decay);
    }

    if (stage == Stage::kOne) {
      if (config.skip_stage_two) {
        // single-stage run; only early stopping ends it
      } else if (config.stage_split == StageSplit::kFixed) {
        if (epoch + 1 >= config.stage_one_epochs) enter_stage_two(epoch + 1);
      } else {
        const bool plateaued = stage_patience.observe(rec.valid_mrr);
        if (plateaued || epoch + 1 >= cap) enter_stage_two(epoch + 1);
      }
    }
    // Early stopping only counts checkpoints of the final stage.
    if (config.early_stop_patience > 0) {
      if (stage == Stage::kTwo && report.stage_two_start == epoch + 1) {
        stop = Patience{std::max(1, config.early_stop_patience), report.best_valid_mrr};
      } else if ((stage == Stage::kTwo || config.skip_stage_two) && stop.observe(rec.valid_mrr)) {
        spdlog::info("distill: early stop at epoch {}", epoch);
        break;
      }
    }
  }
  report.skipped_steps = student_opt.skipped() + (teacher_opt ? teacher_opt->skipped() : 0);
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  if (report.best_valid_mrr < 0.0) report.best_valid_mrr = 0.0;
  result.teacher = std::move(teacher);
  result.gates = gates;
  return result;
}

}  // namespace dualde
