#include "stal3d/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "stal3d/augment.hpp"
#include "stal3d/checkpoint.hpp"
#include "stal3d/errors.hpp"
#include "stal3d/io.hpp"
#include "stal3d/parallel.hpp"
#include "stal3d/rng.hpp"

namespace stal3d {

namespace {

constexpr const char* kLogTerms[] = {"cls", "reg", "reg_filtered", "iou", "dir", "rs"};

void accumulate(LossReport& into, const LossReport& r) {
  for (const auto& e : r.entries) {
    auto it = std::find_if(into.entries.begin(), into.entries.end(),
                           [&](const LossEntry& x) { return x.term == e.term && x.domain == e.domain; });
    if (it == into.entries.end()) {
      into.entries.push_back(e);
    } else {
      it->value += e.value;
    }
  }
  into.total += r.total;
}

LossReport scaled(LossReport r, double s) {
  for (auto& e : r.entries) e.value *= s;
  r.total *= s;
  return r;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

/// Steps per epoch of accumulated batches, rounded up.
long optimizer_steps(std::size_t samples, int batch) {
  return static_cast<long>((samples + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

void save_round(const std::filesystem::path& dir, const ParameterSet& params,
                const ParameterSet& disc_params, const MemoryBank& bank,
                const std::optional<EvalReport>& eval, const DetectorConfig& detector) {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "checkpoint.bin", params, nullptr, {{"detector", detector}});
  if (!disc_params.empty()) save_checkpoint(dir / "discriminator.bin", disc_params);
  bank.save(dir / "bank.json");
  if (eval) write_json_file(dir / "eval.json", eval->to_json());
}

}  // namespace

TrainLog::TrainLog(std::ostream* out) : out_(out) {
  if (!out_) return;
  *out_ << "phase,round,epoch,step,lr";
  for (const char* d : {"S", "T"}) {
    for (const char* t : kLogTerms) *out_ << ',' << t << '_' << d;
  }
  *out_ << ",total\n";
}

void TrainLog::write(const std::string& phase, int round, int epoch, long step, double lr,
                     const LossReport& r) {
  if (!out_) return;
  *out_ << phase << ',' << round << ',' << epoch << ',' << step << ',' << format_double(lr);
  for (Domain d : {Domain::Source, Domain::Target}) {
    for (const char* t : kLogTerms) {
      *out_ << ',';
      if (r.has(t, d)) *out_ << format_double(r.value(t, d));
    }
  }
  *out_ << ',' << format_double(r.total) << '\n';
}

DomainTerms sample_terms(const Detector& detector, const ParameterSet& params, const BEVGrid& grid,
                         const std::vector<Box3D>& labels, Domain domain, TermSet routing,
                         const LossConfig& loss, const Discriminator* disc,
                         const ParameterSet* disc_params, const AdversarialConfig* adversarial) {
  const DetectorOutputs out = detector.forward(grid, params);
  const Assignment asg = assign_targets(labels, detector.anchors(), detector.config());
  std::vector<double> iou_t;
  if (routing.contains(Term::Iou)) iou_t = detector.iou_targets(RawOutputs::from(out), asg, labels);
  DomainTerms dt{domain, routing, detection_terms(out, asg, iou_t, routing, loss), {}};
  if (disc && adversarial && adversarial->enabled) {
    dt.rs = adversarial_term(out, *disc, *disc_params, domain, *adversarial);
  }
  return dt;
}

// ---------------------------------------------------------------------------

PretrainResult pretrain(const Dataset& source, const RunConfig& config, std::ostream* log,
                        const ParameterSet* init) {
  config.validate();
  const Detector detector(config.detector);
  PretrainResult result;
  result.params = init ? clone_params(*init) : detector.init_params(derive_seed(config.seed, {stream(Stream::DetectorInit)}));

  const auto train = source.indices("train");
  if (train.empty()) throw ConfigError("pretrain: source dataset has no train split");
  const long steps_per_epoch = optimizer_steps(train.size(), config.batch_size);
  OneCycle schedule{config.adam.lr, std::max(1L, steps_per_epoch * config.pretrain_epochs)};
  Adam adam(config.adam);
  TrainLog tlog(log);
  const double inv_batch = 1.0 / config.batch_size;

  long step = 0;
  for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    const auto order = shuffled(train, derive_seed(config.seed, {stream(Stream::Shuffle), 0, 0,
                                                                 static_cast<std::uint64_t>(epoch)}));
    double epoch_total = 0;
    LossReport batch_report;
    int in_batch = 0;
    for (std::size_t n = 0; n < order.size(); ++n) {
      const std::size_t i = order[n];
      const auto& labels = source.training_labels(i);
      BEVGrid grid;
      std::vector<Box3D> boxes;
      if (config.use_ros) {
        auto [pts, lab] = ros_transform(source.points(i), labels, config.ros,
                                        derive_seed(config.seed, {stream(Stream::Ros), static_cast<std::uint64_t>(epoch), i}));
        grid = pillarize(pts, config.detector);
        boxes = std::move(lab);
      } else {
        grid = pillarize(source.points(i), config.detector);
        boxes = labels;
      }
      try {
        DomainTerms dt = sample_terms(detector, result.params, grid, boxes, Domain::Source,
                                      kSupervisedTerms, config.loss);
        Objective obj = total_loss({dt}, config.loss);
        ag::backward(ag::scale(obj.total, inv_batch));
        accumulate(batch_report, obj.report);
        epoch_total += obj.report.total;
      } catch (const NumericalError& e) {
        throw NumericalError("pretrain epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + ": " + e.what());
      }
      if (++in_batch == config.batch_size || n + 1 == order.size()) {
        const double lr = schedule.lr_at(step);
        adam.step(result.params, lr);
        zero_grads(result.params);
        tlog.write("pretrain", 0, epoch, step, lr, scaled(batch_report, 1.0 / in_batch));
        batch_report = {};
        in_batch = 0;
        ++step;
      }
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<Box3D>> predict_all(const Detector& detector, const ParameterSet& params,
                                            const Dataset& data, const std::vector<std::size_t>& indices,
                                            const PredictOptions& predict, unsigned threads) {
  std::vector<std::vector<Box3D>> out(indices.size());
  parallel_for(indices.size(),
               [&](std::size_t k) { out[k] = detector.predict(data.points(indices[k]), params, predict); },
               threads);
  return out;
}

EvalReport evaluate(const Detector& detector, const ParameterSet& params, const Dataset& data,
                    const std::vector<std::size_t>& indices, const EvalConfig& eval,
                    const PredictOptions& predict, unsigned threads) {
  const auto dets = predict_all(detector, params, data, indices, predict, threads);
  const EvalHandle gt = data.eval_handle();
  std::vector<std::vector<Box3D>> truth;
  truth.reserve(indices.size());
  for (std::size_t i : indices) truth.push_back(gt.ground_truth(i));
  return evaluate_detections(dets, truth, eval);
}

AdaptResult adapt(const Dataset& source, const Dataset& target, const ParameterSet& theta_ros,
                  const RunConfig& config, std::ostream* log) {
  config.validate();
  const Detector detector(config.detector);
  const Discriminator disc(config.detector.channels);
  const bool adversarial = config.adversarial.enabled;

  AdaptResult result;
  result.params = clone_params(theta_ros);
  if (adversarial) {
    result.disc_params = disc.init_params(derive_seed(config.seed, {stream(Stream::DiscriminatorInit)}));
  }
  result.bank = MemoryBank(config.buffer_capacity, config.match_iou);

  const auto src_train = source.indices("train");
  const auto tgt_train = target.indices("train");
  const auto tgt_val = target.indices("val");
  if (config.rounds > 0 && (src_train.empty() || tgt_train.empty())) {
    throw ConfigError("adapt: source and target need non-empty train splits");
  }

  // Target scenes are only ever pillarized; their grids do not change.
  std::vector<BEVGrid> tgt_grid(target.size());
  parallel_for(tgt_train.size(), [&](std::size_t k) {
    tgt_grid[tgt_train[k]] = pillarize(target.points(tgt_train[k]), config.detector);
  }, config.threads);
  std::vector<BEVGrid> src_grid(source.size());
  if (!config.ros_in_adapt) {
    parallel_for(src_train.size(), [&](std::size_t k) {
      src_grid[src_train[k]] = pillarize(source.points(src_train[k]), config.detector);
    }, config.threads);
  }

  TrainLog tlog(log);
  const double inv_batch = 1.0 / config.batch_size;
  for (int round = 1; round <= config.rounds; ++round) {
    RoundSummary summary;
    summary.round = round;

    const ParameterSet frozen = clone_params(result.params);
    std::vector<PseudoLabelSet> sets(tgt_train.size());
    parallel_for(tgt_train.size(), [&](std::size_t k) {
      const std::size_t i = tgt_train[k];
      sets[k] = generate(detector, frozen, target.points(i), target.id(i), config.phi, config.predict);
    }, config.threads);
    long empty = 0;
    result.bank.advance_round();
    for (const auto& s : sets) {
      empty += s.boxes.empty() ? 1 : 0;
      summary.stats += result.bank.integrate(s);
    }
    summary.empty_fraction = static_cast<double>(empty) / static_cast<double>(sets.size());
    if (round == 1 && summary.empty_fraction > 0.5) {
      result.warnings.push_back("round 1: " + std::to_string(empty) + " of " +
                                std::to_string(sets.size()) + " target scenes have no pseudo labels");
    }
    if (round > 1 && config.churn_stop > 0 && summary.stats.churn() < config.churn_stop) {
      result.rounds.push_back(summary);
      break;
    }

    ParameterSet params = concat_params(result.params, result.disc_params);
    const long steps_per_epoch = optimizer_steps(tgt_train.size(), config.batch_size);
    OneCycle schedule{config.adapt_lr, std::max(1L, steps_per_epoch * config.adapt_epochs)};
    Adam adam(config.adam);
    long step = 0;
    double round_total = 0;
    long samples = 0;
    for (int epoch = 0; epoch < config.adapt_epochs; ++epoch) {
      const auto r = static_cast<std::uint64_t>(round), ep = static_cast<std::uint64_t>(epoch);
      const auto t_order = shuffled(tgt_train, derive_seed(config.seed, {stream(Stream::Shuffle), 1, r, ep}));
      const auto s_order = shuffled(src_train, derive_seed(config.seed, {stream(Stream::Shuffle), 2, r, ep}));
      LossReport batch_report;
      int in_batch = 0;
      for (std::size_t n = 0; n < t_order.size(); ++n) {
        const std::size_t ti = t_order[n];
        const std::size_t si = s_order[n % s_order.size()];
        BEVGrid sgrid;
        std::vector<Box3D> slabels = source.training_labels(si);
        if (config.ros_in_adapt) {
          auto [pts, lab] = ros_transform(source.points(si), slabels, config.ros,
                                          derive_seed(config.seed, {stream(Stream::Ros), 1000 + r, ep, si}));
          sgrid = pillarize(pts, config.detector);
          slabels = std::move(lab);
        }
        const BEVGrid& sg = config.ros_in_adapt ? sgrid : src_grid[si];
        try {
          std::vector<DomainTerms> terms;
          terms.push_back(sample_terms(detector, result.params, sg, slabels, Domain::Source,
                                       config.loss.source_terms, config.loss, &disc, &result.disc_params,
                                       &config.adversarial));
          terms.push_back(sample_terms(detector, result.params, tgt_grid[ti],
                                       result.bank.snapshot(target.id(ti)), Domain::Target,
                                       config.loss.target_terms, config.loss, &disc,
                                       &result.disc_params, &config.adversarial));
          Objective obj = total_loss(terms, config.loss);
          ag::backward(ag::scale(obj.total, inv_batch));
          accumulate(batch_report, obj.report);
          round_total += obj.report.total;
          ++samples;
        } catch (const NumericalError& e) {
          throw NumericalError("adapt round " + std::to_string(round) + " epoch " +
                               std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
        }
        if (++in_batch == config.batch_size || n + 1 == t_order.size()) {
          const double lr = schedule.lr_at(step);
          adam.step(params, lr);
          zero_grads(params);
          tlog.write("adapt", round, epoch, step, lr, scaled(batch_report, 1.0 / in_batch));
          batch_report = {};
          in_batch = 0;
          ++step;
        }
      }
    }
    summary.mean_loss = samples ? round_total / static_cast<double>(samples) : 0.0;
    if (config.eval_each_round && !tgt_val.empty()) {
      summary.eval = evaluate(detector, result.params, target, tgt_val, config.eval, config.predict,
                              config.threads);
    }
    if (!config.out_dir.empty()) {
      save_round(config.out_dir / ("round_" + std::to_string(round)), result.params, result.disc_params,
                 result.bank, summary.eval, config.detector);
    }
    result.rounds.push_back(std::move(summary));
  }
  return result;
}

}  // namespace stal3d
