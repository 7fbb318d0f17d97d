#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resflow/checkpoint.hpp"
#include "resflow/degradations.hpp"
#include "resflow/optimizer.hpp"
#include "resflow/rng.hpp"
#include "resflow/schedules.hpp"
#include "resflow/tape.hpp"
#include "resflow/velocity_model.hpp"

namespace resflow {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::uint64_t iterations = 1000;
  double lr_init = 1e-4;
  double lr_final = 1e-6;
  DegradationSchedule schedule;  // beta = 10, gamma = 1.75
  AuxDistribution aux = AuxDistribution::gaussian;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train.batch_size must be >= 1");
    if (iterations == 0) throw std::invalid_argument("train.iterations must be >= 1");
    if (!(lr_init > 0.0)) throw std::invalid_argument("train.lr_init must be > 0");
    if (!(lr_final >= 0.0 && lr_final <= lr_init)) {
      throw std::invalid_argument("train.lr_final must lie in [0, lr_init]");
    }
    if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
    schedule.validate();
  }
};

inline double lr_at(std::uint64_t step, const TrainConfig& cfg) {
  return cosine_lr(step, cfg.iterations, cfg.lr_init, cfg.lr_final);
}

/// Per-element draws of one training batch.
template <class T>
struct BatchNoise {
  std::vector<double> times;
  std::vector<Tensor<T>> y1;
};

template <class T>
BatchNoise<T> draw_noise(std::span<const PairedSample<T>* const> batch, Rng& rng,
                         AuxDistribution aux) {
  BatchNoise<T> noise;
  for (const auto* s : batch) {
    // One derived stream per element keeps draws independent of batch order.
    Rng element(rng());
    noise.times.push_back(uniform01(element));
    noise.y1.push_back(sample_aux<T>(s->x0.shape(), element, aux));
  }
  return noise;
}

/// Weighted velocity-matching loss
///   mean_i lambda(t_i) (|vx - dx/dt|^2 + |vy - dy/dt|^2) / numel(x_i),
/// recorded on `tape`. `model` is anything with forward(tape, x, y, t).
template <class T, class Model>
Tensor<T> flow_matching_loss(Tape<T>& tape, const Model& model,
                             std::span<const PairedSample<T>* const> batch,
                             const BatchNoise<T>& noise, const DegradationSchedule& sched) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (noise.times.size() != batch.size() || noise.y1.size() != batch.size()) {
    throw std::invalid_argument("noise draws do not match the batch");
  }
  std::optional<Tensor<T>> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = *batch[i];
    const double t = noise.times[i];
    const auto z = interpolate(s.x0, s.x1, noise.y1[i], t, sched);
    const auto target = target_velocity(s.x0, s.x1, noise.y1[i], t, sched);
    const auto v = model.forward(tape, z.x, z.y, t);
    const auto dx = tape.sub(v.vx, target.vx);
    const auto dy = tape.sub(v.vy, target.vy);
    const auto sq = tape.add(tape.sum(tape.mul(dx, dx)), tape.sum(tape.mul(dy, dy)));
    const double w = loss_weight(t, sched.gamma) /
                     (static_cast<double>(s.x0.numel()) * static_cast<double>(batch.size()));
    auto term = tape.scale(sq, static_cast<T>(w));
    total = total ? tape.add(*total, term) : term;
  }
  return *total;
}

/// Backward + clip + AdamW update with explicit draws; returns the loss.
template <class T>
double apply_step(VelocityModel<T>& model, AdamW<T>& opt,
                  std::span<const PairedSample<T>* const> batch, const BatchNoise<T>& noise,
                  const TrainConfig& cfg, double lr) {
  Tape<T> tape;
  model.zero_grad();
  const auto loss = flow_matching_loss(tape, model, batch, noise, cfg.schedule);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  tape.backward(loss);
  clip_grad_norm(model.parameters(), cfg.clip_norm);
  opt.step(model.parameters(), lr);
  return value;
}

/// One optimization step at schedule position `step`: t ~ U[0,1) and y1 drawn
/// per element from `rng`.
template <class T>
double train_step(VelocityModel<T>& model, AdamW<T>& opt,
                  std::span<const PairedSample<T>* const> batch, Rng& rng,
                  const TrainConfig& cfg, std::uint64_t step) {
  const auto noise = draw_noise(batch, rng, cfg.aux);
  return apply_step(model, opt, batch, noise, cfg, lr_at(step, cfg));
}

struct LogRow {
  std::uint64_t step;
  double loss;
  double lr;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> log_csv;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  std::vector<LogRow> log;
  std::uint64_t final_step = 0;
};

template <class T>
checkpoint::Meta make_meta(const VelocityModel<T>& model, const TrainConfig& cfg,
                           std::uint64_t step) {
  return {model.config(), cfg.schedule, cfg.aux, step};
}

/// Simulation-free training loop from `start_step` to cfg.iterations. Batch
/// composition and noise at step s depend only on (cfg.seed, s), so a resumed
/// run continues the original sequence.
template <class T>
TrainResult train(VelocityModel<T>& model, AdamW<T>& opt,
                  const std::vector<PairedSample<T>>& dataset, const TrainConfig& cfg,
                  const TrainOutputs& io = {}, std::uint64_t start_step = 0) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  if (start_step > cfg.iterations) throw std::invalid_argument("start step beyond iterations");
  std::ofstream log;
  if (io.log_csv) {
    const bool append = start_step > 0 && std::filesystem::exists(*io.log_csv);
    log.open(*io.log_csv, append ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open " + io.log_csv->string());
    if (!append) log << "step,loss,lr\n";
    log.precision(9);
  }
  TrainResult result;
  std::vector<const PairedSample<T>*> batch(cfg.batch_size);
  for (std::uint64_t step = start_step; step < cfg.iterations; ++step) {
    Rng rng(derive_seed(cfg.seed, "batch/", step));
    for (auto& b : batch) b = &dataset[uniform_index(rng, dataset.size())];
    const double lr = lr_at(step, cfg);
    double loss;
    try {
      loss = train_step<T>(model, opt, batch, rng, cfg, step);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what() +
                         "; last checkpoint left in place");
    }
    const LogRow row{step + 1, loss, lr};
    result.log.push_back(row);
    if (log) log << row.step << ',' << row.loss << ',' << row.lr << '\n';
    const bool periodic = io.checkpoint_every > 0 && (step + 1) % io.checkpoint_every == 0;
    if (io.checkpoint && (periodic || step + 1 == cfg.iterations)) {
      checkpoint::save(*io.checkpoint, model, make_meta(model, cfg, step + 1), &opt);
    }
    // After the save: a callback that interrupts still leaves this step on disk.
    if (io.on_step) io.on_step(row);
  }
  result.final_step = cfg.iterations;
  if (io.checkpoint && start_step == cfg.iterations) {
    checkpoint::save(*io.checkpoint, model, make_meta(model, cfg, cfg.iterations), &opt);
  }
  return result;
}

}  // namespace resflow
