#pragma once

#include <torch/torch.h>

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "wum/checkpoint.hpp"
#include "wum/config.hpp"
#include "wum/data.hpp"
#include "wum/discriminator.hpp"
#include "wum/eval.hpp"
#include "wum/generator.hpp"
#include "wum/losses.hpp"

namespace wum {

/// Linear warm-up to `peak` over `warmup` steps, then cosine decay to `floor` at `total`.
struct LrSchedule {
  double peak = 2e-4;
  double floor = 2e-5;
  std::int64_t warmup = 500;
  std::int64_t total = 1;

  [[nodiscard]] double at(std::int64_t step) const {
    if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const auto span = std::max<std::int64_t>(1, total - warmup);
    const double progress = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(span), 0.0, 1.0);
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// Normalisation gains and biases, SSM decay/skip parameters and all biases
/// are exempt from weight decay.
inline bool exempt_from_decay(const std::string& name) {
  auto ends = [&](std::string_view s) { return name.size() >= s.size() && name.ends_with(s); };
  return ends("weight_g") || ends("bias") || ends("A_log") || name == "D" || ends(".D") ||
         name.find("norm.") != std::string::npos;
}

inline std::unique_ptr<torch::optim::AdamW> make_adamw(torch::nn::Module& m, const TrainConfig& c, double lr) {
  std::vector<torch::Tensor> decay, no_decay;
  for (const auto& p : m.named_parameters()) {
    if (!p.value().requires_grad()) continue;
    (exempt_from_decay(p.key()) ? no_decay : decay).push_back(p.value());
  }
  auto opts = [&](double wd) {
    return std::make_unique<torch::optim::AdamWOptions>(
        torch::optim::AdamWOptions(lr).betas({c.beta1, c.beta2}).weight_decay(wd));
  };
  std::vector<torch::optim::OptimizerParamGroup> groups;
  if (!decay.empty()) groups.emplace_back(decay, opts(c.weight_decay));
  if (!no_decay.empty()) groups.emplace_back(no_decay, opts(0.0));
  return std::make_unique<torch::optim::AdamW>(groups, torch::optim::AdamWOptions(lr).betas({c.beta1, c.beta2}));
}

inline void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
}

struct StepMetrics {
  double L_D = 0.0;
  double L_G = 0.0;
  double L_mel = 0.0;
  double L_STFT = 0.0;
  double L_adv = 0.0;

  [[nodiscard]] std::map<std::string, double> to_map() const {
    return {{"L_D", L_D}, {"L_G", L_G}, {"L_mel", L_mel}, {"L_STFT", L_STFT}, {"L_adv", L_adv}};
  }
};

namespace detail {

inline void require_finite(const torch::Tensor& loss, const char* what, const Batch& batch) {
  if (!std::isfinite(loss.item<double>())) {
    throw NumericalError(std::string("train_step: non-finite ") + what + " on batch " + batch.fingerprint());
  }
}

}  // namespace detail

/// One adversarial update: the critics step on L_D with the generator output
/// detached, then the generator steps on its composite loss.
inline StepMetrics train_step(const Batch& batch, Generator& g, Discriminators& d, torch::optim::Optimizer& opt_g,
                              torch::optim::Optimizer& opt_d, const LossContext& ctx) {
  wum::detail::require(batch.size() > 0 && batch.x.sizes() == batch.y.sizes(), "train_step: malformed batch");
  g->train();
  d->train();
  auto y_hat = g(batch.x);

  opt_d.zero_grad();
  const auto n = batch.size();
  std::vector<torch::Tensor> real, fake;
  for (auto& s : d(torch::cat({batch.y, y_hat.detach().view_as(batch.y)})).scores()) {
    real.push_back(s.slice(0, 0, n));
    fake.push_back(s.slice(0, n));
  }
  auto l_d = gan_loss_d(real, fake);
  detail::require_finite(l_d, "L_D", batch);
  l_d.backward();
  opt_d.step();
  opt_d.zero_grad();

  // the critic is a fixed function during the generator update
  for (auto& p : d->parameters()) p.requires_grad_(false);
  opt_g.zero_grad();
  GeneratorLoss gl;
  try {
    auto fake_g = d(y_hat);
    gl = generator_total_loss(batch.y, y_hat, fake_g.scores(), ctx);
    detail::require_finite(gl.total, "L_G", batch);
    gl.total.backward();
  } catch (...) {
    for (auto& p : d->parameters()) p.requires_grad_(true);
    throw;
  }
  for (auto& p : d->parameters()) p.requires_grad_(true);
  opt_g.step();

  StepMetrics m;
  m.L_D = l_d.item<double>();
  m.L_G = gl.total.item<double>();
  m.L_mel = gl.mel.item<double>();
  m.L_STFT = gl.stft.item<double>();
  m.L_adv = gl.adv.item<double>();
  return m;
}

/// Models, optimizers and loop counters for one run.
class Trainer {
 public:
  explicit Trainer(Config cfg)
      : cfg_(std::move(cfg)),
        ctx_(cfg_.losses.mel, cfg_.losses.stft, cfg_.losses.weights) {
    cfg_.validate();
    torch::manual_seed(cfg_.train.seed);
    generator = Generator(cfg_.generator);
    discriminators = Discriminators(cfg_.discriminator);
    opt_g_ = make_adamw(*generator, cfg_.train, cfg_.train.lr);
    opt_d_ = make_adamw(*discriminators, cfg_.train, cfg_.train.lr);
  }

  [[nodiscard]] const Config& config() const { return cfg_; }
  [[nodiscard]] const LossContext& losses() const { return ctx_; }
  torch::optim::AdamW& optimizer_g() { return *opt_g_; }
  torch::optim::AdamW& optimizer_d() { return *opt_d_; }

  void set_schedule(const LrSchedule& s) { schedule_ = s; }
  [[nodiscard]] const LrSchedule& schedule() const { return schedule_; }

  StepMetrics step(const Batch& batch) {
    const double lr = schedule_.at(global_step);
    set_lr(*opt_g_, lr);
    set_lr(*opt_d_, lr);
    auto m = train_step(batch, generator, discriminators, *opt_g_, *opt_d_, ctx_);
    ++global_step;
    return m;
  }

  [[nodiscard]] Checkpoint checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    store_module(c, "generator.", *generator);
    store_module(c, "discriminator.", *discriminators);
    c.blobs["optim.generator"] = optimizer_blob(*opt_g_);
    c.blobs["optim.discriminator"] = optimizer_blob(*opt_d_);
    c.meta = {{"global_step", global_step},
              {"epoch", epoch},
              {"batch", batch_in_epoch},
              {"best_metric", std::isfinite(best_metric) ? nlohmann::json(best_metric) : nlohmann::json(nullptr)},
              {"bad_epochs", bad_epochs},
              {"parameters", count_parameters(cfg_.generator)}};
    return c;
  }

  /// Restores weights, optimizer moments and counters. Model and loss
  /// sections must match; schedule settings such as the epoch count may differ.
  void restore(const Checkpoint& c) {
    if (!(c.config.generator == cfg_.generator) || !(c.config.discriminator == cfg_.discriminator) ||
        !(c.config.losses == cfg_.losses)) {
      throw InvalidInput("resume: checkpoint model or loss config differs from the run config");
    }
    restore_module(c, "generator.", *generator);
    restore_module(c, "discriminator.", *discriminators);
    restore_optimizer(c, "optim.generator", *opt_g_);
    restore_optimizer(c, "optim.discriminator", *opt_d_);
    global_step = c.meta.value("global_step", std::int64_t{0});
    epoch = c.meta.value("epoch", std::int64_t{0});
    batch_in_epoch = c.meta.value("batch", std::int64_t{0});
    const auto& best = c.meta.at("best_metric");
    best_metric = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
    bad_epochs = c.meta.value("bad_epochs", std::int64_t{0});
  }

  Generator generator{nullptr};
  Discriminators discriminators{nullptr};
  std::int64_t global_step = 0;
  std::int64_t epoch = 0;
  std::int64_t batch_in_epoch = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  std::int64_t bad_epochs = 0;

 private:
  Config cfg_;
  LossContext ctx_;
  std::unique_ptr<torch::optim::AdamW> opt_g_, opt_d_;
  LrSchedule schedule_;
};

/// Restores a generator from any checkpoint written by the trainer.
inline Generator load_generator(const Checkpoint& c) {
  Generator g(c.config.generator);
  restore_module(c, "generator.", *g);
  g->eval();
  return g;
}

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  StepMetrics metrics;
};

struct TrainHooks {
  /// Validation metric (lower is better). Defaults to LSD at the configured rate.
  std::function<double(Generator&)> validate;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log;
  std::int64_t epochs_run = 0;
  std::int64_t steps = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  std::vector<double> validation;
  std::vector<StepRecord> history;
};

/// Full loop: epochs of batches, validation after each epoch, best/last
/// checkpoints and an append-only JSONL log in `out_dir`. With `resume`
/// the run continues from that checkpoint's counters.
inline TrainResult train(const Config& cfg, std::shared_ptr<const ExampleSource> data,
                         const std::vector<AudioBuffer>& validation_refs, const std::filesystem::path& out_dir,
                         TrainHooks hooks = {}, const std::optional<std::filesystem::path>& resume = std::nullopt) {
  namespace fs = std::filesystem;
  wum::detail::require(data != nullptr && data->size() > 0, "train: dataset is empty");
  cfg.validate();
  Trainer trainer(cfg);
  auto batches = batch_iterator(data, cfg.train.batch_size, cfg.train.seed);
  std::int64_t per_epoch = batches.batches_per_epoch();
  if (cfg.train.steps_per_epoch > 0) per_epoch = std::min(per_epoch, cfg.train.steps_per_epoch);
  std::int64_t total = per_epoch * cfg.train.epochs;
  if (cfg.train.max_steps > 0) total = std::min(total, cfg.train.max_steps);
  trainer.set_schedule({cfg.train.lr, cfg.train.lr_min, cfg.train.warmup_steps, total});

  if (!hooks.validate) {
    wum::detail::require(!validation_refs.empty(), "train: no validation audio");
    const auto rate = static_cast<std::int64_t>(cfg.train.validation_rate);
    std::vector<AudioBuffer> refs = validation_refs;
    if (cfg.train.validation_items > 0 && static_cast<std::int64_t>(refs.size()) > cfg.train.validation_items)
      refs.resize(static_cast<std::size_t>(cfg.train.validation_items));
    hooks.validate = [refs, rate, &cfg](Generator& g) {
      auto rep = evaluate(generator_enhancer(g), refs, {rate}, cfg.eval.lsd, cfg.eval.lsd_eps);
      return rep.rows.front().lsd;
    };
  }

  fs::create_directories(out_dir);
  TrainResult res;
  res.best_checkpoint = out_dir / "best.ckpt";
  res.last_checkpoint = out_dir / "last.ckpt";
  res.log = out_dir / "train_log.jsonl";
  save_config(out_dir / "config.toml", cfg);
  if (resume) {
    trainer.restore(load_checkpoint(*resume));
  } else {
    fs::remove(res.log);
  }
  std::ofstream log(res.log, std::ios::app);
  if (!log) throw IoError("cannot write " + res.log.string());
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  bool stop = trainer.global_step >= total;
  while (!stop && trainer.epoch < cfg.train.epochs) {
    for (; trainer.batch_in_epoch < per_epoch; ++trainer.batch_in_epoch) {
      if (trainer.global_step >= total) break;
      const auto batch = batches.batch(trainer.epoch, trainer.batch_in_epoch);
      StepRecord rec;
      rec.step = trainer.global_step;
      rec.epoch = trainer.epoch;
      rec.lr = trainer.schedule().at(trainer.global_step);
      rec.metrics = trainer.step(batch);
      nlohmann::json line = {{"type", "step"}, {"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr},
                             {"wall_s", wall()}};
      for (const auto& [k, v] : rec.metrics.to_map()) line[k] = v;
      log << line.dump() << "\n";
      log.flush();
      if (hooks.on_step) hooks.on_step(rec);
      res.history.push_back(rec);
    }
    const double metric = hooks.validate(trainer.generator);
    res.validation.push_back(metric);
    const bool improved = metric < trainer.best_metric;
    if (improved) {
      trainer.best_metric = metric;
      trainer.bad_epochs = 0;
    } else {
      ++trainer.bad_epochs;
    }
    ++trainer.epoch;
    trainer.batch_in_epoch = 0;
    ++res.epochs_run;
    const auto ckpt = trainer.checkpoint();
    if (improved) save_checkpoint(res.best_checkpoint, ckpt);
    save_checkpoint(res.last_checkpoint, ckpt);
    log << nlohmann::json{{"type", "epoch"},
                          {"epoch", trainer.epoch - 1},
                          {"validation", metric},
                          {"best", trainer.best_metric},
                          {"bad_epochs", trainer.bad_epochs},
                          {"wall_s", wall()}}
               .dump()
        << "\n";
    log.flush();
    if (trainer.bad_epochs >= cfg.train.patience) {
      res.early_stopped = true;
      stop = true;
    }
    if (trainer.global_step >= total) stop = true;
  }
  res.steps = trainer.global_step;
  res.best_metric = trainer.best_metric;
  if (!fs::exists(res.best_checkpoint)) save_checkpoint(res.best_checkpoint, trainer.checkpoint());
  return res;
}

}  // namespace wum
