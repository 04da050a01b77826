#include "metaprompt/train.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace metaprompt {

using nlohmann::ordered_json;

std::string EvalReport::to_json() const {
  ordered_json j;
  j["task"] = std::string(task_name(task));
  j["samples"] = samples;
  j["tta"] = tta;
  if (miou) j["miou"] = *miou;
  if (depth) {
    j["rmse"] = depth->rmse;
    j["rel"] = depth->rel;
    j["delta1"] = depth->delta1;
    j["delta2"] = depth->delta2;
    j["delta3"] = depth->delta3;
  }
  return j.dump();
}

std::string LogRecord::to_json() const {
  ordered_json j;
  j["iter"] = iter;
  j["lr"] = lr;
  j["loss"] = loss;
  if (val) j["val"] = ordered_json::parse(val->to_json());
  return j.dump();
}

Checkpoint make_checkpoint(const Model<float>& model, const AdamW* optimizer, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.entries.push_back({"meta.task", {1}, {model.spec().task == Task::segmentation ? 0.0f : 1.0f}});
  for (const auto& p : model.parameters()) {
    ckpt.entries.push_back({p.name, p.tensor.shape(), p.tensor.vec()});
  }
  if (optimizer != nullptr) {
    const auto& opt = *optimizer;
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      const auto& p = opt.params()[i];
      ckpt.entries.push_back({"adam.m/" + p.name, p.tensor.shape(), opt.first_moment(i)});
      ckpt.entries.push_back({"adam.v/" + p.name, p.tensor.shape(), opt.second_moment(i)});
    }
  }
  return ckpt;
}

Task checkpoint_task(const Checkpoint& ckpt) {
  const auto* e = ckpt.find("meta.task");
  if (e == nullptr || e->data.size() != 1) {
    throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint has no meta.task entry");
  }
  return e->data[0] == 0.0f ? Task::segmentation : Task::depth;
}

namespace {

void copy_entry(const CheckpointEntry* e, const std::string& name, const Shape& shape, std::span<float> dst) {
  if (e == nullptr) throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint is missing " + name);
  if (e->shape != shape) {
    throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint entry " + name + " has shape " +
                                                               shape_str(e->shape) + ", model expects " + shape_str(shape));
  }
  std::copy(e->data.begin(), e->data.end(), dst.begin());
}

}  // namespace

void restore_model(const Model<float>& model, const Checkpoint& ckpt) {
  if (checkpoint_task(ckpt) != model.spec().task) {
    throw CheckpointError(CheckpointError::Kind::mismatch,
                          "checkpoint task does not match configured task " + std::string(task_name(model.spec().task)));
  }
  for (auto p : model.parameters()) {
    copy_entry(ckpt.find(p.name), p.name, p.tensor.shape(), p.tensor.data_mut());
  }
}

Trainer::Trainer(Config config)
    : config_(std::move(config)),
      model_((config_.validate(), config_.model_spec())),
      optimizer_(model_.trainable_parameters(), config_.optimizer()) {
  const auto spec = config_.scene_spec();
  train_ = make_split(config_.data_seed, config_.train_count, spec);
  val_ = make_split(config_.data_seed + kValidationSeedOffset, config_.val_count, spec);
  // The encoder is frozen, so each training latent is computed once.
  for (const auto& s : train_) train_latents_.push_back(model_.encoder().encode(s.image).tensor);
}

const std::vector<Sample>& Trainer::samples(Split split) const { return split == Split::train ? train_ : val_; }

std::vector<int> Trainer::batch_indices(std::int64_t iter) const {
  const std::int64_t n = config_.train_count;
  std::vector<int> out;
  std::int64_t cached_epoch = -1;
  std::vector<int> perm;
  for (std::int64_t b = 0; b < config_.batch_size; ++b) {
    const std::int64_t global = iter * config_.batch_size + b;
    const std::int64_t epoch = global / n;
    if (epoch != cached_epoch) {
      perm.resize(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(mix_seed(config_.seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch)));
      for (std::int64_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[global % n]);
  }
  return out;
}

double Trainer::step() {
  const std::int64_t iter = iteration();
  const double lr = poly_lr(iter, config_.total_iters, config_.lr, config_.power, config_.warmup_iters);
  optimizer_.zero_grad();
  const float inv_batch = 1.0f / static_cast<float>(config_.batch_size);
  double total = 0.0;
  for (int idx : batch_indices(iter)) {
    const auto& s = train_[idx];
    const auto out = model_.forward_latent(train_latents_[idx], config_.H, config_.W);
    Tensor loss = config_.task == Task::segmentation ? seg_loss(out.prediction, s.seg, config_.ignore_index)
                                                     : depth_loss(out.prediction, s.depth);
    total += loss.item();
    ops::scale(loss, inv_batch).backward();
  }
  clip_grad_norm(optimizer_.params(), config_.grad_clip);
  optimizer_.step(lr);
  return total / static_cast<double>(config_.batch_size);
}

void Trainer::resume(const Checkpoint& ckpt) {
  restore_model(model_, ckpt);
  for (std::size_t i = 0; i < optimizer_.params().size(); ++i) {
    const auto& p = optimizer_.params()[i];
    copy_entry(ckpt.find("adam.m/" + p.name), "adam.m/" + p.name, p.tensor.shape(), optimizer_.first_moment(i));
    copy_entry(ckpt.find("adam.v/" + p.name), "adam.v/" + p.name, p.tensor.shape(), optimizer_.second_moment(i));
  }
  optimizer_.set_step_count(static_cast<std::int64_t>(ckpt.step));
}

Tensor Trainer::predict(const Tensor& image) const {
  NoGradGuard guard;
  return model_.forward(image).prediction;
}

EvalReport Trainer::evaluate(Split split, const TtaMode& mode, bool oracle) const {
  EvalReport report;
  report.task = config_.task;
  report.tta = mode.name();
  const auto& data = samples(split);
  ConfusionMatrix cm(config_.K);
  DepthAccumulator acc;
  const Predictor predictor = [this](const Tensor& image) { return predict(image); };
  for (const auto& s : data) {
    if (config_.task == Task::segmentation) {
      const auto pred = oracle ? s.seg : argmax_labels(tta_infer(predictor, s.image, mode));
      cm.add(pred, s.seg, config_.ignore_index);
    } else {
      const auto pred = oracle ? s.depth : tta_infer(predictor, s.image, mode);
      acc.add(pred.data(), s.depth.data());
    }
    ++report.samples;
  }
  if (config_.task == Task::segmentation) {
    report.miou = cm.miou();
  } else {
    report.depth = acc.result();
  }
  return report;
}

std::vector<LogRecord> Trainer::run(std::ostream* log, std::int64_t stop_after,
                                    const std::function<void(const Trainer&)>& on_checkpoint) {
  std::vector<LogRecord> history;
  const std::int64_t end = stop_after >= 0 ? std::min(stop_after, config_.total_iters) : config_.total_iters;
  const TtaMode mode = config_.tta_mode();
  while (iteration() < end) {
    const std::int64_t iter = iteration();
    LogRecord rec;
    rec.iter = iter;
    rec.lr = poly_lr(iter, config_.total_iters, config_.lr, config_.power, config_.warmup_iters);
    rec.loss = step();
    const std::int64_t done = iteration();
    const bool last = done == config_.total_iters;
    if (last || (config_.eval_interval > 0 && done % config_.eval_interval == 0)) {
      rec.val = evaluate(Split::val, mode);
    }
    if (rec.val || iter % config_.log_interval == 0 || last) {
      if (log != nullptr) *log << rec.to_json() << '\n' << std::flush;
      history.push_back(rec);
    }
    if (on_checkpoint && config_.checkpoint_interval > 0 && done % config_.checkpoint_interval == 0) {
      on_checkpoint(*this);
    }
  }
  return history;
}

std::vector<LogRecord> train_to_directory(const Config& config, std::ostream* echo) {
  const std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream snap(dir / "resolved_config.json");
    snap << config_to_json(config);
  }
  Trainer trainer(config);
  std::ios::openmode mode = std::ios::out;
  if (!config.checkpoint.empty()) {
    trainer.resume(load_checkpoint(config.checkpoint));
    mode |= std::ios::app;
  }
  std::ofstream metrics(dir / "metrics.jsonl", mode);
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return !EOF;
      if (a) a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      if (a) a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee;
  tee.a = metrics.rdbuf();
  tee.b = echo != nullptr ? echo->rdbuf() : nullptr;
  std::ostream log(&tee);
  auto history = trainer.run(&log, -1, [&](const Trainer& t) {
    save_checkpoint(dir / ("step_" + std::to_string(t.iteration()) + ".mpdm"), t.checkpoint());
  });
  save_checkpoint(dir / "final.mpdm", trainer.checkpoint());
  return history;
}

}  // namespace metaprompt
