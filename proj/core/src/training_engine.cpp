// Copyright 2026 The protodiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "protodiff/training_engine.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"
#include "protodiff/synthetic.hpp"

namespace protodiff {

namespace {

constexpr double kAdamEps = 1e-8;

std::vector<float> as_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void copy_into(Tensor& dst, const NamedArray& src) {
  const auto* values = std::get_if<std::vector<float>>(&src.data);
  if (values == nullptr || !(src.shape == dst.shape()) || values->size() != dst.size()) {
    throw StateError("checkpoint array '" + src.name + "' does not match " + dst.shape().str());
  }
  std::copy(values->begin(), values->end(), dst.data());
}

void restore_store(ParameterStore& store, const CheckpointData& data) {
  for (const auto& [name, var] : store.parameters()) {
    ag::Var v = var;
    copy_into(v.mutable_value(), data.find("param/" + name));
  }
  for (const auto& [name, buffer] : store.buffers()) copy_into(*buffer, data.find("buffer/" + name));
}

}  // namespace

LossBreakdown compose_loss(double ce, std::span<const double> aux_per_level, double inter,
                           double intra, const TrainConfig& config) {
  LossBreakdown out;
  out.ce = ce;
  if (!aux_per_level.empty()) {
    double sum = 0.0;
    for (double a : aux_per_level) sum += a;
    out.aux = sum / static_cast<double>(aux_per_level.size());
  }
  out.inter = inter;
  out.intra = intra;
  out.total = ce + config.lambda_aux * out.aux + config.lambda_inter * inter +
              config.lambda_intra * intra;
  return out;
}

std::vector<const SegSample*> build_batch(std::span<const SegSample> gt_pool,
                                          std::span<const SegSample> pseudo_pool, int batch_size,
                                          double gt_ratio, std::mt19937_64& rng) {
  if (batch_size < 1) throw ParameterError("batch size must be positive");
  if (!(gt_ratio >= 0.0 && gt_ratio <= 1.0)) throw ParameterError("gt_ratio must lie in [0, 1]");
  const int n_gt = static_cast<int>(std::lround(gt_ratio * batch_size));
  if (n_gt > 0 && gt_pool.empty()) throw DataError("batch needs ground-truth samples but that pool is empty");
  if (n_gt < batch_size && pseudo_pool.empty()) {
    throw DataError("batch needs pseudo-labelled samples but that pool is empty");
  }

  std::vector<const SegSample*> batch;
  batch.reserve(batch_size);
  auto draw = [&](std::span<const SegSample> pool, int count) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < count; ++i) batch.push_back(&pool[pick(rng)]);
  };
  draw(gt_pool, n_gt);
  draw(pseudo_pool, batch_size - n_gt);
  return batch;
}

double poly_learning_rate(const TrainConfig& config, int iteration) {
  const double frac = 1.0 - static_cast<double>(iteration) / config.iterations;
  return frac <= 0.0 ? 0.0 : config.lr * std::pow(frac, config.poly_power);
}

AdamOptimizer::AdamOptimizer(const ParameterStore& store) {
  for (const auto& [name, var] : store.parameters()) {
    m_.emplace_back(var.shape());
    v_.emplace_back(var.shape());
  }
}

void AdamOptimizer::step(ParameterStore& store, double lr, const TrainConfig& config) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(steps_));
  const auto b1 = static_cast<float>(config.beta1);
  const auto b2 = static_cast<float>(config.beta2);
  const auto wd = static_cast<float>(config.weight_decay);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto& params = store.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var var = params[i].second;
    Tensor& w = var.mutable_value();
    const Tensor& g = var.grad();
    const bool has_grad = g.size() == w.size();
    float* m = m_[i].data();
    float* v = v_[i].data();
    float* wp = w.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float grad = (has_grad ? g.data()[j] : 0.0f) + wd * wp[j];
      m[j] = b1 * m[j] + (1.0f - b1) * grad;
      v[j] = b2 * v[j] + (1.0f - b2) * grad * grad;
      wp[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + static_cast<float>(kAdamEps));
    }
  }
}

std::uint64_t model_seed(const Config& config) { return derive_seed(config.train.seed, 10, 0); }
std::uint64_t prototype_seed(const Config& config) {
  return derive_seed(config.train.seed, 11, config.proto.seed);
}
std::uint64_t training_seed(const Config& config) { return derive_seed(config.train.seed, 12, 0); }

TrainingEngine::TrainingEngine(const Config& config, std::vector<SegSample> gt_pool,
                               std::vector<SegSample> pseudo_pool)
    : config_(config),
      schedule_(config.diffusion.T, config.diffusion.s_c),
      gt_pool_(std::move(gt_pool)),
      pseudo_pool_(std::move(pseudo_pool)),
      model_(std::make_unique<SegDiffusionModel>(config, model_seed(config))),
      bank_(config.data.num_classes, config.proto.K, config.proto.dim, config.proto.tau,
            config.proto.mu, prototype_seed(config)),
      optimizer_(model_->store()),
      rng_(training_seed(config)) {
  config_.validate();
  if (gt_pool_.empty() && pseudo_pool_.empty()) throw DataError("training set is empty");
  // Fail at construction rather than on the first step.
  {
    std::mt19937_64 probe(0);
    (void)build_batch(gt_pool_, pseudo_pool_, config_.train.batch_size, config_.train.gt_ratio, probe);
  }
  const SegSample& first = gt_pool_.empty() ? pseudo_pool_.front() : gt_pool_.front();
  for (const auto* pool : {&gt_pool_, &pseudo_pool_}) {
    for (const SegSample& s : *pool) {
      if (s.label.height != first.label.height || s.label.width != first.label.width) {
        throw DataError("training images must share one size; " + s.name + " differs");
      }
      if (s.label.num_classes != config_.data.num_classes) {
        throw DataError(s.name + " has a different class count");
      }
    }
  }
}

LossBreakdown TrainingEngine::step() {
  const auto batch = build_batch(gt_pool_, pseudo_pool_, config_.train.batch_size,
                                 config_.train.gt_ratio, rng_);
  return train_step(batch);
}

LossBreakdown TrainingEngine::train_step(std::span<const SegSample* const> batch) {
  if (batch.empty()) throw DataError("empty batch");
  const int B = static_cast<int>(batch.size());
  const int H = batch.front()->label.height;
  const int W = batch.front()->label.width;
  const int C = config_.data.num_classes;
  const TrainConfig& tc = config_.train;

  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<float> weights;
  std::vector<bool> include;
  labels.reserve(static_cast<std::size_t>(B) * H * W);
  for (const SegSample* s : batch) {
    if (s->label.height != H || s->label.width != W) throw ShapeError("batch images differ in size");
    images.push_back(s->image);
    labels.insert(labels.end(), s->label.indices.begin(), s->label.indices.end());
    const bool pseudo = s->label.source == LabelSource::kPseudo;
    weights.push_back(pseudo ? static_cast<float>(tc.lambda_pseudo) : 1.0f);
    include.push_back(!pseudo || config_.proto.use_pseudo);
  }

  // Forward diffusion of the encoded labels.
  std::uniform_int_distribution<int> pick_t(1, schedule_.total_steps());
  std::vector<int> times(B);
  for (int& t : times) t = pick_t(rng_);
  Tensor eps(Shape{config_.label.latent_channels, B, H, W});
  {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& e : eps.storage()) e = normal(rng_);
  }
  std::vector<float> signal(B);
  std::vector<float> noise(B);
  for (int b = 0; b < B; ++b) {
    const double g = schedule_.gamma(times[b]);
    signal[b] = static_cast<float>(std::sqrt(g));
    noise[b] = static_cast<float>(std::sqrt(1.0 - g));
  }
  const ag::Var onehot = ag::Var::constant(one_hot(labels, B, H, W, C));
  const ag::Var z0 = model_->codec().encode(onehot);
  const ag::Var eps_part =
      ops::scale_per_sample(ag::Var::constant(std::move(eps)), noise);
  const ag::Var z_t = ops::add(ops::scale_per_sample(z0, signal), eps_part);

  const auto conds = model_->condition(ag::Var::constant(stack_batch(images)), Mode::kTrain);
  const auto den = model_->denoise(z_t, conds, times, H, W, Mode::kTrain);

  const ag::Var ce = ops::cross_entropy(den.prediction.logits, labels, weights);
  const Shape grid = den.prediction.hidden.shape();
  const std::vector<int> grid_labels =
      ops::resize_nearest_labels(labels, B, H, W, grid.height, grid.width);

  std::vector<ag::Var> terms{ce};
  std::vector<float> coeffs{1.0f};
  std::vector<double> aux_values;
  const auto& aux = conds.conditions.aux_logits;
  for (const ag::Var& logits : aux) {
    const ag::Var a = ops::cross_entropy(logits, grid_labels, weights);
    terms.push_back(a);
    coeffs.push_back(static_cast<float>(tc.lambda_aux / static_cast<double>(aux.size())));
    aux_values.push_back(a.item());
  }

  const ag::Var embeddings = model_->projector().project(den.prediction.hidden);
  const auto pixels =
      select_pixels(B, grid.height, grid.width, config_.proto.max_pixels, include, rng_);
  ContrastiveTerms contrast = contrastive_losses(embeddings, grid_labels, pixels, bank_);
  terms.push_back(contrast.inter);
  coeffs.push_back(static_cast<float>(tc.lambda_inter));
  terms.push_back(contrast.intra);
  coeffs.push_back(static_cast<float>(tc.lambda_intra));

  const LossBreakdown losses =
      compose_loss(ce.item(), aux_values, contrast.inter.item(), contrast.intra.item(), tc);
  if (!std::isfinite(losses.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << iteration_ << " (ce=" << losses.ce
        << " aux=" << losses.aux << " inter=" << losses.inter << " intra=" << losses.intra
        << "); batch:";
    for (int b = 0; b < B; ++b) msg << ' ' << b << '=' << batch[b]->name << "@t" << times[b];
    throw NumericError(msg.str());
  }

  const ag::Var total = ops::weighted_sum(terms, coeffs);
  model_->store().zero_grad();
  ag::backward(total);
  optimizer_.step(model_->store(), poly_learning_rate(tc, iteration_), tc);
  update_prototypes(bank_, contrast.assigned);
  ++iteration_;
  return losses;
}

void TrainingEngine::train(std::ostream* log,
                           const std::function<void(const TrainingEngine&)>& on_checkpoint) {
  const TrainConfig& tc = config_.train;
  while (iteration_ < tc.iterations) {
    const double lr = poly_learning_rate(tc, iteration_);
    const auto start = std::chrono::steady_clock::now();
    const LossBreakdown l = step();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log != nullptr && tc.log_every > 0 &&
        (iteration_ % tc.log_every == 0 || iteration_ == tc.iterations)) {
      nlohmann::json line = {{"iter", iteration_}, {"lr", lr},         {"loss", l.total},
                             {"ce", l.ce},         {"aux", l.aux},     {"inter", l.inter},
                             {"intra", l.intra},   {"seconds", seconds}};
      *log << line.dump() << '\n' << std::flush;
    }
    if (on_checkpoint && tc.checkpoint_every > 0 && iteration_ % tc.checkpoint_every == 0) {
      on_checkpoint(*this);
    }
  }
}

CheckpointData TrainingEngine::snapshot() const {
  CheckpointData data;
  data.config_text = to_text(config_);
  std::ostringstream rng;
  rng << rng_;
  data.rng_state = rng.str();
  data.iteration = static_cast<std::uint64_t>(iteration_);
  const ParameterStore& store = model_->store();
  for (const auto& [name, var] : store.parameters()) {
    data.arrays.push_back({"param/" + name, var.shape(), as_vector(var.value())});
  }
  for (const auto& [name, buffer] : store.buffers()) {
    data.arrays.push_back({"buffer/" + name, buffer->shape(), as_vector(*buffer)});
  }
  auto& self = const_cast<AdamOptimizer&>(optimizer_);
  const auto& params = store.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    data.arrays.push_back({"adam.m/" + params[i].first, params[i].second.shape(),
                           as_vector(self.first_moments()[i])});
    data.arrays.push_back({"adam.v/" + params[i].first, params[i].second.shape(),
                           as_vector(self.second_moments()[i])});
  }
  const Shape bank_shape{bank_.num_classes(), bank_.per_class(), 1, bank_.dim()};
  data.arrays.push_back(
      {"proto.bank", bank_shape, std::vector<double>(bank_.data().begin(), bank_.data().end())});
  return data;
}

void TrainingEngine::restore(const CheckpointData& data) {
  restore_store(model_->store(), data);
  const auto& params = model_->store().parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    copy_into(optimizer_.first_moments()[i], data.find("adam.m/" + params[i].first));
    copy_into(optimizer_.second_moments()[i], data.find("adam.v/" + params[i].first));
  }
  optimizer_.set_steps(data.iteration);
  const NamedArray& protos = data.find("proto.bank");
  const auto* values = std::get_if<std::vector<double>>(&protos.data);
  if (values == nullptr) throw StateError("prototype bank must be stored in double precision");
  bank_.set_data(*values);
  std::istringstream rng(data.rng_state);
  rng >> rng_;
  if (!rng) throw StateError("checkpoint RNG state is unreadable");
  iteration_ = static_cast<int>(data.iteration);
}

void TrainingEngine::save_checkpoint(const std::filesystem::path& path) const {
  write_checkpoint(path, snapshot());
}

void TrainingEngine::load_checkpoint(const std::filesystem::path& path) {
  restore(read_checkpoint(path));
}

double prototype_affinity(const SegDiffusionModel& model, const PrototypeBank& bank,
                          std::span<const SegSample> samples, const NoiseSchedule& schedule,
                          int t, std::uint64_t seed) {
  ag::NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (const SegSample& s : samples) {
    const int H = s.label.height;
    const int W = s.label.width;
    const LabelLatent z0 = model.codec().encode_labels(one_hot(s.label));
    Tensor eps(z0.values.shape());
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& e : eps.storage()) e = normal(rng);
    const Tensor zt = forward_noise(z0.values, eps, t, schedule);
    const auto conds = model.condition(ag::Var::constant(s.image), Mode::kEval);
    const std::vector<int> times{t};
    const auto den = model.denoise(ag::Var::constant(zt), conds, times, H, W, Mode::kEval);
    const Tensor emb = model.projector().project(den.prediction.hidden.value());
    const Shape g = emb.shape();
    const auto labels = ops::resize_nearest_labels(s.label.indices, 1, H, W, g.height, g.width);
    std::vector<double> v(g.channels);
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        for (int d = 0; d < g.channels; ++d) v[d] = emb.at(d, 0, y, x);
        const int c = labels[static_cast<std::size_t>(y) * g.width + x];
        const auto p = bank.prototype(c, bank.assign(v, c));
        double dot = 0.0;
        for (int d = 0; d < g.channels; ++d) dot += v[d] * p[d];
        total += dot;
        ++count;
      }
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

std::unique_ptr<SegDiffusionModel> load_model(const CheckpointData& data, Config& config) {
  config = parse_config(data.config_text);
  auto model = std::make_unique<SegDiffusionModel>(config, model_seed(config));
  restore_store(model->store(), data);
  return model;
}

}  // namespace protodiff
