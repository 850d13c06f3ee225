#include "dppt/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace dppt::perception {

namespace {

std::vector<LayerSpec> encoder_layers(const PerceptionConfig& c) {
  std::vector<LayerSpec> layers;
  std::size_t channels = 3;
  for (std::size_t i = 0; i < c.conv.size(); ++i) {
    layers.push_back(LayerSpec::conv2d(channels, c.conv[i].filters, c.conv[i].kernel, c.conv[i].stride));
    channels = c.conv[i].filters;
    if (i + 1 < c.conv.size()) layers.push_back(LayerSpec::relu());
  }
  return layers;
}

Tensor stack_inputs(std::span<const scene::SceneSample> batch) {
  const Shape& s = batch.front().input.shape();
  Tensor out({batch.size(), s[0], s[1], s[2]});
  const std::size_t per = shape_size(s);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].input.shape() != s) throw ShapeError("perception batch: mixed input shapes");
    std::copy_n(batch[i].input.data(), per, out.data() + i * per);
  }
  return out;
}

Tensor stack_targets(std::span<const scene::SceneSample> batch) {
  const std::size_t per = batch.front().recon_target.size();
  Tensor out({batch.size(), per});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].recon_target.size() != per) throw ShapeError("perception batch: mixed target sizes");
    std::copy_n(batch[i].recon_target.data(), per, out.data() + i * per);
  }
  return out;
}

void check_image(const PerceptionModel& model, const Shape& s, std::size_t first) {
  const std::size_t c = model.config().canvas;
  if (s.size() != first + 3 || s[first] != 3 || s[first + 1] != c || s[first + 2] != c) {
    throw ShapeError("perception input must be [3," + std::to_string(c) + "," + std::to_string(c) + "], got " +
                     shape_string(s));
  }
}

}  // namespace

PerceptionConfig PerceptionConfig::paper() {
  PerceptionConfig c;
  c.canvas = 120;
  c.target_canvas = 60;
  return c;
}

void PerceptionConfig::validate() const {
  if (conv.empty()) throw std::invalid_argument("perception: empty conv stack");
  if (target_canvas == 0 || canvas % target_canvas) {
    throw std::invalid_argument("perception: canvas must be a multiple of target_canvas");
  }
  std::size_t edge = canvas;
  for (const ConvLayer& l : conv) {
    edge = conv_output_size(edge, l.kernel, l.stride);
    if (edge == 0) throw std::invalid_argument("perception: conv stack collapses the input");
  }
  if (!(initial_alpha > 0.0)) throw std::invalid_argument("perception: alpha must be positive");
}

PerceptionModel::PerceptionModel(PerceptionConfig config)
    : config_(std::move(config)), encoder_((config_.validate(), encoder_layers(config_))) {
  decoder_ = Network(mlp_layers(config_.state_dim(), config_.decoder_hidden, config_.recon_pixels(), LayerKind::relu));
  log_alpha_[0] = std::log(config_.initial_alpha);
}

void PerceptionModel::initialize(Rng& rng) {
  encoder_.initialize(rng);
  decoder_.initialize(rng);
  log_alpha_[0] = std::log(config_.initial_alpha);
}

double PerceptionModel::alpha() const { return std::exp(log_alpha_[0]); }

void PerceptionModel::set_mean_image(Tensor mean) {
  check_image(*this, mean.shape(), 0);
  mean_image_ = std::move(mean);
}

std::vector<Tensor*> PerceptionModel::parameters() {
  std::vector<Tensor*> out;
  for (Tensor& t : encoder_.parameters()) out.push_back(&t);
  out.push_back(&log_alpha_);
  for (Tensor& t : decoder_.parameters()) out.push_back(&t);
  return out;
}

std::size_t PerceptionModel::parameter_count() const {
  return encoder_.parameter_count() + 1 + decoder_.parameter_count();
}

Shape PerceptionModel::response_shape() const {
  const Shape out = encoder_.output_shape({1, 3, config_.canvas, config_.canvas});
  return {out[1], out[2], out[3]};
}

Checkpoint PerceptionModel::to_checkpoint() const {
  Checkpoint ck("perception");
  nlohmann::json conv = nlohmann::json::array();
  for (const ConvLayer& l : config_.conv) conv.push_back({{"filters", l.filters}, {"kernel", l.kernel}, {"stride", l.stride}});
  ck.meta() = {{"canvas", config_.canvas},
               {"target_canvas", config_.target_canvas},
               {"conv", conv},
               {"decoder_hidden", config_.decoder_hidden},
               {"initial_alpha", config_.initial_alpha}};
  const auto enc_names = encoder_.parameter_names("encoder.");
  for (std::size_t i = 0; i < enc_names.size(); ++i) ck.add(enc_names[i], encoder_.parameters()[i]);
  ck.add("log_alpha", log_alpha_);
  const auto dec_names = decoder_.parameter_names("decoder.");
  for (std::size_t i = 0; i < dec_names.size(); ++i) ck.add(dec_names[i], decoder_.parameters()[i]);
  if (!mean_image_.empty()) ck.add("mean_image", mean_image_);
  return ck;
}

PerceptionModel PerceptionModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "perception") throw FormatError("checkpoint kind '" + ck.kind() + "' is not perception");
  const auto& m = ck.meta();
  PerceptionConfig c;
  c.canvas = m.at("canvas").get<std::size_t>();
  c.target_canvas = m.at("target_canvas").get<std::size_t>();
  c.conv.clear();
  for (const auto& l : m.at("conv")) {
    c.conv.push_back({l.at("filters").get<std::size_t>(), l.at("kernel").get<std::size_t>(), l.at("stride").get<std::size_t>()});
  }
  c.decoder_hidden = m.at("decoder_hidden").get<std::vector<std::size_t>>();
  c.initial_alpha = m.value("initial_alpha", 1.0);
  PerceptionModel model(c);
  const auto load = [&](Network& net, const std::string& prefix) {
    const auto names = net.parameter_names(prefix);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const Tensor& t = ck.get(names[i]);
      if (t.shape() != net.parameters()[i].shape()) throw FormatError("shape mismatch for " + names[i]);
      net.parameters()[i] = t;
    }
  };
  load(model.encoder_, "encoder.");
  load(model.decoder_, "decoder.");
  model.log_alpha_ = ck.get("log_alpha");
  if (ck.contains("mean_image")) model.set_mean_image(ck.get("mean_image"));
  return model;
}

Bound Bound::bind(Tape& tape, const PerceptionModel& model) {
  Bound b;
  b.encoder = model.encoder().bind(tape);
  b.log_alpha = tape.leaf(model.log_alpha_tensor());
  b.decoder = model.decoder().bind(tape);
  return b;
}

std::vector<Var> Bound::all() const {
  std::vector<Var> out = encoder;
  out.push_back(log_alpha);
  out.insert(out.end(), decoder.begin(), decoder.end());
  return out;
}

double grid_coordinate(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

namespace graph {

Var response_maps(const PerceptionModel& model, const Bound& p, Var images) {
  check_image(model, images.shape(), 1);
  return model.encoder().forward(images.tape(), images, p.encoder);
}

Var spatial_softmax(Var maps, Var log_alpha) {
  const Shape& s = maps.shape();
  if (s.size() != 4) throw ShapeError("spatial_softmax expects [n,C,H,W], got " + shape_string(s));
  Var flat = ops::reshape(maps, {s[0] * s[1], s[2] * s[3]});
  return ops::softmax_rows(ops::div_scalar(flat, ops::exp(log_alpha)));
}

Var feature_points(Var probs, std::size_t height, std::size_t width) {
  if (probs.shape().size() != 2 || probs.shape()[1] != height * width) {
    throw ShapeError("feature_points: probabilities " + shape_string(probs.shape()) + " do not match a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  Tensor grid({height * width, 2});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      grid.at(y * width + x, 0) = grid_coordinate(x, width);
      grid.at(y * width + x, 1) = grid_coordinate(y, height);
    }
  }
  return ops::matmul(probs, probs.tape().constant(std::move(grid)));
}

Var encode(const PerceptionModel& model, const Bound& p, Var images) {
  Var maps = response_maps(model, p, images);
  const Shape s = maps.shape();
  Var points = feature_points(spatial_softmax(maps, p.log_alpha), s[2], s[3]);
  return ops::reshape(points, {s[0], 2 * s[1]});
}

Var decode(const PerceptionModel& model, const Bound& p, Var states) {
  if (states.shape().size() != 2 || states.shape()[1] != model.state_dim()) {
    throw ShapeError("decode: state must be [n," + std::to_string(model.state_dim()) + "], got " +
                     shape_string(states.shape()));
  }
  return model.decoder().forward(states.tape(), states, p.decoder);
}

}  // namespace graph

Tensor spatial_softmax(const Tensor& maps, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("spatial_softmax: alpha must be positive");
  if (maps.rank() != 3 && maps.rank() != 4) throw ShapeError("spatial_softmax expects [C,H,W] or [n,C,H,W]");
  const Shape four = maps.rank() == 3 ? Shape{1, maps.dim(0), maps.dim(1), maps.dim(2)} : maps.shape();
  Tape tape(false);
  Var probs = graph::spatial_softmax(tape.constant(maps.reshaped(four)), tape.constant(Tensor::scalar(std::log(alpha))));
  return probs.value().reshaped(maps.shape());
}

Tensor feature_points(const Tensor& probs) {
  if (probs.rank() != 3 && probs.rank() != 4) throw ShapeError("feature_points expects [C,H,W] or [n,C,H,W]");
  const std::size_t off = probs.rank() - 3;
  const std::size_t n = off ? probs.dim(0) : 1, c = probs.dim(off), h = probs.dim(off + 1), w = probs.dim(off + 2);
  Tape tape(false);
  Var pts = graph::feature_points(tape.constant(probs.reshaped({n * c, h * w})), h, w);
  return off ? pts.value().reshaped({n, 2 * c}) : pts.value().reshaped({2 * c});
}

Tensor encode_batch(const PerceptionModel& model, const Tensor& images) {
  check_image(model, images.shape(), 1);
  Tape tape(false);
  Bound p = Bound::bind(tape, model);
  return graph::encode(model, p, tape.constant(images)).value();
}

Tensor encode(const PerceptionModel& model, const Tensor& image) {
  check_image(model, image.shape(), 0);
  Shape s = image.shape();
  s.insert(s.begin(), 1);
  return encode_batch(model, image.reshaped(s)).reshaped({model.state_dim()});
}

Tensor observe(const PerceptionModel& model, const Tensor& raw_rgb) {
  if (model.mean_image().empty()) return encode(model, raw_rgb);
  return encode(model, scene::mean_center(raw_rgb, model.mean_image()));
}

Tensor decode(const PerceptionModel& model, const Tensor& state) {
  if (state.size() != model.state_dim()) {
    throw ShapeError("decode: state length " + std::to_string(state.size()) + ", expected " +
                     std::to_string(model.state_dim()));
  }
  Tape tape(false);
  Bound p = Bound::bind(tape, model);
  Var out = graph::decode(model, p, tape.constant(state.reshaped({1, model.state_dim()})));
  const std::size_t tc = model.config().target_canvas;
  return out.value().reshaped({1, tc, tc});
}

std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(std::span<const scene::SceneSample> batch) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (std::size_t i = 0; i < batch.size(); ++i) index.emplace(std::make_pair(batch[i].base_index, batch[i].chain_index), i);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [key, i] : index) {
    auto next = index.find({key.first, key.second + 1});
    if (next != index.end()) pairs.emplace_back(i, next->second);
  }
  return pairs;
}

Var perception_loss(const PerceptionModel& model, const Bound& p, std::span<const scene::SceneSample> batch,
                    double lambda_slow, LossTerms* terms) {
  if (batch.empty()) throw std::invalid_argument("perception_loss: empty batch");
  Tape& tape = p.log_alpha.tape();
  Var states = graph::encode(model, p, tape.constant(stack_inputs(batch)));
  Var recon = graph::decode(model, p, states);
  Var target = tape.constant(stack_targets(batch));
  if (recon.shape() != target.shape()) {
    throw ShapeError("perception_loss: reconstruction " + shape_string(recon.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  Var rec = ops::mean(ops::square(ops::sub(recon, target)));
  Var total = rec;
  double slow_value = 0.0;
  const auto pairs = adjacent_pairs(batch);
  if (!pairs.empty()) {
    std::vector<std::size_t> a, b;
    for (const auto& [i, j] : pairs) {
      a.push_back(i);
      b.push_back(j);
    }
    Var diff = ops::sub(ops::gather_rows(states, b), ops::gather_rows(states, a));
    Var slow = ops::scale(ops::sum(ops::square(diff)), 1.0 / static_cast<double>(pairs.size()));
    slow_value = slow.value()[0];
    if (lambda_slow != 0.0) total = ops::add(rec, ops::scale(slow, lambda_slow));
  }
  if (terms) *terms = {total.value()[0], rec.value()[0], slow_value};
  return total;
}

LossTerms perception_loss(const PerceptionModel& model, std::span<const scene::SceneSample> batch, double lambda_slow) {
  Tape tape(false);
  Bound p = Bound::bind(tape, model);
  LossTerms terms;
  perception_loss(model, p, batch, lambda_slow, &terms);
  return terms;
}

TrainResult train_perception(PerceptionModel& model, const scene::SceneDataset& dataset, const TrainConfig& config,
                             Rng& rng, const EpochCallback& on_epoch) {
  if (dataset.samples.empty()) throw std::invalid_argument("train_perception: empty dataset");
  if (config.bases_per_batch == 0) throw std::invalid_argument("train_perception: bases_per_batch must be positive");
  model.set_mean_image(dataset.mean_image);

  std::map<std::size_t, std::vector<std::size_t>> chains;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) chains[dataset.samples[i].base_index].push_back(i);
  std::vector<std::size_t> bases;
  for (const auto& [b, _] : chains) bases.push_back(b);

  AdamState adam;
  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(bases.begin(), bases.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < bases.size(); start += config.bases_per_batch) {
      if (config.max_steps && result.steps >= config.max_steps) break;
      std::vector<scene::SceneSample> batch;
      for (std::size_t k = start; k < std::min(bases.size(), start + config.bases_per_batch); ++k) {
        for (std::size_t i : chains[bases[k]]) batch.push_back(dataset.samples[i]);
      }
      Tape tape;
      Bound p = Bound::bind(tape, model);
      LossTerms terms;
      Var loss = perception_loss(model, p, batch, config.lambda_slow, &terms);
      if (!std::isfinite(terms.total)) {
        throw DivergenceError("perception training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(result.steps) + " (loss " + std::to_string(terms.total) + ")");
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const Var& v : p.all()) grads.push_back(tape.grad(v));
      const auto params = model.parameters();
      if (!adam_step(params, grads, adam, config.adam)) {
        throw DivergenceError("perception training produced a non-finite gradient at step " +
                              std::to_string(result.steps));
      }
      ++result.steps;
      ++batches;
      log.loss += terms.total;
      log.reconstruction += terms.reconstruction;
      log.slowness += terms.slowness;
    }
    if (batches == 0) break;
    log.loss /= batches;
    log.reconstruction /= batches;
    log.slowness /= batches;
    log.alpha = model.alpha();
    result.epochs.push_back(log);
    result.final_loss = log.loss;
    if (on_epoch) on_epoch(log);
  }
  return result;
}

ReconstructionReport reconstruction_report(const PerceptionModel& model, const scene::SceneDataset& dataset) {
  if (dataset.samples.empty()) throw std::invalid_argument("reconstruction_report: empty dataset");
  const std::size_t pixels = dataset.samples.front().recon_target.size();
  Tensor mean({pixels});
  for (const auto& s : dataset.samples) {
    for (std::size_t i = 0; i < pixels; ++i) mean[i] += s.recon_target[i];
  }
  for (double& v : mean.values()) v /= static_cast<double>(dataset.samples.size());

  ReconstructionReport r;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < dataset.samples.size(); start += kChunk) {
    const std::size_t end = std::min(dataset.samples.size(), start + kChunk);
    std::span<const scene::SceneSample> chunk(dataset.samples.data() + start, end - start);
    const Tensor states = encode_batch(model, stack_inputs(chunk));
    Tape tape(false);
    Bound p = Bound::bind(tape, model);
    const Tensor recon = graph::decode(model, p, tape.constant(states)).value();
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      for (std::size_t i = 0; i < pixels; ++i) {
        const double t = chunk[k].recon_target[i];
        r.model_mse += (recon[k * pixels + i] - t) * (recon[k * pixels + i] - t);
        r.mean_baseline_mse += (mean[i] - t) * (mean[i] - t);
      }
    }
  }
  const double denom = static_cast<double>(dataset.samples.size() * pixels);
  r.model_mse /= denom;
  r.mean_baseline_mse /= denom;
  return r;
}

std::vector<scene::DistractorPlacement> distractors_clear_of_target(const scene::SceneSpec& spec,
                                                                    std::span<const std::string> pool,
                                                                    std::size_t count, Rng& rng,
                                                                    const scene::SpriteSet& sprites) {
  std::vector<scene::DistractorPlacement> out;
  const double target_half = sprites.target().size * spec.target_scale / 2.0 / spec.canvas;
  for (std::size_t i = 0; i < count; ++i) {
    scene::DistractorPlacement d;
    for (int attempt = 0; attempt < 200; ++attempt) {
      d = scene::random_distractors(pool, 1, rng, sprites, spec.canvas).front();
      const double half = sprites.find(d.sprite).size * d.scale / 2.0 / spec.canvas;
      const double gap = target_half + half + 1.0 / spec.canvas;
      if (std::abs(d.position.x - spec.target_position.x) > gap || std::abs(d.position.y - spec.target_position.y) > gap) {
        break;
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

double distractor_drift(const PerceptionModel& model, std::span<const scene::SceneSpec> clean_scenes,
                        std::span<const std::string> pool, std::size_t count, Rng& rng,
                        const scene::SpriteSet& sprites) {
  if (pool.empty() || count == 0 || clean_scenes.empty()) return 0.0;
  double total = 0.0;
  for (const scene::SceneSpec& clean : clean_scenes) {
    scene::SceneSpec cluttered = clean;
    auto extra = distractors_clear_of_target(clean, pool, count, rng, sprites);
    cluttered.distractors.insert(cluttered.distractors.end(), extra.begin(), extra.end());
    const Tensor a = observe(model, scene::render_scene(clean, sprites).rgb);
    const Tensor b = observe(model, scene::render_scene(cluttered, sprites).rgb);
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(clean_scenes.size());
}

void write_drift_report(const std::filesystem::path& path, std::span<const DriftRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "condition,scenes,drift\n";
  out.precision(17);
  for (const DriftRow& r : rows) out << r.condition << ',' << r.scenes << ',' << r.drift << '\n';
}

}  // namespace dppt::perception
