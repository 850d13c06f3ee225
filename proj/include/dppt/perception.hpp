#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dppt/autodiff.hpp"
#include "dppt/checkpoint.hpp"
#include "dppt/network.hpp"
#include "dppt/optim.hpp"
#include "dppt/scene.hpp"

namespace dppt::perception {

struct ConvLayer {
  std::size_t filters = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

struct PerceptionConfig {
  std::size_t canvas = 64;         // RGB input edge
  std::size_t target_canvas = 32;  // gray reconstruction edge
  std::vector<ConvLayer> conv = {{16, 5, 2}, {16, 3, 1}, {16, 3, 1}, {8, 3, 1}};
  std::vector<std::size_t> decoder_hidden = {500, 2000};
  double initial_alpha = 0.03;  // softmax temperature at initialization

  static PerceptionConfig desk() { return {}; }
  // 120x120 input, 60x60 reconstruction (3600 outputs).
  static PerceptionConfig paper();

  std::size_t feature_count() const { return conv.back().filters; }
  std::size_t state_dim() const { return 2 * feature_count(); }
  std::size_t recon_pixels() const { return target_canvas * target_canvas; }
  void validate() const;
};

class PerceptionModel {
 public:
  PerceptionModel() = default;
  explicit PerceptionModel(PerceptionConfig config);

  void initialize(Rng& rng);

  const PerceptionConfig& config() const { return config_; }
  const Network& encoder() const { return encoder_; }
  const Network& decoder() const { return decoder_; }
  Network& encoder() { return encoder_; }
  Network& decoder() { return decoder_; }
  double log_alpha() const { return log_alpha_[0]; }
  void set_log_alpha(double v) { log_alpha_[0] = v; }
  double alpha() const;
  const Tensor& log_alpha_tensor() const { return log_alpha_; }

  // Dataset mean image used to centre raw observations.
  const Tensor& mean_image() const { return mean_image_; }
  void set_mean_image(Tensor mean);

  // Encoder weights, log-alpha, decoder weights.
  std::vector<Tensor*> parameters();
  std::size_t parameter_count() const;
  std::size_t state_dim() const { return config_.state_dim(); }
  // [C, H', W'] of the last convolution.
  Shape response_shape() const;

  Checkpoint to_checkpoint() const;
  static PerceptionModel from_checkpoint(const Checkpoint& ckpt);

 private:
  PerceptionConfig config_;
  Network encoder_;
  Network decoder_;
  Tensor log_alpha_ = Tensor({1});
  Tensor mean_image_;
};

// Parameters of a model placed on a tape.
struct Bound {
  std::vector<Var> encoder;
  Var log_alpha;
  std::vector<Var> decoder;

  static Bound bind(Tape& tape, const PerceptionModel& model);
  std::vector<Var> all() const;
};

namespace graph {
Var response_maps(const PerceptionModel& model, const Bound& p, Var images);  // [n,3,H,W] -> [n,C,H',W']
// [n,C,H,W] -> per-filter probabilities [n*C, H*W]
Var spatial_softmax(Var maps, Var log_alpha);
// [n*C, H*W] -> expected (x, y) per row, [n*C, 2]
Var feature_points(Var probs, std::size_t height, std::size_t width);
Var encode(const PerceptionModel& model, const Bound& p, Var images);  // -> [n, 2C]
Var decode(const PerceptionModel& model, const Bound& p, Var states);  // -> [n, pixels]
}  // namespace graph

// Normalized grid coordinate of index i on an axis of n cells, in [-1, 1].
double grid_coordinate(std::size_t i, std::size_t n);

// maps [C,H,W] or [n,C,H,W]; returns probabilities with the same shape.
Tensor spatial_softmax(const Tensor& maps, double alpha);
// probs [C,H,W] -> [2C], or [n,C,H,W] -> [n,2C]; layout (x0, y0, x1, y1, ...).
Tensor feature_points(const Tensor& probs);

// image: mean-centred [3,H,W] -> state [2C]
Tensor encode(const PerceptionModel& model, const Tensor& image);
// images: [n,3,H,W] -> [n,2C]
Tensor encode_batch(const PerceptionModel& model, const Tensor& images);
// Raw RGB observation, centred with the model's mean image, then encoded.
Tensor observe(const PerceptionModel& model, const Tensor& raw_rgb);
// state [2C] -> gray image [1, tc, tc]
Tensor decode(const PerceptionModel& model, const Tensor& state);

// Adjacent jitter-chain pairs within a batch: same base, chain index one apart.
std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(std::span<const scene::SceneSample> batch);

struct LossTerms {
  double total = 0.0;
  double reconstruction = 0.0;  // mean squared error per pixel
  double slowness = 0.0;        // mean squared feature displacement over adjacent pairs
};

// Mean reconstruction MSE + lambda_slow * mean ||s_j - s_i||^2 over adjacent pairs.
LossTerms perception_loss(const PerceptionModel& model, std::span<const scene::SceneSample> batch, double lambda_slow);
// Same loss recorded on a tape; returns the scalar node and the terms' values.
Var perception_loss(const PerceptionModel& model, const Bound& p, std::span<const scene::SceneSample> batch,
                    double lambda_slow, LossTerms* terms = nullptr);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t bases_per_batch = 2;  // whole jitter chains per minibatch
  double lambda_slow = 0.1;
  AdamConfig adam{.lr = 1e-3};
  std::size_t max_steps = 0;  // 0 = no cap
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double slowness = 0.0;
  double alpha = 1.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  double final_loss = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Minibatch Adam over whole jitter chains. `model` must be initialized; its
// mean image is set from the dataset. Throws DivergenceError on a non-finite loss.
TrainResult train_perception(PerceptionModel& model, const scene::SceneDataset& dataset, const TrainConfig& config,
                             Rng& rng, const EpochCallback& on_epoch = {});

// Mean reconstruction MSE of the model and of the all-mean baseline on a dataset.
struct ReconstructionReport {
  double model_mse = 0.0;
  double mean_baseline_mse = 0.0;
};
ReconstructionReport reconstruction_report(const PerceptionModel& model, const scene::SceneDataset& dataset);

// Mean over scenes of ||encode(scene + distractors) - encode(scene)||, with
// `count` distractors per scene drawn from `pool`. Zero for an empty pool.
double distractor_drift(const PerceptionModel& model, std::span<const scene::SceneSpec> clean_scenes,
                        std::span<const std::string> pool, std::size_t count, Rng& rng,
                        const scene::SpriteSet& sprites);

// Distractor placements that keep clear of the target sprite.
std::vector<scene::DistractorPlacement> distractors_clear_of_target(const scene::SceneSpec& scene,
                                                                    std::span<const std::string> pool,
                                                                    std::size_t count, Rng& rng,
                                                                    const scene::SpriteSet& sprites);

struct DriftRow {
  std::string condition;
  std::size_t scenes = 0;
  double drift = 0.0;
};
void write_drift_report(const std::filesystem::path& path, std::span<const DriftRow> rows);

}  // namespace dppt::perception
