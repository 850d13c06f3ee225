#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dppt/rng.hpp"
#include "dppt/tensor.hpp"

namespace dppt::scene {

// Normalized table coordinates, [0,1]^2, x to the right and y down the image.
struct ImagePoint {
  double x = 0.5;
  double y = 0.5;
  bool operator==(const ImagePoint&) const = default;
};

enum class SpriteRole { target, known_distractor, unknown_distractor };

struct Sprite {
  std::string id;
  SpriteRole role = SpriteRole::known_distractor;
  std::size_t size = 0;                 // square raster edge, pixels
  std::vector<double> rgb;              // [3, size, size]
  std::vector<unsigned char> alpha;     // [size, size], 0 or 1
};

class SpriteSet {
 public:
  // One toy-like target, four known distractors and three held-out unknown ones.
  static SpriteSet standard();

  const Sprite& target() const { return sprites_.front(); }
  const Sprite& find(const std::string& id) const;  // throws std::invalid_argument
  std::vector<std::string> ids(SpriteRole role) const;

 private:
  std::vector<Sprite> sprites_;
};

struct DistractorPlacement {
  std::string sprite;
  ImagePoint position;
  double scale = 1.0;
  bool operator==(const DistractorPlacement&) const = default;
};

struct SceneSpec {
  ImagePoint target_position;
  double target_scale = 1.0;
  std::vector<DistractorPlacement> distractors;
  std::size_t canvas = 64;         // RGB input edge
  std::size_t target_canvas = 32;  // gray reconstruction edge
};

struct SceneRender {
  Tensor rgb;   // [3, canvas, canvas]
  Tensor gray;  // [1, target_canvas, target_canvas], target only
};

// Distractors are composited in a canonical order, then the target on top.
SceneRender render_scene(const SceneSpec& spec, const SpriteSet& sprites);

// Range of valid normalized centers for a sprite of `pixels` edge on `canvas`.
double placement_margin(std::size_t pixels, std::size_t canvas);

struct SceneSample {
  Tensor input;         // mean-centred RGB
  Tensor recon_target;  // distractor-free gray image
  ImagePoint target_position;
  std::size_t base_index = 0;
  std::size_t chain_index = 0;  // order within the base's jitter chain
  SceneSpec spec;
};

struct DatasetOptions {
  std::size_t augmentations_per_base = 12;
  int jitter_px = 3;
  std::size_t max_distractors = 4;
  std::size_t canvas = 64;
  std::size_t target_canvas = 32;
};

struct SceneDataset {
  std::vector<SceneSample> samples;
  Tensor mean_image;
  std::uint64_t seed = 0;
};

// Base renders jittered along per-base random-walk chains with random known
// distractors; shuffled, then mean-centred with the dataset mean image.
SceneDataset make_dataset(std::span<const ImagePoint> base_positions, const DatasetOptions& options, Rng& rng,
                          const SpriteSet& sprites);

Tensor mean_center(const Tensor& image, const Tensor& dataset_mean);
Tensor uncenter(const Tensor& centered, const Tensor& dataset_mean);

// Random distractor placements drawn from `pool`.
std::vector<DistractorPlacement> random_distractors(std::span<const std::string> pool, std::size_t count, Rng& rng,
                                                    const SpriteSet& sprites, std::size_t canvas);

std::vector<ImagePoint> random_base_positions(std::size_t count, Rng& rng, double margin = 0.15);

// Pixel centroid of non-background pixels of a gray target, in pixel units.
std::pair<double, double> gray_centroid(const Tensor& gray, double background);
double background_gray_level();

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& doc);

// manifest.json + inputs/NNNN.png + targets/NNNN.png + mean.json
void save_dataset(const SceneDataset& dataset, const std::filesystem::path& dir);
SceneDataset load_dataset(const std::filesystem::path& dir);

}  // namespace dppt::scene
