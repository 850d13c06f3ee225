#include "dppt/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "dppt/image.hpp"

namespace dppt::scene {

using nlohmann::json;

namespace {

using Color = std::array<int, 3>;
using Painter = std::function<std::optional<Color>(double u, double v)>;

constexpr Color kBackground = {115, 90, 64};
constexpr std::size_t kSpriteSize = 11;

Sprite make_sprite(std::string id, SpriteRole role, std::size_t size, const Painter& paint) {
  Sprite s;
  s.id = std::move(id);
  s.role = role;
  s.size = size;
  s.rgb.assign(3 * size * size, 0.0);
  s.alpha.assign(size * size, 0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (2.0 * x + 1.0) / size - 1.0;
      const double v = (2.0 * y + 1.0) / size - 1.0;
      if (auto c = paint(u, v)) {
        s.alpha[y * size + x] = 1;
        for (std::size_t ch = 0; ch < 3; ++ch) s.rgb[(ch * size + y) * size + x] = level((*c)[ch]);
      }
    }
  }
  return s;
}

bool in_disk(double u, double v, double cu, double cv, double r) {
  return (u - cu) * (u - cu) + (v - cv) * (v - cv) <= r * r;
}

std::optional<Color> paint_target(double u, double v) {
  const Color yellow = {250, 214, 30}, black = {20, 20, 20}, red = {220, 40, 30};
  if (in_disk(u, v, -0.3, 0.05, 0.13) || in_disk(u, v, 0.3, 0.05, 0.13)) return black;
  if (in_disk(u, v, -0.55, 0.4, 0.16) || in_disk(u, v, 0.55, 0.4, 0.16)) return red;
  if (in_disk(u, v, 0.0, 0.2, 0.78)) return yellow;
  // Ears: narrow triangles rising from the head, black tips.
  for (double side : {-1.0, 1.0}) {
    const double cu = 0.5 * side;
    if (v >= -1.0 && v <= -0.3) {
      const double half = 0.28 * (v + 1.0) / 0.7;
      if (std::abs(u - cu) <= half + 0.05) return v < -0.7 ? black : yellow;
    }
  }
  return std::nullopt;
}

double star_radius(double angle) {
  const double k = std::cos(5.0 * angle / 2.0);
  return 0.45 + 0.4 * k * k;
}

std::pair<std::size_t, std::size_t> scaled_extent(const Sprite& s, double scale) {
  const std::size_t px = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s.size * scale)));
  return {px, px};
}

// Top-left pixel of a sprite of edge `px` centred at normalized `pos`.
std::pair<long, long> top_left(ImagePoint pos, std::size_t px, std::size_t canvas) {
  const double half = static_cast<double>(px) / 2.0;
  return {std::lround(pos.x * canvas - half), std::lround(pos.y * canvas - half)};
}

void composite(Tensor& rgb, const Sprite& s, ImagePoint pos, double scale, std::size_t canvas) {
  const auto [px, py] = scaled_extent(s, scale);
  const auto [left, top] = top_left(pos, px, canvas);
  for (std::size_t y = 0; y < py; ++y) {
    const long cy = top + static_cast<long>(y);
    if (cy < 0 || cy >= static_cast<long>(canvas)) continue;
    const std::size_t sy = std::min(s.size - 1, (2 * y + 1) * s.size / (2 * py));
    for (std::size_t x = 0; x < px; ++x) {
      const long cx = left + static_cast<long>(x);
      if (cx < 0 || cx >= static_cast<long>(canvas)) continue;
      const std::size_t sx = std::min(s.size - 1, (2 * x + 1) * s.size / (2 * px));
      if (!s.alpha[sy * s.size + sx]) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        rgb[(ch * canvas + cy) * canvas + cx] = s.rgb[(ch * s.size + sy) * s.size + sx];
      }
    }
  }
}

bool fits(ImagePoint pos, std::size_t px, std::size_t canvas) {
  const auto [left, top] = top_left(pos, px, canvas);
  const long c = static_cast<long>(canvas), p = static_cast<long>(px);
  return left >= 0 && top >= 0 && left + p <= c && top + p <= c;
}

Tensor blank_canvas(std::size_t canvas) {
  Tensor rgb({3, canvas, canvas});
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::fill_n(rgb.data() + ch * canvas * canvas, canvas * canvas, level(kBackground[ch]));
  }
  return rgb;
}

// Nearest multiple of 2^-40; keeps centring of 8-bit intensities exact.
double quantize_mean(double v) { return std::ldexp(std::nearbyint(std::ldexp(v, 40)), -40); }

std::string numbered(const char* dir, std::size_t i) {
  std::ostringstream os;
  os << dir << '/' << std::setw(4) << std::setfill('0') << i << ".png";
  return os.str();
}

}  // namespace

SpriteSet SpriteSet::standard() {
  SpriteSet set;
  const auto known = SpriteRole::known_distractor;
  const auto unknown = SpriteRole::unknown_distractor;
  set.sprites_.push_back(make_sprite("toy", SpriteRole::target, kSpriteSize, paint_target));
  set.sprites_.push_back(make_sprite("red_block", known, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    if (std::abs(u) <= 0.8 && std::abs(v) <= 0.8) return Color{200, 40, 40};
    return std::nullopt;
  }));
  set.sprites_.push_back(make_sprite("blue_wedge", known, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    if (v >= -0.85 && v <= 0.85 && std::abs(u) <= 0.9 * (v + 0.85) / 1.7) return Color{40, 70, 200};
    return std::nullopt;
  }));
  set.sprites_.push_back(make_sprite("green_ring", known, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    const double r = std::hypot(u, v);
    if (r >= 0.45 && r <= 0.9) return Color{40, 170, 60};
    return std::nullopt;
  }));
  set.sprites_.push_back(make_sprite("purple_cross", known, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    if ((std::abs(u) <= 0.28 || std::abs(v) <= 0.28) && std::abs(u) <= 0.9 && std::abs(v) <= 0.9) {
      return Color{140, 50, 160};
    }
    return std::nullopt;
  }));
  set.sprites_.push_back(make_sprite("orange_ball", unknown, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    if (std::hypot(u, v) <= 0.8) return Color{245, 150, 30};
    return std::nullopt;
  }));
  set.sprites_.push_back(make_sprite("gold_box", unknown, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    if (std::abs(u) <= 0.7 && std::abs(v) <= 0.7) return Color{235, 200, 40};
    return std::nullopt;
  }));
  set.sprites_.push_back(make_sprite("cream_star", unknown, kSpriteSize, [](double u, double v) -> std::optional<Color> {
    if (std::hypot(u, v) <= star_radius(std::atan2(v, u))) return Color{240, 225, 150};
    return std::nullopt;
  }));
  return set;
}

const Sprite& SpriteSet::find(const std::string& id) const {
  for (const Sprite& s : sprites_) {
    if (s.id == id) return s;
  }
  throw std::invalid_argument("unknown sprite id '" + id + "'");
}

std::vector<std::string> SpriteSet::ids(SpriteRole role) const {
  std::vector<std::string> out;
  for (const Sprite& s : sprites_) {
    if (s.role == role) out.push_back(s.id);
  }
  return out;
}

double placement_margin(std::size_t pixels, std::size_t canvas) {
  return (static_cast<double>(pixels) / 2.0 + 1.0) / static_cast<double>(canvas);
}

SceneRender render_scene(const SceneSpec& spec, const SpriteSet& sprites) {
  if (spec.canvas == 0 || spec.target_canvas == 0 || spec.canvas % spec.target_canvas) {
    throw std::invalid_argument("canvas must be a positive multiple of target_canvas");
  }
  const Sprite& target = sprites.target();
  const std::size_t target_px = scaled_extent(target, spec.target_scale).first;
  if (!fits(spec.target_position, target_px, spec.canvas)) {
    throw std::invalid_argument("target sprite does not fit inside the canvas");
  }

  std::vector<const DistractorPlacement*> order;
  for (const DistractorPlacement& d : spec.distractors) {
    const Sprite& s = sprites.find(d.sprite);
    if (s.role == SpriteRole::target) throw std::invalid_argument("target sprite used as a distractor");
    if (!(d.scale > 0.0) || !fits(d.position, scaled_extent(s, d.scale).first, spec.canvas)) {
      throw std::invalid_argument("distractor '" + d.sprite + "' does not fit inside the canvas");
    }
    order.push_back(&d);
  }
  std::sort(order.begin(), order.end(), [](const DistractorPlacement* a, const DistractorPlacement* b) {
    return std::tie(a->sprite, a->position.x, a->position.y, a->scale) <
           std::tie(b->sprite, b->position.x, b->position.y, b->scale);
  });

  SceneRender out;
  out.rgb = blank_canvas(spec.canvas);
  for (const DistractorPlacement* d : order) composite(out.rgb, sprites.find(d->sprite), d->position, d->scale, spec.canvas);
  composite(out.rgb, target, spec.target_position, spec.target_scale, spec.canvas);

  Tensor target_only = blank_canvas(spec.canvas);
  composite(target_only, target, spec.target_position, spec.target_scale, spec.canvas);
  out.gray = quantize_levels(downsample(to_grayscale(target_only), spec.canvas / spec.target_canvas));
  return out;
}

double background_gray_level() {
  Tensor px({3, 1, 1});
  for (std::size_t ch = 0; ch < 3; ++ch) px[ch] = level(kBackground[ch]);
  return quantize_levels(to_grayscale(px))[0];
}

std::pair<double, double> gray_centroid(const Tensor& gray, double background) {
  const std::size_t h = gray.dim(1), w = gray.dim(2);
  double sx = 0.0, sy = 0.0, n = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (std::abs(gray[y * w + x] - background) > 1e-12) {
        sx += static_cast<double>(x) + 0.5;
        sy += static_cast<double>(y) + 0.5;
        n += 1.0;
      }
    }
  }
  if (n == 0.0) throw std::invalid_argument("gray_centroid: image has no foreground pixels");
  return {sx / n, sy / n};
}

Tensor mean_center(const Tensor& image, const Tensor& dataset_mean) {
  if (image.shape() != dataset_mean.shape()) {
    throw ShapeError("mean_center: image " + shape_string(image.shape()) + " vs mean " +
                     shape_string(dataset_mean.shape()));
  }
  Tensor out = image;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= dataset_mean[i];
  return out;
}

Tensor uncenter(const Tensor& centered, const Tensor& dataset_mean) {
  if (centered.shape() != dataset_mean.shape()) throw ShapeError("uncenter: shape mismatch");
  Tensor out = centered;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += dataset_mean[i];
  return out;
}

std::vector<DistractorPlacement> random_distractors(std::span<const std::string> pool, std::size_t count, Rng& rng,
                                                    const SpriteSet& sprites, std::size_t canvas) {
  std::vector<DistractorPlacement> out;
  if (pool.empty()) return out;
  for (std::size_t i = 0; i < count; ++i) {
    DistractorPlacement d;
    d.sprite = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    d.scale = uniform(rng, 0.8, 1.25);
    const std::size_t px = scaled_extent(sprites.find(d.sprite), d.scale).first;
    const double m = placement_margin(px, canvas);
    d.position = {uniform(rng, m, 1.0 - m), uniform(rng, m, 1.0 - m)};
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<ImagePoint> random_base_positions(std::size_t count, Rng& rng, double margin) {
  std::vector<ImagePoint> out(count);
  for (ImagePoint& p : out) p = {uniform(rng, margin, 1.0 - margin), uniform(rng, margin, 1.0 - margin)};
  return out;
}

SceneDataset make_dataset(std::span<const ImagePoint> base_positions, const DatasetOptions& options, Rng& rng,
                          const SpriteSet& sprites) {
  if (base_positions.empty()) throw std::invalid_argument("make_dataset: empty base position set");
  if (options.augmentations_per_base < 1) throw std::invalid_argument("make_dataset: augmentations_per_base must be >= 1");
  if (options.jitter_px < 0) throw std::invalid_argument("make_dataset: negative jitter");

  SceneDataset ds;
  ds.seed = rng();
  const auto known = sprites.ids(SpriteRole::known_distractor);
  const std::size_t target_px = sprites.target().size;
  const double margin = placement_margin(target_px, options.canvas);
  const int j = options.jitter_px;

  for (std::size_t b = 0; b < base_positions.size(); ++b) {
    Rng chain = make_rng(ds.seed, "jitter-chain", b);
    std::uniform_int_distribution<int> start(-j, j), walk(-1, 1);
    int ox = start(chain), oy = start(chain);
    for (std::size_t k = 0; k < options.augmentations_per_base; ++k) {
      if (k > 0) {
        ox = std::clamp(ox + walk(chain), -j, j);
        oy = std::clamp(oy + walk(chain), -j, j);
      }
      Rng sample_rng = make_rng(ds.seed, "scene-sample", b * options.augmentations_per_base + k);
      SceneSpec spec;
      spec.canvas = options.canvas;
      spec.target_canvas = options.target_canvas;
      spec.target_position = {
          std::clamp(base_positions[b].x + static_cast<double>(ox) / options.canvas, margin, 1.0 - margin),
          std::clamp(base_positions[b].y + static_cast<double>(oy) / options.canvas, margin, 1.0 - margin)};
      const std::size_t count =
          std::uniform_int_distribution<std::size_t>(0, options.max_distractors)(sample_rng);
      spec.distractors = random_distractors(known, count, sample_rng, sprites, options.canvas);

      SceneRender r = render_scene(spec, sprites);
      SceneSample s;
      s.input = std::move(r.rgb);
      s.recon_target = std::move(r.gray);
      s.target_position = spec.target_position;
      s.base_index = b;
      s.chain_index = k;
      s.spec = std::move(spec);
      ds.samples.push_back(std::move(s));
    }
  }

  for (std::size_t i = ds.samples.size(); i > 1; --i) {
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(ds.samples[i - 1], ds.samples[pick]);
  }

  Tensor mean(ds.samples.front().input.shape());
  for (const SceneSample& s : ds.samples) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s.input[i];
  }
  for (double& v : mean.values()) v = quantize_mean(v / static_cast<double>(ds.samples.size()));
  for (SceneSample& s : ds.samples) s.input = mean_center(s.input, mean);
  ds.mean_image = std::move(mean);
  return ds;
}

json to_json(const SceneSpec& spec) {
  json ds = json::array();
  for (const auto& d : spec.distractors) {
    ds.push_back({{"sprite", d.sprite}, {"position", {d.position.x, d.position.y}}, {"scale", d.scale}});
  }
  return {{"target_position", {spec.target_position.x, spec.target_position.y}},
          {"target_scale", spec.target_scale},
          {"distractors", std::move(ds)},
          {"canvas", spec.canvas},
          {"target_canvas", spec.target_canvas}};
}

SceneSpec scene_spec_from_json(const json& doc) {
  SceneSpec spec;
  spec.target_position = {doc.at("target_position").at(0).get<double>(), doc.at("target_position").at(1).get<double>()};
  spec.target_scale = doc.value("target_scale", 1.0);
  spec.canvas = doc.value("canvas", std::size_t{64});
  spec.target_canvas = doc.value("target_canvas", std::size_t{32});
  for (const json& d : doc.value("distractors", json::array())) {
    spec.distractors.push_back({d.at("sprite").get<std::string>(),
                                {d.at("position").at(0).get<double>(), d.at("position").at(1).get<double>()},
                                d.value("scale", 1.0)});
  }
  return spec;
}

void save_dataset(const SceneDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "inputs");
  std::filesystem::create_directories(dir / "targets");
  const SpriteSet sprites = SpriteSet::standard();
  json samples = json::array();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const SceneSample& s = dataset.samples[i];
    const std::string in = numbered("inputs", i), tg = numbered("targets", i);
    write_png(dir / in, uncenter(s.input, dataset.mean_image));
    write_png(dir / tg, s.recon_target);
    samples.push_back({{"index", i},
                       {"input", in},
                       {"target", tg},
                       {"target_position", {s.target_position.x, s.target_position.y}},
                       {"base_index", s.base_index},
                       {"chain_index", s.chain_index},
                       {"spec", to_json(s.spec)}});
  }
  json mean = {{"shape", dataset.mean_image.shape()}, {"data", dataset.mean_image.storage()}};
  std::ofstream(dir / "mean.json") << mean.dump();
  json manifest = {{"format", "dppt.scenes"},
                   {"version", 1},
                   {"seed", dataset.seed},
                   {"mean_image", "mean.json"},
                   {"sprites",
                    {{"target", sprites.target().id},
                     {"known", sprites.ids(SpriteRole::known_distractor)},
                     {"unknown", sprites.ids(SpriteRole::unknown_distractor)}}},
                   {"samples", std::move(samples)}};
  std::ofstream(dir / "manifest.json") << manifest.dump(1);
}

SceneDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  const json manifest = json::parse(in);
  if (manifest.value("format", "") != "dppt.scenes") throw std::runtime_error("not a dppt scene dataset");
  SceneDataset ds;
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  std::ifstream mean_in(dir / manifest.at("mean_image").get<std::string>());
  const json mean = json::parse(mean_in);
  ds.mean_image = Tensor(mean.at("shape").get<Shape>(), mean.at("data").get<std::vector<double>>());
  for (const json& js : manifest.at("samples")) {
    SceneSample s;
    s.input = mean_center(read_png(dir / js.at("input").get<std::string>()), ds.mean_image);
    s.recon_target = read_png(dir / js.at("target").get<std::string>());
    s.target_position = {js.at("target_position").at(0).get<double>(), js.at("target_position").at(1).get<double>()};
    s.base_index = js.at("base_index").get<std::size_t>();
    s.chain_index = js.at("chain_index").get<std::size_t>();
    s.spec = scene_spec_from_json(js.at("spec"));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dppt::scene
