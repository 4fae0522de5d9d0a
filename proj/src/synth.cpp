#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "transcues/data.hpp"

namespace transcues::data {
namespace {

constexpr std::int32_t kWindow = 1, kCup = 2, kBox = 3;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
  double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(rng_); }

 private:
  std::mt19937_64 rng_;
};

std::vector<float> make_background(Sampler& s, int size) {
  const Index hw = Index(size) * size;
  std::vector<float> out(static_cast<std::size_t>(3 * hw));
  double base[3], tilt[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = s.uniform(0.25, 0.75);
    tilt[c] = s.uniform(-0.15, 0.15);
  }
  const double gdir = s.uniform(0, 2 * std::numbers::pi);
  struct Grating {
    double fx, fy, phase, amp, weight[3];
  };
  Grating gratings[2];
  for (auto& g : gratings) {
    const double theta = s.uniform(0, std::numbers::pi), freq = s.uniform(0.06, 0.3);
    g.fx = freq * std::cos(theta);
    g.fy = freq * std::sin(theta);
    g.phase = s.uniform(0, 2 * std::numbers::pi);
    g.amp = s.uniform(0.08, 0.18);
    for (double& w : g.weight) w = s.uniform(0.5, 1.0);
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x * std::cos(gdir) + y * std::sin(gdir)) / size - 0.5;
      const double n = s.normal(0.03);
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + tilt[c] * u + n;
        for (const auto& g : gratings) {
          v += g.amp * g.weight[c] * std::sin(2 * std::numbers::pi * (g.fx * x + g.fy * y) + g.phase);
        }
        out[c * hw + Index(y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<Vec2> make_polygon(Sampler& s, int size, std::int32_t label) {
  const double cx = s.uniform(0.2, 0.8) * size, cy = s.uniform(0.2, 0.8) * size;
  double rx, ry;
  std::vector<double> angles;
  if (label == kWindow) {
    rx = s.uniform(0.14, 0.28) * size;
    ry = s.uniform(0.14, 0.28) * size;
    for (int k = 0; k < 4; ++k) angles.push_back((45.0 + 90.0 * k + s.uniform(-10, 10)) * std::numbers::pi / 180.0);
  } else {
    rx = s.uniform(0.09, label == kCup ? 0.18 : 0.25) * size;
    ry = s.uniform(0.09, label == kCup ? 0.18 : 0.25) * size;
    const int n = label == kCup ? s.integer(6, 9) : s.integer(4, 6);
    const double step = 2 * std::numbers::pi / n;
    for (int k = 0; k < n; ++k) angles.push_back(step * (k + s.uniform(-0.3, 0.3)));
  }
  const double rot = s.uniform(0, 2 * std::numbers::pi);
  std::vector<Vec2> poly;
  for (double a : angles) {
    const double px = rx * std::cos(a), py = ry * std::sin(a);
    poly.push_back({cx + px * std::cos(rot) - py * std::sin(rot), cy + px * std::sin(rot) + py * std::cos(rot)});
  }
  return poly;
}

bool inside(const std::vector<Vec2>& poly, double x, double y) {
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const double cross = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    pos = pos || cross > 0;
    neg = neg || cross < 0;
  }
  return !(pos && neg);
}

}  // namespace

double edge_distance(const std::vector<Vec2>& poly, double x, double y) {
  double best = 1e30;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double t = std::clamp(((x - a.x) * dx + (y - a.y) * dy) / (dx * dx + dy * dy + 1e-12), 0.0, 1.0);
    best = std::min(best, std::hypot(x - (a.x + t * dx), y - (a.y + t * dy)));
  }
  return best;
}

void SynthParams::validate() const {
  if (n_images <= 0) throw ConfigError("synth: n_images must be positive");
  if (image_size <= 0 || image_size % 32 != 0) {
    throw ConfigError("synth: image_size must be a positive multiple of 32, got " + std::to_string(image_size));
  }
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("synth: bad object count range");
  if (!(alpha_min > 0 && alpha_min <= alpha_max && alpha_max <= 1)) throw ConfigError("synth: bad alpha range");
  if (specular_min < 0 || specular_max < specular_min) throw ConfigError("synth: bad specular count range");
  if (!(contrast_min >= 0 && contrast_min <= contrast_max && contrast_max <= 1)) {
    throw ConfigError("synth: bad contrast range");
  }
  if (!(glass_probability >= 0 && glass_probability <= 1)) throw ConfigError("synth: bad glass probability");
}

ClassTable synthetic_classes() {
  return ClassTable({{0, "background", false}, {kWindow, "window", true}, {kCup, "cup", true}, {kBox, "box", false}});
}

std::uint64_t scene_seed(std::uint64_t master_seed, std::uint64_t index) {
  std::uint64_t z = master_seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d", index);
  return buf;
}

SynthScene render_scene(const SynthParams& params, int index) {
  params.validate();
  Sampler s(scene_seed(params.seed, static_cast<std::uint64_t>(index)));
  const int size = params.image_size;
  const Index hw = Index(size) * size;
  SynthScene scene;
  scene.size = size;
  scene.background = make_background(s, size);
  scene.image = scene.background;
  scene.underlay = scene.background;
  scene.mask.assign(static_cast<std::size_t>(hw), 0);
  scene.instance.assign(static_cast<std::size_t>(hw), -1);

  const int n_objects = s.integer(params.min_objects, params.max_objects);
  for (int k = 0; k < n_objects; ++k) {
    SynthObject obj;
    obj.glass = k == 0 || s.chance(params.glass_probability);
    obj.label = obj.glass ? (s.chance(0.5) ? kWindow : kCup) : kBox;
    obj.polygon = make_polygon(s, size, obj.label);
    double color[3];
    if (obj.glass) {
      obj.alpha = s.uniform(params.alpha_min, params.alpha_max);
      // pale, nearly neutral tints keep the see-through texture dominant
      const double base[3] = {obj.label == kWindow ? 0.80 : 0.90, obj.label == kWindow ? 0.86 : 0.88,
                              obj.label == kWindow ? 0.92 : 0.84};
      for (int c = 0; c < 3; ++c) color[c] = std::clamp(base[c] + s.uniform(-0.02, 0.02), 0.0, 1.0);
    } else {
      for (double& c : color) c = s.uniform(0.0, 1.0);
    }
    const double rim_width = s.uniform(1.0, 2.0);
    const double contrast = s.uniform(params.contrast_min, params.contrast_max);
    const double shade = s.uniform(-0.1, 0.1);

    obj.rim_width = obj.glass ? rim_width : 0.0;
    auto& blobs = obj.highlights;
    if (obj.glass) {
      const int n_blobs = s.integer(params.specular_min, params.specular_max);
      double x0 = size, x1 = 0, y0 = size, y1 = 0;
      for (const auto& v : obj.polygon) {
        x0 = std::min(x0, v.x), x1 = std::max(x1, v.x), y0 = std::min(y0, v.y), y1 = std::max(y1, v.y);
      }
      for (int b = 0; b < n_blobs; ++b) {
        for (int attempt = 0; attempt < 100; ++attempt) {
          const double bx = s.uniform(x0, x1), by = s.uniform(y0, y1);
          if (inside(obj.polygon, bx, by) && edge_distance(obj.polygon, bx, by) > 2.0) {
            blobs.push_back({{bx, by}, s.uniform(0.8, 2.0)});
            break;
          }
        }
      }
    }

    const auto id = static_cast<std::int32_t>(scene.objects.size());
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (!inside(obj.polygon, px, py)) continue;
        const Index i = Index(y) * size + x;
        double spec = 0;
        for (const auto& b : blobs) {
          const double d2 = (px - b.center.x) * (px - b.center.x) + (py - b.center.y) * (py - b.center.y);
          if (d2 < 9 * b.radius * b.radius) spec = std::max(spec, std::exp(-d2 / (2 * b.radius * b.radius)));
        }
        const bool rim = obj.glass && edge_distance(obj.polygon, px, py) < rim_width;
        for (int c = 0; c < 3; ++c) {
          float& v = scene.image[c * hw + i];
          scene.underlay[c * hw + i] = v;
          double out;
          if (obj.glass) {
            out = (1 - obj.alpha) * v + obj.alpha * color[c];
            if (rim) out += contrast * (1 - out);
            out += 0.9 * spec * (1 - out);
          } else {
            out = color[c] + shade * (py / size - 0.5);
          }
          v = static_cast<float>(std::clamp(out, 0.0, 1.0));
        }
        scene.mask[i] = obj.label;
        scene.instance[i] = id;
      }
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

void generate_synthetic(const SynthParams& params, const std::filesystem::path& out) {
  params.validate();
  std::filesystem::create_directories(out / "images");
  std::filesystem::create_directories(out / "masks");
  synthetic_classes().save(out / "classes.txt");
  const Index hw = Index(params.image_size) * params.image_size;
  for (int i = 0; i < params.n_images; ++i) {
    const SynthScene scene = render_scene(params, i);
    Image8 rgb{params.image_size, params.image_size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * hw))};
    Image8 mask{params.image_size, params.image_size, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(hw))};
    for (Index p = 0; p < hw; ++p) {
      for (int c = 0; c < 3; ++c) {
        rgb.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(scene.image[c * hw + p] * 255.0f));
      }
      mask.pixels[p] = static_cast<std::uint8_t>(scene.mask[p]);
    }
    write_rgb_png(out / "images" / (scene_id(i) + ".png"), rgb);
    write_label_png(out / "masks" / (scene_id(i) + ".png"), mask);
  }
}

}  // namespace transcues::data
