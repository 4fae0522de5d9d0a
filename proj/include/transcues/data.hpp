#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "transcues/losses.hpp"
#include "transcues/tensor.hpp"

namespace transcues::data {

// 8-bit raster, interleaved HWC.
struct Image8 {
  Index height = 0;
  Index width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Any PNG converted to 8-bit RGB. IoError when unreadable.
Image8 read_rgb_png(const std::filesystem::path& path);
// Palette indices or 8-bit gray values, unconverted. DataError for other formats.
Image8 read_label_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const Image8& image);
void write_gray_png(const std::filesystem::path& path, const Image8& image);
// Single-channel indexed PNG with a fixed palette.
void write_label_png(const std::filesystem::path& path, const Image8& labels);

struct ClassEntry {
  std::int32_t id = 0;
  std::string name;
  bool reflective = false;
};

// classes.txt: one "id name reflective_flag" line per class, ids dense from 0,
// class 0 is the non-reflective background. Blank lines and '#' comments are
// skipped.
class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::vector<ClassEntry> entries);

  static ClassTable parse(std::istream& in);
  static ClassTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<ClassEntry>& entries() const { return entries_; }
  int n_class() const { return static_cast<int>(entries_.size()); }
  std::set<std::int32_t> reflective_ids() const;

 private:
  std::vector<ClassEntry> entries_;
};

struct SampleRecord {
  std::string id;
  Index height = 0;
  Index width = 0;
  std::vector<float> image;          // (3, H, W), values in [0, 1]
  std::vector<std::int32_t> mask;    // (H, W)
};

struct Dataset {
  ClassTable classes;
  std::vector<SampleRecord> records;  // sorted by id
};

// root/images/<id>.png, root/masks/<id>.png, root/classes.txt.
Dataset load_dataset(const std::filesystem::path& root);

// Random horizontal flip, then bilinear (image) / nearest (mask) resize to
// resolution x resolution.
SampleRecord augment(const SampleRecord& record, std::uint64_t seed, Index resolution, bool allow_flip = true);
SampleRecord resize_record(const SampleRecord& record, Index resolution);

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;  // (B, 3, H, W)
  LabelBatch labels;
  std::vector<std::string> ids;
};

// Records must share one size.
template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<const SampleRecord*>& records);

struct SynthParams {
  int n_images = 200;
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 3;
  double alpha_min = 0.25;      // glass tint opacity
  double alpha_max = 0.5;
  int specular_min = 1;
  int specular_max = 3;
  double contrast_min = 0.35;   // rim brightening
  double contrast_max = 0.7;
  double glass_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
};

struct Vec2 {
  double x = 0;
  double y = 0;
};

struct Highlight {
  Vec2 center;
  double radius = 0;  // Gaussian sigma; support is 3 radii
};

struct SynthObject {
  std::int32_t label = 0;
  bool glass = false;
  double alpha = 1.0;
  double rim_width = 0;       // glass only
  std::vector<Vec2> polygon;  // convex, vertices in angular order
  std::vector<Highlight> highlights;
};

// Distance from (x, y) to the nearest polygon edge.
double edge_distance(const std::vector<Vec2>& polygon, double x, double y);

struct SynthScene {
  int size = 0;
  std::vector<float> image;             // (3, S, S)
  std::vector<float> background;        // (3, S, S), before any object
  std::vector<float> underlay;          // (3, S, S), what lies beneath the visible object
  std::vector<std::int32_t> mask;       // (S, S)
  std::vector<std::int32_t> instance;   // index into objects, -1 on background
  std::vector<SynthObject> objects;
};

// Classes of the synthetic benchmark: background, window, cup, box.
ClassTable synthetic_classes();
std::uint64_t scene_seed(std::uint64_t master_seed, std::uint64_t index);
SynthScene render_scene(const SynthParams& params, int index);
std::string scene_id(int index);
// Writes the load_dataset layout under `out`.
void generate_synthetic(const SynthParams& params, const std::filesystem::path& out);

}  // namespace transcues::data
