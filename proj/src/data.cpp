#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "transcues/data.hpp"

namespace transcues::data {

ClassTable::ClassTable(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw DataError("class table is empty");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != static_cast<std::int32_t>(i)) {
      throw DataError("class ids must be dense from 0; entry " + std::to_string(i) + " has id " +
                      std::to_string(entries_[i].id));
    }
  }
  if (entries_[0].reflective) throw DataError("class 0 is background and cannot be reflective");
}

ClassTable ClassTable::parse(std::istream& in) {
  std::vector<ClassEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    ClassEntry e;
    int flag = 0;
    if (!(fields >> e.id)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw DataError("classes.txt line " + std::to_string(line_no) + ": expected 'id name reflective_flag'");
    }
    std::string extra;
    if (!(fields >> e.name >> flag) || (flag != 0 && flag != 1) || (fields >> extra)) {
      throw DataError("classes.txt line " + std::to_string(line_no) + ": expected 'id name reflective_flag'");
    }
    e.reflective = flag == 1;
    entries.push_back(std::move(e));
  }
  return ClassTable(std::move(entries));
}

ClassTable ClassTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class table " + path.string());
  return parse(in);
}

void ClassTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write class table " + path.string());
  for (const auto& e : entries_) out << e.id << ' ' << e.name << ' ' << (e.reflective ? 1 : 0) << '\n';
}

std::set<std::int32_t> ClassTable::reflective_ids() const {
  std::set<std::int32_t> ids;
  for (const auto& e : entries_) {
    if (e.reflective) ids.insert(e.id);
  }
  return ids;
}

namespace {

std::map<std::string, std::filesystem::path> list_png(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& root) {
  const auto images_dir = root / "images", masks_dir = root / "masks", classes = root / "classes.txt";
  for (const auto& p : {images_dir, masks_dir}) {
    if (!std::filesystem::is_directory(p)) throw IoError("dataset directory missing: " + p.string());
  }
  Dataset ds;
  ds.classes = ClassTable::load(classes);
  const auto images = list_png(images_dir);
  const auto masks = list_png(masks_dir);
  std::vector<std::string> orphan_images, orphan_masks;
  for (const auto& [id, _] : images) {
    if (!masks.contains(id)) orphan_images.push_back(id);
  }
  for (const auto& [id, _] : masks) {
    if (!images.contains(id)) orphan_masks.push_back(id);
  }
  if (!orphan_images.empty() || !orphan_masks.empty()) {
    std::string msg = "dataset " + root.string() + " has unpaired files;";
    if (!orphan_images.empty()) msg += " images without masks: " + join(orphan_images) + ";";
    if (!orphan_masks.empty()) msg += " masks without images: " + join(orphan_masks) + ";";
    throw DataError(msg);
  }
  const int n_class = ds.classes.n_class();
  for (const auto& [id, image_path] : images) {
    const Image8 rgb = read_rgb_png(image_path);
    const Image8 mask = read_label_png(masks.at(id));
    if (rgb.height != mask.height || rgb.width != mask.width) {
      throw DataError("sample " + id + ": image is " + std::to_string(rgb.height) + "x" + std::to_string(rgb.width) +
                      " but mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    SampleRecord r{id, rgb.height, rgb.width, {}, {}};
    const Index hw = r.height * r.width;
    r.image.resize(static_cast<std::size_t>(3 * hw));
    for (Index i = 0; i < hw; ++i) {
      for (int c = 0; c < 3; ++c) r.image[c * hw + i] = rgb.pixels[i * 3 + c] / 255.0f;
    }
    r.mask.assign(mask.pixels.begin(), mask.pixels.end());
    for (auto v : r.mask) {
      if (v >= n_class) {
        throw DataError("sample " + id + ": mask value " + std::to_string(v) + " >= n_class " +
                        std::to_string(n_class));
      }
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

SampleRecord resize_record(const SampleRecord& record, Index resolution) {
  if (record.height == resolution && record.width == resolution) return record;
  SampleRecord out{record.id, resolution, resolution, {}, {}};
  const Index hw = resolution * resolution, src_hw = record.height * record.width;
  out.image.resize(static_cast<std::size_t>(3 * hw));
  out.mask.resize(static_cast<std::size_t>(hw));
  const double sy = double(record.height) / double(resolution), sx = double(record.width) / double(resolution);
  for (Index y = 0; y < resolution; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const Index y0 = std::min<Index>(static_cast<Index>(fy), record.height - 1), y1 = std::min(y0 + 1, record.height - 1);
    const double wy = fy - double(y0);
    const Index ny = std::min<Index>(static_cast<Index>((y + 0.5) * sy), record.height - 1);
    for (Index x = 0; x < resolution; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const Index x0 = std::min<Index>(static_cast<Index>(fx), record.width - 1), x1 = std::min(x0 + 1, record.width - 1);
      const double wx = fx - double(x0);
      for (int c = 0; c < 3; ++c) {
        const float* src = record.image.data() + c * src_hw;
        const double top = (1 - wx) * src[y0 * record.width + x0] + wx * src[y0 * record.width + x1];
        const double bottom = (1 - wx) * src[y1 * record.width + x0] + wx * src[y1 * record.width + x1];
        out.image[c * hw + y * resolution + x] = static_cast<float>((1 - wy) * top + wy * bottom);
      }
      const Index nx = std::min<Index>(static_cast<Index>((x + 0.5) * sx), record.width - 1);
      out.mask[y * resolution + x] = record.mask[ny * record.width + nx];
    }
  }
  return out;
}

SampleRecord augment(const SampleRecord& record, std::uint64_t seed, Index resolution, bool allow_flip) {
  std::mt19937_64 rng(seed);
  const bool flip = allow_flip && std::bernoulli_distribution(0.5)(rng);
  SampleRecord out = record;
  if (flip) {
    const Index h = record.height, w = record.width;
    for (Index y = 0; y < h; ++y) {
      for (int c = 0; c < 3; ++c) {
        float* row = out.image.data() + c * h * w + y * w;
        std::reverse(row, row + w);
      }
      std::reverse(out.mask.begin() + y * w, out.mask.begin() + (y + 1) * w);
    }
  }
  return resize_record(out, resolution);
}

template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<const SampleRecord*>& records) {
  if (records.empty()) throw ShapeError("make_batch: no records");
  const Index b = static_cast<Index>(records.size()), h = records[0]->height, w = records[0]->width;
  Batch<Scalar> batch{Tensor<Scalar>({b, 3, h, w}), LabelBatch{b, h, w, {}}, {}};
  batch.labels.labels.reserve(static_cast<std::size_t>(b * h * w));
  for (Index n = 0; n < b; ++n) {
    const auto& r = *records[n];
    if (r.height != h || r.width != w) {
      throw ShapeError("make_batch: record " + r.id + " is " + std::to_string(r.height) + "x" +
                       std::to_string(r.width) + ", expected " + std::to_string(h) + "x" + std::to_string(w));
    }
    for (Index i = 0; i < 3 * h * w; ++i) batch.images[n * 3 * h * w + i] = static_cast<Scalar>(r.image[i]);
    batch.labels.labels.insert(batch.labels.labels.end(), r.mask.begin(), r.mask.end());
    batch.ids.push_back(r.id);
  }
  return batch;
}

template Batch<float> make_batch(const std::vector<const SampleRecord*>&);
template Batch<double> make_batch(const std::vector<const SampleRecord*>&);

}  // namespace transcues::data
