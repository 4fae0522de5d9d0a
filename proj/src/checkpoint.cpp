#include "transcues/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace transcues {
namespace {

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void i64(std::int64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    i64(static_cast<std::int64_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor<float>& t) {
    i64(t.rank());
    for (auto d : t.shape()) i64(d);
    bytes(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  }
  void named(const std::vector<std::pair<std::string, Tensor<float>>>& items) {
    i64(static_cast<std::int64_t>(items.size()));
    for (const auto& [name, t] : items) {
      str(name);
      tensor(t);
    }
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("checkpoint " + path_ + " is truncated");
  }
  std::int64_t i64() {
    std::int64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::int64_t count(std::int64_t limit = std::int64_t(1) << 40) {
    const auto v = i64();
    if (v < 0 || v > limit) throw IoError("checkpoint " + path_ + " is corrupt");
    return v;
  }
  std::string str() {
    std::string s(static_cast<std::size_t>(count()), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  Tensor<float> tensor() {
    const auto rank = count(8);
    Shape shape;
    for (std::int64_t i = 0; i < rank; ++i) shape.push_back(count());
    Tensor<float> t(shape);
    bytes(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
    return t;
  }
  std::vector<std::pair<std::string, Tensor<float>>> named() {
    std::vector<std::pair<std::string, Tensor<float>>> out(static_cast<std::size_t>(count()));
    for (auto& [name, t] : out) {
      name = str();
      t = tensor();
    }
    return out;
  }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  Writer w(out);
  w.bytes(kCheckpointMagic, std::strlen(kCheckpointMagic));
  w.str(c.config_text);
  w.i64(c.step);
  w.str(c.rng_state);
  w.i64(static_cast<std::int64_t>(c.epoch_order.size()));
  for (auto v : c.epoch_order) w.i64(v);
  w.i64(c.epoch_cursor);
  w.named(c.parameters);
  w.named(c.buffers);
  w.i64(c.optimizer_steps);
  w.i64(static_cast<std::int64_t>(c.first_moments.size()));
  for (std::size_t i = 0; i < c.first_moments.size(); ++i) {
    w.tensor(c.first_moments[i]);
    w.tensor(c.second_moments[i]);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof kCheckpointMagic] = {};
  r.bytes(magic, std::strlen(kCheckpointMagic));
  if (std::strcmp(magic, kCheckpointMagic) != 0) throw IoError(path.string() + " is not a TRANSCUES1 checkpoint");
  Checkpoint c;
  c.config_text = r.str();
  c.step = r.i64();
  c.rng_state = r.str();
  c.epoch_order.resize(static_cast<std::size_t>(r.count()));
  for (auto& v : c.epoch_order) v = r.i64();
  c.epoch_cursor = r.i64();
  c.parameters = r.named();
  c.buffers = r.named();
  c.optimizer_steps = r.i64();
  const auto moments = static_cast<std::size_t>(r.count());
  for (std::size_t i = 0; i < moments; ++i) {
    c.first_moments.push_back(r.tensor());
    c.second_moments.push_back(r.tensor());
  }
  return c;
}

}  // namespace transcues
