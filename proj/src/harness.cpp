#include "transcues/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "transcues/boundary.hpp"

namespace transcues {
namespace {

std::string one_line(std::string text) {
  while (!text.empty() && text.back() == '\n') text.pop_back();
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<float>>> export_parameters(const ParameterStore<Scalar>& store) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& p : store.parameters()) out.emplace_back(p.name, p.var.value().template cast<float>());
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<float>>> export_buffers(const ParameterStore<Scalar>& store) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& b : store.buffers()) out.emplace_back(b.name, b.value.template cast<float>());
  return out;
}

void check_entry(const std::string& kind, const std::string& name, const Shape& shape,
                 const std::pair<std::string, Tensor<float>>& stored) {
  if (stored.first != name || stored.second.shape() != shape) {
    throw IoError("checkpoint " + kind + " " + stored.first + " " + to_string(stored.second.shape()) +
                  " does not match model " + kind + " " + name + " " + to_string(shape));
  }
}

void import_state(ParameterStore<float>& store, const Checkpoint& c) {
  auto& params = store.parameters();
  if (params.size() != c.parameters.size()) {
    throw IoError("checkpoint holds " + std::to_string(c.parameters.size()) + " parameters, model has " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    check_entry("parameter", params[i].name, params[i].var.shape(), c.parameters[i]);
    params[i].var.value_mut() = c.parameters[i].second;
  }
  auto& buffers = store.buffers();
  if (buffers.size() != c.buffers.size()) throw IoError("checkpoint buffer count does not match the model");
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    check_entry("buffer", buffers[i].name, buffers[i].value.shape(), c.buffers[i]);
    buffers[i].value = c.buffers[i].second;
  }
}

// Softmax probabilities of one image, resized to (height, width).
Tensor<float> image_probabilities(const Tensor<float>& probs, Index n, Index height, Index width) {
  const Index c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  Tensor<float> one({1, c, h, w});
  std::copy_n(probs.data() + n * c * h * w, c * h * w, one.data());
  if (h == height && w == width) return one;
  return ops::resize_bilinear(Var<float>(one), height, width).value();
}

data::SampleRecord record_from_image(const data::Image8& image) {
  data::SampleRecord r;
  r.id = "input";
  r.height = image.height;
  r.width = image.width;
  r.image.resize(static_cast<std::size_t>(3 * image.height * image.width));
  r.mask.assign(static_cast<std::size_t>(image.height * image.width), 0);
  const Index plane = image.height * image.width;
  for (Index i = 0; i < plane; ++i) {
    for (Index ch = 0; ch < 3; ++ch) r.image[ch * plane + i] = image.pixels[i * 3 + ch] / 255.0f;
  }
  return r;
}

data::Image8 gray_image(const Tensor<float>& map, Index channel) {
  data::Image8 out{map.dim(2), map.dim(3), 1, {}};
  out.pixels.resize(static_cast<std::size_t>(out.height * out.width));
  for (Index y = 0; y < out.height; ++y) {
    for (Index x = 0; x < out.width; ++x) {
      const float v = std::clamp(map.at(0, channel, y, x), 0.0f, 1.0f);
      out.pixels[y * out.width + x] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace

std::string format_step_log(const StepLog& e) {
  std::ostringstream out;
  out << std::setprecision(9) << "step=" << e.step << " loss.total=" << e.loss.total
      << " loss.semantic=" << e.loss.semantic << " loss.boundary=" << e.loss.boundary
      << " loss.reflection=" << e.loss.reflection;
  return out.str();
}

std::set<std::int32_t> resolve_reflective_ids(const ExperimentConfig& config, const data::ClassTable& classes) {
  if (config.reflective_ids) return *config.reflective_ids;
  return classes.reflective_ids();
}

Trainer::Trainer(ExperimentConfig config, const data::Dataset& train, const data::Dataset* val)
    : config_(std::move(config)), train_(&train), val_(val), optimizer_(config_.optim) {
  config_.validate();
  for (const auto* set : {train_, val_}) {
    if (set && set->classes.n_class() != config_.model.n_class) {
      throw ConfigError("dataset has " + std::to_string(set->classes.n_class()) + " classes but model.n_class is " +
                        std::to_string(config_.model.n_class));
    }
  }
  if (train_->records.empty()) throw DataError("training set is empty");
  model_ = std::make_unique<TransCuesModel<float>>(config_.model);
  loss_settings_ = {config_.loss, config_.boundary_target, resolve_reflective_ids(config_, train_->classes)};
  rng_.seed(data::scene_seed(config_.model.seed, 0x74726169ULL));
}

std::vector<std::size_t> Trainer::next_batch() {
  const auto n = static_cast<std::int64_t>(train_->records.size());
  std::vector<std::size_t> out;
  while (out.size() < static_cast<std::size_t>(config_.batch_size)) {
    if (cursor_ >= static_cast<std::int64_t>(order_.size())) {
      order_.resize(static_cast<std::size_t>(n));
      std::iota(order_.begin(), order_.end(), std::int64_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(static_cast<std::size_t>(order_[static_cast<std::size_t>(cursor_++)]));
  }
  return out;
}

LossBreakdown Trainer::step() {
  const auto indices = next_batch();
  const Index res = config_.model.resolution;
  std::vector<data::SampleRecord> samples;
  samples.reserve(indices.size());
  for (auto i : indices) {
    const auto& record = train_->records[i];
    samples.push_back(config_.augment ? data::augment(record, rng_(), res) : data::resize_record(record, res));
  }
  std::vector<const data::SampleRecord*> pointers;
  for (const auto& s : samples) pointers.push_back(&s);
  auto batch = data::make_batch<float>(pointers);

  auto& store = model_->store();
  model_->set_training(true);
  store.zero_grad();
  const auto out = model_->forward(Var<float>(std::move(batch.images)));
  const auto loss = compute_loss(out, batch.labels, loss_settings_);
  if (!std::isfinite(loss.breakdown.total)) {
    const auto dump = std::filesystem::path(config_.output_dir) / "nonfinite_batch.txt";
    std::filesystem::create_directories(dump.parent_path());
    std::ofstream f(dump);
    f << format_step_log({step_, loss.breakdown}) << "\nbatch_ids=" << join_ids(batch.ids) << "\n";
    throw NumericError("non-finite loss at step " + std::to_string(step_) + " on batch " + join_ids(batch.ids) +
                       "; details in " + dump.string());
  }
  loss.total.backward();
  optimizer_.step(store.parameters());
  ++step_;
  return loss.breakdown;
}

std::vector<StepLog> Trainer::run(std::ostream* log) {
  std::vector<StepLog> history;
  while (step_ < config_.max_steps) {
    const auto breakdown = step();
    history.push_back({step_, breakdown});
    if (log) *log << format_step_log(history.back()) << '\n';
    if (val_ && log && config_.val_every > 0 && step_ % config_.val_every == 0) {
      *log << "eval step=" << step_ << ' ' << one_line(evaluate(*model_, *val_, config_.batch_size).to_key_value())
           << '\n';
    }
  }
  return history;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_text = config_.to_text();
  c.step = step_;
  std::ostringstream rng;
  rng << rng_;
  c.rng_state = rng.str();
  c.epoch_order = order_;
  c.epoch_cursor = cursor_;
  c.parameters = export_parameters(model_->store());
  c.buffers = export_buffers(model_->store());
  c.optimizer_steps = optimizer_.steps();
  c.first_moments = optimizer_.first_moments();
  c.second_moments = optimizer_.second_moments();
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  import_state(model_->store(), c);
  std::istringstream rng(c.rng_state);
  rng >> rng_;
  if (!rng) throw IoError("checkpoint sampler state is unreadable");
  step_ = c.step;
  order_ = c.epoch_order;
  cursor_ = c.epoch_cursor;
  if (c.first_moments.size() != c.second_moments.size() ||
      (!c.first_moments.empty() && c.first_moments.size() != model_->store().parameters().size())) {
    throw IoError("checkpoint optimizer state does not match the model");
  }
  optimizer_.restore(c.optimizer_steps, c.first_moments, c.second_moments);
}

metrics::EvalReport evaluate(TransCuesModel<float>& model, const data::Dataset& dataset, int batch_size) {
  if (dataset.classes.n_class() != model.config().n_class) {
    throw ConfigError("dataset has " + std::to_string(dataset.classes.n_class()) + " classes but the model predicts " +
                      std::to_string(model.config().n_class));
  }
  const bool was_training = model.store().training();
  model.set_training(false);
  NoGradGuard no_grad;
  const Index res = model.config().resolution;
  metrics::EvalAccumulator acc(model.config().n_class);
  const auto n = dataset.records.size();
  for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(std::max(batch_size, 1))) {
    const auto end = std::min(n, begin + static_cast<std::size_t>(std::max(batch_size, 1)));
    std::vector<data::SampleRecord> resized;
    for (auto i = begin; i < end; ++i) resized.push_back(data::resize_record(dataset.records[i], res));
    std::vector<const data::SampleRecord*> pointers;
    for (const auto& r : resized) pointers.push_back(&r);
    const auto batch = data::make_batch<float>(pointers);
    const auto probs = ops::softmax_channels(model.forward(Var<float>(batch.images)).logits).value();
    for (auto i = begin; i < end; ++i) {
      const auto& record = dataset.records[i];
      const auto p = image_probabilities(probs, static_cast<Index>(i - begin), record.height, record.width);
      metrics::LabelMap pred(record.height, record.width), gt(record.height, record.width);
      metrics::Map fg(record.height, record.width);
      for (Index y = 0; y < record.height; ++y) {
        for (Index x = 0; x < record.width; ++x) {
          Index best = 0;
          for (Index c = 1; c < p.dim(1); ++c) {
            if (p.at(0, c, y, x) > p.at(0, best, y, x)) best = c;
          }
          pred(y, x) = static_cast<std::int32_t>(best);
          fg(y, x) = 1.0 - p.at(0, 0, y, x);
          gt(y, x) = record.mask[static_cast<std::size_t>(y * record.width + x)];
        }
      }
      acc.add(pred, fg, gt);
    }
  }
  model.set_training(was_training);
  return acc.report();
}

std::unique_ptr<TransCuesModel<float>> model_from_checkpoint(const Checkpoint& c, ExperimentConfig* config) {
  auto cfg = ExperimentConfig::from_text(c.config_text);
  auto model = std::make_unique<TransCuesModel<float>>(cfg.model);
  import_state(model->store(), c);
  if (config) *config = std::move(cfg);
  return model;
}

std::vector<StepLog> train(const ExperimentConfig& config, std::ostream* log, const std::filesystem::path& resume) {
  config.validate();
  if (config.data_root.empty()) throw ConfigError("data.root is not set");
  const auto train_set = data::load_dataset(config.data_root);
  std::optional<data::Dataset> val_set;
  if (!config.val_root.empty()) val_set = data::load_dataset(config.val_root);

  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config.txt");
    echo << config.to_text();
    if (!echo) throw IoError("cannot write " + (out_dir / "config.txt").string());
  }

  Trainer trainer(config, train_set, val_set ? &*val_set : nullptr);
  if (!resume.empty()) trainer.restore(load_checkpoint(resume));

  std::ofstream file(out_dir / "train_log.txt", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!file) throw IoError("cannot write " + (out_dir / "train_log.txt").string());
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return 0;
      if (a) a->sputc(static_cast<char>(c));
      b->sputc(static_cast<char>(c));
      return c;
    }
  } tee;
  tee.a = log ? log->rdbuf() : nullptr;
  tee.b = file.rdbuf();
  std::ostream both(&tee);

  const auto history = trainer.run(&both);
  save_checkpoint(out_dir / "checkpoint.bin", trainer.checkpoint());
  const auto& final_set = val_set ? *val_set : train_set;
  const auto report = evaluate(trainer.model(), final_set, config.batch_size);
  std::ofstream(out_dir / "metrics.txt") << report.to_key_value();
  both << "final " << (val_set ? "val " : "train ") << one_line(report.to_key_value()) << '\n';
  both.flush();
  return history;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(6);
  for (const auto& e : entries) {
    out << (e.pass ? "ok   " : "FAIL ") << "module=" << e.module << " param=" << e.parameter << " element=" << e.element
        << " analytic=" << e.analytic << " numeric=" << e.numeric << " rel_error=" << e.rel_error << '\n';
  }
  out << "gradcheck=" << (pass ? "pass" : "fail") << '\n';
  return out.str();
}

GradcheckReport gradcheck(const ExperimentConfig& config, const GradcheckOptions& options) {
  config.validate();
  if (options.n_parameters <= 0 || options.step <= 0 || options.batch <= 0) {
    throw ConfigError("gradcheck needs a positive parameter count, step and batch");
  }
  TransCuesModel<double> model(config.model);
  model.set_training(true);

  data::SynthParams synth;
  synth.image_size = config.model.resolution;
  synth.seed = options.seed;
  std::vector<data::SampleRecord> records;
  for (int i = 0; i < options.batch; ++i) {
    auto scene = data::render_scene(synth, i);
    data::SampleRecord r;
    r.id = data::scene_id(i);
    r.height = r.width = scene.size;
    r.image = std::move(scene.image);
    r.mask = std::move(scene.mask);
    for (auto& m : r.mask) m %= config.model.n_class;
    records.push_back(std::move(r));
  }
  std::vector<const data::SampleRecord*> pointers;
  for (const auto& r : records) pointers.push_back(&r);
  const auto batch = data::make_batch<double>(pointers);
  const Var<double> images(batch.images);
  const LossSettings settings{config.loss, config.boundary_target,
                              resolve_reflective_ids(config, data::synthetic_classes())};
  const auto loss_value = [&] { return compute_loss(model.forward(images), batch.labels, settings).breakdown.total; };

  auto& params = model.store().parameters();
  model.store().zero_grad();
  compute_loss(model.forward(images), batch.labels, settings).total.backward();

  // Module = first path component. Modules whose parameters receive no
  // gradient under these weights are still sampled: their derivative must
  // then vanish numerically too.
  std::vector<std::string> modules;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto module = params[i].name.substr(0, params[i].name.find('.'));
    if (!members.count(module)) modules.push_back(module);
    members[module].push_back(i);
  }

  std::mt19937_64 rng(data::scene_seed(options.seed, 0x67726164ULL));
  GradcheckReport report;
  report.pass = true;
  for (int k = 0; k < options.n_parameters; ++k) {
    const auto& module = modules[static_cast<std::size_t>(k) % modules.size()];
    const auto& group = members[module];
    auto& p = params[group[std::uniform_int_distribution<std::size_t>(0, group.size() - 1)(rng)]];
    // Among a few random elements take the one with the largest analytic
    // derivative, so the check is not dominated by round-off.
    Index element = 0;
    double analytic = 0;
    for (int trial = 0; trial < 8; ++trial) {
      const Index e = std::uniform_int_distribution<Index>(0, p.var.size() - 1)(rng);
      const double g = p.var.has_grad() ? p.var.grad()[e] : 0.0;
      if (trial == 0 || std::abs(g) > std::abs(analytic)) {
        element = e;
        analytic = g;
      }
    }
    double& w = p.var.value_mut()[element];
    const double saved = w;
    double plus, minus;
    {
      NoGradGuard no_grad;
      w = saved + options.step;
      plus = loss_value();
      w = saved - options.step;
      minus = loss_value();
    }
    w = saved;
    const double numeric = (plus - minus) / (2 * options.step);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    GradcheckEntry entry{module, p.name, element, analytic, numeric, rel, rel <= options.tolerance};
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::vector<AblationRow> module_protocol(const LossWeights& w) {
  return {
      {"baseline", false, false, ModuleOrder::bfe_then_rfe, {w.alpha, 0.0, 0.0}},
      {"rfe", false, true, ModuleOrder::bfe_then_rfe, {w.alpha, 0.0, w.gamma}},
      {"bfe", true, false, ModuleOrder::bfe_then_rfe, {w.alpha, w.beta, 0.0}},
      {"both", true, true, ModuleOrder::bfe_then_rfe, w},
  };
}

std::vector<AblationRow> placement_protocol(const LossWeights& w) {
  std::vector<AblationRow> rows;
  for (auto order : {ModuleOrder::bfe_then_rfe, ModuleOrder::rfe_then_bfe, ModuleOrder::parallel}) {
    rows.push_back({std::string(to_string(order)), true, true, order, w});
  }
  return rows;
}

std::string AblationResult::to_key_value() const {
  std::ostringstream out;
  out << std::setprecision(8);
  for (const auto& r : runs) {
    out << "run row=" << r.row << " seed=" << r.seed << " miou=" << r.miou << " final_loss=" << r.final_loss
        << " finite=" << r.finite << '\n';
  }
  for (const auto& s : rows) {
    out << "row=" << s.row << " median_miou=" << s.median_miou << " runs=" << s.mious.size()
        << " finite=" << s.all_finite << '\n';
  }
  return out.str();
}

const AblationSummary& AblationResult::row(const std::string& name) const {
  for (const auto& s : rows) {
    if (s.row == name) return s;
  }
  throw ConfigError("no ablation row named " + name);
}

AblationResult ablate(const ExperimentConfig& base, const std::vector<AblationRow>& rows,
                      const std::vector<std::uint64_t>& seeds, const data::Dataset& train, const data::Dataset* val,
                      std::ostream* log) {
  AblationResult result;
  for (const auto& row : rows) {
    AblationSummary summary;
    summary.row = row.name;
    for (auto seed : seeds) {
      auto cfg = base;
      cfg.model.bfe_enabled = row.bfe_enabled;
      cfg.model.rfe_enabled = row.rfe_enabled;
      cfg.model.order = row.order;
      cfg.model.seed = seed;
      cfg.loss = row.weights;
      Trainer trainer(cfg, train, nullptr);
      AblationRun run{row.name, seed, 0.0, 0.0, true};
      try {
        const auto history = trainer.run();
        run.final_loss = history.empty() ? 0.0 : history.back().loss.total;
        run.miou = evaluate(trainer.model(), val ? *val : train, cfg.batch_size).miou;
      } catch (const NumericError& e) {
        run.finite = false;
        run.final_loss = std::nan("");
        if (log) *log << "# " << e.what() << '\n';
      }
      summary.mious.push_back(run.miou);
      summary.all_finite = summary.all_finite && run.finite;
      if (log) {
        *log << std::setprecision(8) << "run row=" << run.row << " seed=" << run.seed << " miou=" << run.miou
             << " final_loss=" << run.final_loss << " finite=" << run.finite << std::endl;
      }
      result.runs.push_back(run);
    }
    summary.median_miou = median(summary.mious);
    result.rows.push_back(std::move(summary));
  }
  return result;
}

PredictResult predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                      const std::filesystem::path& out_dir) {
  const auto model = model_from_checkpoint(load_checkpoint(checkpoint));
  const auto input = record_from_image(data::read_rgb_png(image));
  const auto resized = data::resize_record(input, model->config().resolution);
  const auto batch = data::make_batch<float>({&resized});

  model->set_training(false);
  NoGradGuard no_grad;
  const auto out = model->forward(Var<float>(batch.images));
  const Index h = input.height, w = input.width;
  const auto probs = image_probabilities(ops::softmax_channels(out.logits).value(), 0, h, w);

  std::filesystem::create_directories(out_dir);
  PredictResult result;
  data::Image8 mask{h, w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      Index best = 0;
      for (Index c = 1; c < probs.dim(1); ++c) {
        if (probs.at(0, c, y, x) > probs.at(0, best, y, x)) best = c;
      }
      mask.pixels[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint8_t>(best);
    }
  }
  result.mask = out_dir / "mask.png";
  data::write_label_png(result.mask, mask);

  if (out.boundary_logits.defined()) {
    const auto map = ops::resize_bilinear(ops::sigmoid(out.boundary_logits), h, w).value();
    result.boundary = out_dir / "boundary.png";
    data::write_gray_png(result.boundary, gray_image(map, 0));
  }
  if (out.reflection_logits.defined()) {
    const auto map = ops::resize_bilinear(ops::softmax_channels(out.reflection_logits), h, w).value();
    result.reflection = out_dir / "reflection.png";
    data::write_gray_png(result.reflection, gray_image(map, 1));
  }
  return result;
}

}  // namespace transcues
