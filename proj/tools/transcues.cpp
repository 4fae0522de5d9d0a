#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "transcues/harness.hpp"

using namespace transcues;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key=value config file");
    cmd->add_option("--set", overrides, "override, e.g. --set loss.beta=0 (repeatable)");
  }
  ExperimentConfig resolve() const { return load_config(file, overrides); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TransCues transparent-object segmentation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "render the synthetic glass benchmark");
  data::SynthParams synth_params;
  std::string synth_out;
  synth->add_option("--n", synth_params.n_images, "number of scenes");
  synth->add_option("--size", synth_params.image_size, "image side in pixels");
  synth->add_option("--seed", synth_params.seed, "master seed");
  synth->add_option("--glass-probability", synth_params.glass_probability, "chance that later objects are glass");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigArgs train_args;
  std::string resume;
  train_args.attach(train_cmd);
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_checkpoint, eval_data;
  bool eval_table = false;
  eval_cmd->add_option("--checkpoint", eval_checkpoint)->required();
  eval_cmd->add_option("--data", eval_data, "dataset root (images/, masks/, classes.txt)")->required();
  eval_cmd->add_flag("--table", eval_table, "human-readable output instead of key=value");

  auto* predict_cmd = app.add_subcommand("predict", "export mask, boundary and reflection maps for one image");
  std::string predict_checkpoint, predict_image, predict_out;
  predict_cmd->add_option("--checkpoint", predict_checkpoint)->required();
  predict_cmd->add_option("--image", predict_image)->required();
  predict_cmd->add_option("--out", predict_out)->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full loss in double precision");
  ConfigArgs grad_args;
  GradcheckOptions grad_options;
  grad_args.attach(grad_cmd);
  grad_cmd->add_option("--params", grad_options.n_parameters, "parameters to sample");
  grad_cmd->add_option("--step", grad_options.step, "finite-difference step");
  grad_cmd->add_option("--tolerance", grad_options.tolerance, "maximum relative error");
  grad_cmd->add_option("--seed", grad_options.seed, "sampling and scene seed");

  auto* ablate_cmd = app.add_subcommand("ablate", "train each protocol row under the same budget");
  ConfigArgs ablate_args;
  std::string protocol = "module";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ablate_args.attach(ablate_cmd);
  ablate_cmd->add_option("--protocol", protocol, "module | placement")
      ->check(CLI::IsMember({"module", "placement"}));
  ablate_cmd->add_option("--seeds", seeds, "seeds per row")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      data::generate_synthetic(synth_params, synth_out);
      std::cout << "wrote " << synth_params.n_images << " scenes to " << synth_out << '\n';
    } else if (*train_cmd) {
      train(train_args.resolve(), &std::cout, resume);
    } else if (*eval_cmd) {
      auto model = model_from_checkpoint(load_checkpoint(eval_checkpoint));
      const auto report = evaluate(*model, data::load_dataset(eval_data));
      std::cout << (eval_table ? report.to_table() : report.to_key_value());
    } else if (*predict_cmd) {
      const auto r = predict(predict_checkpoint, predict_image, predict_out);
      std::cout << "mask=" << r.mask.string() << '\n';
      std::cout << "boundary=" << (r.boundary.empty() ? "none" : r.boundary.string()) << '\n';
      std::cout << "reflection=" << (r.reflection.empty() ? "none" : r.reflection.string()) << '\n';
    } else if (*grad_cmd) {
      const auto report = gradcheck(grad_args.resolve(), grad_options);
      std::cout << report.to_text();
      return report.pass ? 0 : 1;
    } else if (*ablate_cmd) {
      const auto config = ablate_args.resolve();
      if (config.data_root.empty()) throw ConfigError("data.root is not set");
      const auto train_set = data::load_dataset(config.data_root);
      std::optional<data::Dataset> val_set;
      if (!config.val_root.empty()) val_set = data::load_dataset(config.val_root);
      const auto rows = protocol == "module" ? module_protocol(config.loss) : placement_protocol(config.loss);
      const auto result = ablate(config, rows, seeds, train_set, val_set ? &*val_set : nullptr, &std::cerr);
      std::cout << result.to_key_value();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
