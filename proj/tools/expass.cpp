#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "expass/experiment.hpp"

namespace {

int dispatch(const std::string& command, const std::string& config_path,
             const std::string& out_override) {
  expass::ExperimentConfig cfg = expass::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (command == "train") return expass::cmd_train(cfg);
  if (command == "oversmoothing") return expass::cmd_oversmoothing(cfg);
  if (command == "ablate-topk") return expass::cmd_ablate_topk(cfg);
  if (command == "explain") return expass::cmd_explain(cfg);
  if (command == "theory") return expass::cmd_theory(cfg);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"explanation-directed message passing experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  for (const char* name : {"train", "oversmoothing", "ablate-topk", "explain", "theory"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON experiment config")->required();
    sub->add_option("--out", out_override, "override the config's out_dir");
  }

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return dispatch(command, config_path, out_override);
  } catch (const expass::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const expass::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
