#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opbn/cli.hpp"
#include "opbn/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Oracle-prioritized belief network experiments"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "runs/default";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config with flat dotted keys")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override one key, key=value (repeatable)")->take_all();
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.fallthrough();

  const char* help[] = {"Generate the dataset bundle",
                        "Sample training and held-out triplet corpora",
                        "Train the configured variant",
                        "Probe and triplet-prediction report",
                        "Decode samples from the prior",
                        "Splice latents of image pairs by mask",
                        "Print and write posterior-mean masks",
                        "Finite-difference check of the objective gradient"};
  const auto& names = opbn::command_names();
  for (std::size_t k = 0; k < names.size(); ++k) app.add_subcommand(names[k], help[k]);

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = opbn::parse_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path),
                                        overrides, seed);
    return opbn::run_command(command, cfg, out, std::cout);
  } catch (const opbn::Error& e) {
    std::cerr << "opbn " << command << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "opbn " << command << ": unexpected failure: " << e.what() << '\n';
    return 3;
  }
}
