// vmtr simulate|reconstruct|evaluate [--config=PATH] [--key=value ...]

#include "vmtr/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Joint reconstruction, registration and super-resolution of undersampled MRI sequences"};
  app.require_subcommand(1, 1);
  app.ignore_case();
  app.set_version_flag("--version", std::string(vmtr::kVersion));

  struct Command {
    CLI::App* app = nullptr;
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::map<std::string, Command> commands;
  const std::map<std::string, std::string> about = {
      {"simulate", "write a phantom dataset"},
      {"reconstruct", "solve and write result files"},
      {"evaluate", "difference maps, determinants and metrics for a result directory"}};

  for (const auto& [name, description] : about) {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, description);
    c.app->ignore_case();
    c.app->add_option("--config", c.config, "key=value file");
    for (const std::string& key : vmtr::config_keys()) {
      std::string names = "--" + key;
      if (key.find('_') != std::string::npos) {
        std::string dashed = key;
        for (char& ch : dashed)
          if (ch == '_') ch = '-';
        names += ",--" + dashed;
      }
      c.options[key] = c.app->add_option(names, c.values[key], "config key " + key);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (auto& [name, c] : commands) {
    if (!c.app->parsed()) continue;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [key, option] : c.options)
      if (option->count() > 0) overrides.emplace_back(key, c.values[key]);
    vmtr::RunConfig cfg;
    try {
      cfg = vmtr::parse_config(c.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(c.config),
                               overrides);
    } catch (const vmtr::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 1;
    }
    return vmtr::run_command(name, cfg, std::cout, std::cerr);
  }
  return 1;
}
