#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "callisto/bench.hpp"

namespace {

callisto::BenchConfig load_config(const std::string& path,
                                  const std::vector<std::string>& overrides) {
  callisto::BenchConfig config;
  if (!path.empty()) config = callisto::BenchConfig::from_file(path);
  for (const auto& kv : overrides) config.apply_override(kv);
  return config;
}

std::vector<size_t> parse_sizes(const std::string& csv) {
  std::vector<size_t> sizes;
  size_t pos = 0;
  while (pos < csv.size()) {
    const size_t comma = csv.find(',', pos);
    const std::string tok =
        csv.substr(pos, comma == std::string::npos ? csv.size() - pos
                                                   : comma - pos);
    if (!tok.empty()) sizes.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return sizes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "callisto: disk-based clustered vector search with context-aware "
      "query scheduling"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> compare_configs;
  std::string compare_output = "out";
  std::string sizes_csv = "1000,1500,2000,2500";

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--set", overrides, "override, e.g. --set cache.policy=fifo");
  };

  auto* gen = app.add_subcommand(
      "gen", "generate a synthetic corpus and a bursty query trace");
  add_common(gen);
  auto* build = app.add_subcommand(
      "build", "build the two-level index from a corpus file");
  add_common(build);
  auto* run = app.add_subcommand("run", "replay a trace and write reports");
  add_common(run);
  auto* compare = app.add_subcommand(
      "compare", "run several configs over their traces and tabulate");
  compare->add_option("--config", compare_configs, "config files to compare")
      ->required();
  compare->add_option("--set", overrides, "override applied to every config");
  compare->add_option("--output", compare_output, "combined report directory");
  auto* grouptime = app.add_subcommand(
      "grouptime", "benchmark bitmap vs hash-set grouping kernels");
  add_common(grouptime);
  grouptime->add_option("--n", sizes_csv, "comma-separated batch sizes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return callisto::cmd_gen(load_config(config_path, overrides));
    if (build->parsed())
      return callisto::cmd_build(load_config(config_path, overrides));
    if (run->parsed())
      return callisto::cmd_run(load_config(config_path, overrides));
    if (compare->parsed()) {
      std::vector<callisto::BenchConfig> configs;
      for (const auto& path : compare_configs)
        configs.push_back(load_config(path, overrides));
      return callisto::cmd_compare(configs, compare_output);
    }
    if (grouptime->parsed())
      return callisto::cmd_grouptime(load_config(config_path, overrides),
                                     parse_sizes(sizes_csv));
  } catch (const callisto::BenchError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return callisto::kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return callisto::kExitRuntime;
  }
  return 0;
}
