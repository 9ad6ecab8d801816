#include "cloudtomo/config.hpp"
#include "cloudtomo/errors.hpp"
#include "cloudtomo/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNumericalError = 3 };

int fail(const std::string& output, const std::string& stage, const char* kind, const std::string& message,
         int code) {
  std::cerr << "cloudtomo " << stage << ": " << kind << " error: " << message << '\n';
  if (!output.empty()) {
    try {
      cloudtomo::write_error_record(output, stage, kind, message, code);
    } catch (const std::exception& e) {
      std::cerr << "cloudtomo: could not write error record: " << e.what() << '\n';
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Polarimetric cloud scattering tomography"};
  app.set_version_flag("--version", std::string(cloudtomo::version()));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  const std::pair<const char*, const char*> commands[] = {
      {"render", "synthesize the truth cloud and simulate measurements"},
      {"init", "grid-search the parametric initialization"},
      {"retrieve", "gradient-descent retrieval from the initialization"},
      {"evaluate", "error metrics of init and retrieved clouds against the truth"},
      {"plan-cloudbow", "plan satellite poses that sample the cloudbow"},
      {"full", "run every stage in order"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides [run] seed)");
    sub->add_option("--out", out, "output directory (overrides [run] output)");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  std::string output = out.value_or(cloudtomo::ExperimentConfig{}.output);
  try {
    cloudtomo::ExperimentConfig config = cloudtomo::load_config(config_path);
    if (seed) config.seed = *seed;
    if (out) config.output = *out;
    output = config.output;
    cloudtomo::run_stage(cloudtomo::parse_stage(stage), config);
  } catch (const cloudtomo::ConfigError& e) {
    return fail(output, stage, "config", e.what(), kConfigError);
  } catch (const cloudtomo::NumericalError& e) {
    return fail(output, stage, "numerical", e.what(), kNumericalError);
  } catch (const std::exception& e) {
    return fail(output, stage, "runtime", e.what(), kFailure);
  }
  std::cout << "cloudtomo " << stage << ": wrote " << output << '\n';
  return kOk;
}
