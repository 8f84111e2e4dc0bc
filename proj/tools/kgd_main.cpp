// kgd: run, validate and report the Klein-Gordon diagonalization pipeline.
// Exit codes: 0 all checks pass, 1 a check or stage failed, 2 configuration error.

#include "kgd/cache.hpp"
#include "kgd/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

constexpr int kExitPass = 0, kExitFail = 1, kExitConfig = 2;

void print_config_error(const kgd::ConfigError& e) {
  std::cerr << "configuration error:\n";
  for (const std::string& v : e.violations()) std::cerr << "  - " << v << "\n";
}

kgd::RunConfig load(const std::string& path, const std::string& out_override, const std::string& cache_policy) {
  kgd::RunConfig cfg = path.empty() ? kgd::RunConfig{} : kgd::load_config(path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (!cache_policy.empty()) cfg.cache_policy = cache_policy;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Klein-Gordon diagonalization diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kgd::artifact_version());

  std::string config_path, out_dir, cache_policy;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run the pipeline and write bundle.json, CSVs and plots.gp");
  run->add_option("config", config_path, "TOML config (defaults when omitted)")->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_dir, "Output directory (overrides [output] dir)");
  run->add_option("--cache", cache_policy, "Cache policy (overrides [cache] policy)")
      ->check(CLI::IsMember({"off", "read", "readwrite"}));
  run->add_flag("-q,--quiet", quiet, "Only print the verdict");

  auto* validate = app.add_subcommand("validate", "Parse and validate a config, print the resolved config");
  validate->add_option("config", config_path, "TOML config")->required()->check(CLI::ExistingFile);

  app.add_subcommand("presets", "List scenario presets and their default parameters");

  std::string bundle_path;
  auto* report = app.add_subcommand("report", "Summarize a bundle.json written by 'run'");
  report->add_option("bundle", bundle_path, "Path to bundle.json or its directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfig;
  }

  try {
    if (app.got_subcommand("presets")) {
      std::cout << "environment: " << kgd::kCacheDirEnv << " overrides the cache directory\n\n";
      for (const std::string& name : kgd::preset_names()) {
        std::cout << name;
        for (const auto& [k, v] : kgd::preset_defaults(name)) std::cout << "  " << k << "=" << v;
        std::cout << "\n";
      }
      return kExitPass;
    }
    if (app.got_subcommand("validate")) {
      const kgd::RunConfig cfg = kgd::load_config(config_path);
      std::cout << "# config hash " << kgd::hash_hex(cfg.hash()) << "\n" << cfg.to_toml();
      return kExitPass;
    }
    if (app.got_subcommand("report")) {
      std::filesystem::path p(bundle_path);
      if (std::filesystem::is_directory(p)) p /= "bundle.json";
      const kgd::DiagnosticsBundle b = kgd::load_bundle(p.string());
      std::cout << kgd::bundle_summary(b);
      return b.pass() ? kExitPass : kExitFail;
    }
    // run
    const kgd::RunConfig cfg = load(config_path, out_dir, cache_policy);
    kgd::PipelineOptions opts;
    opts.log = quiet ? nullptr : &std::cerr;
    const kgd::DiagnosticsBundle b = kgd::run_pipeline(cfg, opts);
    if (!quiet) std::cout << kgd::bundle_summary(b);
    else std::cout << (b.pass() ? "pass" : "FAIL") << "\n";
    std::cout << "artifacts: " << cfg.output_dir << "\n";
    return b.pass() ? kExitPass : kExitFail;
  } catch (const kgd::ConfigError& e) {
    print_config_error(e);
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
}
