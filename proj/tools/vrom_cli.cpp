#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vrom/pipeline.hpp"

namespace {

using namespace vrom;
using namespace vrom::pipeline;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig c;
  try {
    c = g.config_path.empty() ? config_from_json(json::object()) : load_config(g.config_path);
    if (g.seed) c.seed = *g.seed;
    if (!g.out.empty()) c.out = g.out;
    c.validate();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  return c;
}

void print_summary(const ValidationReport& report) {
  const auto j = summary_json(report);
  for (const auto& [method, m] : j.at("methods").items()) {
    std::cout << method << ": " << m.at("points").get<std::size_t>() << " validation points";
    const auto& med = m.at("median");
    for (const char* key : {"sine_linear_rel_rms", "sine_nonlinear_rel_rms"})
      if (!med.at(key).is_null()) std::cout << ", median " << key << " = " << med.at(key).get<double>();
    std::cout << "\n";
  }
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : io::split_fields(text)) out.push_back(io::parse_double(f));
  return out;
}

/// Kernels from a kernel JSON file, or predicted at (mach, alpha0) by a trained model.
KernelSet resolve_kernels(const RunConfig& c, const std::string& kernel_file, const std::string& method,
                          std::optional<double> mach, std::optional<double> alpha0, std::optional<double> steady_cl) {
  if (!kernel_file.empty()) return kernel_set_from_json(read_json(kernel_file));
  require(mach && alpha0, "either --kernels or both --mach and --alpha0 are required");
  const auto models = load_models(Layout{c.out}.models());
  auto p = ParameterPoint::make(*mach, *alpha0);
  p.steady_cl = steady_cl;
  if (!models.inside(*mach, *alpha0))
    std::cerr << "warning: query (M=" << *mach << ", alpha0=" << *alpha0
              << ") lies outside the training box; extrapolating\n";
  return models.predict(method, models.complete(p));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric Volterra reduced-order models: identification, interpolation and reconstruction"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");

  auto* gen = app.add_subcommand("gen", "Sample the parameter box and simulate identification steps");

  auto* identify = app.add_subcommand("identify", "Identify kernels for every point of a dataset");
  std::string data_dir;
  identify->add_option("--data", data_dir, "Dataset directory with manifest.json (default: <out>/signals)");

  auto* train = app.add_subcommand("train", "Train the kernel interpolators");
  auto* report = app.add_subcommand("report", "Score the validation subset from persisted artifacts");

  std::string method = "gpr", kernel_file, output_file, input_file;
  std::optional<double> mach, alpha0, steady_cl;
  auto* predict = app.add_subcommand("predict", "Predict kernels at a parameter point");
  predict->add_option("--mach", mach, "Mach number")->required();
  predict->add_option("--alpha0", alpha0, "Mean angle of attack in degrees")->required();
  predict->add_option("--steady-cl", steady_cl, "Steady lift coefficient (default: interpolated)");
  predict->add_option("--method", method, "Interpolator")->check(CLI::IsMember({"gpr", "fcnn"}));
  predict->add_option("-o,--output", output_file, "Kernel JSON destination (default: stdout)");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct the response to an input signal");
  recon->add_option("--input", input_file, "Input signal CSV (tau,value) in degrees")->required()->check(CLI::ExistingFile);
  recon->add_option("--kernels", kernel_file, "Kernel JSON file")->check(CLI::ExistingFile);
  recon->add_option("--mach", mach, "Mach number (with a trained model)");
  recon->add_option("--alpha0", alpha0, "Mean angle of attack in degrees (with a trained model)");
  recon->add_option("--steady-cl", steady_cl, "Steady lift coefficient (default: interpolated)");
  recon->add_option("--method", method, "Interpolator")->check(CLI::IsMember({"gpr", "fcnn"}));
  recon->add_option("-o,--output", output_file, "Response CSV destination")->required();

  SweepSpec spec;
  std::string machs_text, alphas_text, sweep_dir;
  auto* sweep = app.add_subcommand("sweep", "Reconstruct responses over a Mach x alpha0 grid");
  sweep->add_option("--machs", machs_text, "Comma-separated Mach numbers")->required();
  sweep->add_option("--alpha0s", alphas_text, "Comma-separated mean angles in degrees")->required();
  sweep->add_option("--input", spec.input, "step or harmonic")->check(CLI::IsMember({"step", "harmonic"}));
  sweep->add_option("--amplitude", spec.amplitude, "Step size or harmonic amplitude in degrees");
  sweep->add_option("--reduced-frequency", spec.reduced_frequency, "Harmonic reduced frequency");
  sweep->add_option("--steps", spec.n_steps, "Signal length in samples (default: memory depth)");
  sweep->add_option("--method", spec.method, "Interpolator")->check(CLI::IsMember({"gpr", "fcnn"}));
  sweep->add_option("--dir", sweep_dir, "Destination directory (default: <out>/sweep)");

  auto* run_all = app.add_subcommand("run-all", "Run the full procedure: gen, identify, train, report");

  auto* ingest = app.add_subcommand("ingest", "Ingest an external dataset, identify its kernels and split it");
  ingest->add_option("--data", data_dir, "Dataset directory with manifest.json")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const RunConfig c = resolve_config(g);
    const Layout layout{c.out};
    if (*gen) {
      const auto plan = stage_gen(c);
      write_json(layout.config(), to_json(c));
      std::cout << "generated " << plan.points.size() << " points in " << layout.root.string() << "\n";
    } else if (*identify) {
      const auto kernels = stage_identify(c, data_dir.empty() ? layout.signals() : fs::path(data_dir));
      std::cout << "identified " << kernels.size() << " kernel sets\n";
    } else if (*train) {
      const auto b = stage_train(c);
      std::cout << "trained models: " << bundle_manifest_json(b).at("methods").dump() << "\n";
    } else if (*report) {
      print_summary(stage_report(c));
    } else if (*predict) {
      const auto k = resolve_kernels(c, "", method, mach, alpha0, steady_cl);
      const auto text = to_json(k).dump(2) + "\n";
      if (output_file.empty()) std::cout << text;
      else io::write_file(output_file, text);
    } else if (*recon) {
      const auto k = resolve_kernels(c, kernel_file, method, mach, alpha0, steady_cl);
      const auto u = read_signal(input_file);
      require(std::abs(u.grid.dt - k.dt) <= 1e-9 * k.dt, "input dt differs from the kernel dt");
      write_signal(output_file, reconstruct(k, u));
    } else if (*sweep) {
      spec.machs = parse_list(machs_text);
      spec.alpha0s = parse_list(alphas_text);
      std::vector<std::string> warnings;
      const auto cases = sweep_reconstruct(load_models(layout.models()), spec,
                                           sweep_dir.empty() ? layout.root / "sweep" : fs::path(sweep_dir), &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "wrote " << cases.size() << " sweep cases\n";
    } else if (*run_all) {
      print_summary(run_algorithm1(c));
    } else if (*ingest) {
      const auto warnings = ingest_and_identify(c, data_dir);
      for (const auto& w : warnings) std::cerr << "warning: [ingest] " << w << "\n";
      std::cout << "ingested " << read_point_index(layout).points.size() << " points\n";
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: [" << stage << "] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
