#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vrom/error.hpp"
#include "vrom/fcnn.hpp"
#include "vrom/gpr.hpp"
#include "vrom/identification.hpp"
#include "vrom/io.hpp"
#include "vrom/laguerre.hpp"
#include "vrom/sampling.hpp"
#include "vrom/signals.hpp"
#include "vrom/synthaero.hpp"

namespace vrom::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

/// Independent 64-bit stream seeds derived from a master seed (splitmix64 mixing).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ index);
}

/// Runs fn(i) for i in [0, n) on a small worker pool. Each index writes only
/// its own output slot, so results do not depend on scheduling. The first
/// exception (lowest index) is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// --- Configuration ---------------------------------------------------------

struct LaguerreSettings {
  bool enabled = true;
  int order = 15;
  std::optional<double> time_scale;  // unset: chosen per point by training residual
  std::size_t delay = 1;
};

struct GprSettings {
  int restarts = 5;
  bool shared_hyperparameters = true;
  double jitter = 1e-8;
  int max_iterations = 200;
};

struct FcnnSettings {
  int trials = 10;
  int max_epochs = 5000;
  int patience = 200;
  bool shared_target_scale = true;
};

struct ValidationSettings {
  double reduced_frequency = 0.3;
  double linear_amplitude = 1.0;
  double nonlinear_amplitude = 2.0;
  int settled_periods = 2;
  bool on_training_points = false;
};

struct RunConfig {
  sampling::ParameterBox box;
  std::size_t n_samples = 70;
  std::array<double, 3> split_fractions{45.0 / 70.0, 15.0 / 70.0, 10.0 / 70.0};
  double dt = 0.25;
  std::size_t n_steps = 400;
  std::size_t memory_depth = 400;
  std::vector<double> amplitudes{1.0, 2.0};
  LaguerreSettings laguerre;
  synthaero::PlantConfig plant = [] {
    synthaero::PlantConfig p;
    p.noise_sigma = std::nullopt;
    return p;
  }();
  std::string interpolator = "both";  // gpr | fcnn | both | none
  GprSettings gpr;
  FcnnSettings fcnn;
  ValidationSettings validation;
  std::uint64_t seed = 1;
  std::string out = "out";

  TimeGrid grid() const { return TimeGrid::make(dt, n_steps); }
  bool uses_gpr() const { return interpolator == "gpr" || interpolator == "both"; }
  bool uses_fcnn() const { return interpolator == "fcnn" || interpolator == "both"; }

  void validate() const {
    box.validate();
    require(n_samples >= 1, "config: n_samples must be positive");
    sampling::split_counts(n_samples, split_fractions);
    require(dt > 0.0 && n_steps >= 2, "config: grid needs dt > 0 and n_steps >= 2");
    require(memory_depth >= 1 && memory_depth <= n_steps, "config: memory_depth must lie in [1, n_steps]");
    require(amplitudes.size() >= 2 && amplitudes.size() <= 3, "config: two or three amplitudes are required");
    for (std::size_t i = 0; i < amplitudes.size(); ++i) {
      require(amplitudes[i] > 0.0, "config: amplitudes must be positive");
      if (i > 0) require(amplitudes[i] > amplitudes[i - 1], "config: amplitudes must increase strictly");
    }
    if (laguerre.enabled) {
      require(laguerre.order >= 1 && static_cast<std::size_t>(laguerre.order) <= memory_depth,
              "config: laguerre.order must lie in [1, memory_depth]");
      require(laguerre.delay < memory_depth, "config: laguerre.delay must be below memory_depth");
      require(!laguerre.time_scale || *laguerre.time_scale > 0.0, "config: laguerre.time_scale must be positive");
    }
    plant.validate();
    require(interpolator == "gpr" || interpolator == "fcnn" || interpolator == "both" || interpolator == "none",
            "config: interpolator must be one of gpr, fcnn, both, none");
    require(gpr.restarts >= 1 && gpr.jitter >= 0.0, "config: invalid gpr settings");
    require(fcnn.trials >= 1 && fcnn.max_epochs >= 1 && fcnn.patience >= 1, "config: invalid fcnn settings");
    require(validation.reduced_frequency > 0.0 && validation.settled_periods >= 1,
            "config: invalid validation settings");
    require(validation.linear_amplitude >= 0.0 && validation.nonlinear_amplitude >= 0.0,
            "config: validation amplitudes must be non-negative");
    require(!out.empty(), "config: out must be set");
  }
};

namespace detail {

/// Rejects keys outside `allowed` so that typos in config files surface.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), "config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    require(allowed.count(it.key()) > 0, "config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read_opt(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

}  // namespace detail

inline ojson to_json(const RunConfig& c) {
  ojson j;
  j["box"] = {{"mach", c.box.mach_range}, {"alpha0", c.box.alpha0_range}};
  j["n_samples"] = c.n_samples;
  j["split_fractions"] = c.split_fractions;
  j["grid"] = {{"dt", c.dt}, {"n", c.n_steps}};
  j["memory_depth"] = c.memory_depth;
  j["amplitudes"] = c.amplitudes;
  ojson lag;
  lag["enabled"] = c.laguerre.enabled;
  lag["order"] = c.laguerre.order;
  lag["time_scale"] = c.laguerre.time_scale ? ojson(*c.laguerre.time_scale) : ojson(nullptr);
  lag["delay"] = c.laguerre.delay;
  j["laguerre"] = lag;
  ojson p;
  p["cl_alpha_base"] = c.plant.cl_alpha_base;
  p["a1"] = c.plant.a1;
  p["a2"] = c.plant.a2;
  p["b1"] = c.plant.b1;
  p["b2"] = c.plant.b2;
  p["b3"] = c.plant.b3;
  p["c_nl"] = c.plant.c_nl;
  p["c_nl3"] = c.plant.c_nl3;
  p["velocity_ratio"] = c.plant.velocity_ratio;
  p["a3_range"] = c.plant.a3_range;
  p["a3_mach_span"] = c.plant.a3_mach_span;
  p["a3_alpha_span"] = c.plant.a3_alpha_span;
  p["noise_sigma"] = c.plant.noise_sigma ? ojson(*c.plant.noise_sigma) : ojson(nullptr);
  j["plant"] = p;
  j["interpolator"] = c.interpolator;
  j["gpr"] = {{"restarts", c.gpr.restarts},
              {"shared_hyperparameters", c.gpr.shared_hyperparameters},
              {"jitter", c.gpr.jitter},
              {"max_iterations", c.gpr.max_iterations}};
  j["fcnn"] = {{"trials", c.fcnn.trials}, {"max_epochs", c.fcnn.max_epochs}, {"patience", c.fcnn.patience},
               {"shared_target_scale", c.fcnn.shared_target_scale}};
  j["validation"] = {{"reduced_frequency", c.validation.reduced_frequency},
                     {"linear_amplitude", c.validation.linear_amplitude},
                     {"nonlinear_amplitude", c.validation.nonlinear_amplitude},
                     {"settled_periods", c.validation.settled_periods},
                     {"on_training_points", c.validation.on_training_points}};
  j["seed"] = c.seed;
  j["out"] = c.out;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    detail::check_keys(j,
                       {"box", "n_samples", "split_fractions", "grid", "memory_depth", "amplitudes", "laguerre", "plant",
                        "interpolator", "gpr", "fcnn", "validation", "seed", "out"},
                       "config");
    if (j.contains("box")) {
      const auto& b = j.at("box");
      detail::check_keys(b, {"mach", "alpha0"}, "box");
      detail::read_opt(b, "mach", c.box.mach_range);
      detail::read_opt(b, "alpha0", c.box.alpha0_range);
    }
    detail::read_opt(j, "n_samples", c.n_samples);
    detail::read_opt(j, "split_fractions", c.split_fractions);
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      detail::check_keys(g, {"dt", "n"}, "grid");
      detail::read_opt(g, "dt", c.dt);
      detail::read_opt(g, "n", c.n_steps);
    }
    detail::read_opt(j, "memory_depth", c.memory_depth);
    detail::read_opt(j, "amplitudes", c.amplitudes);
    if (j.contains("laguerre")) {
      const auto& l = j.at("laguerre");
      detail::check_keys(l, {"enabled", "order", "time_scale", "delay"}, "laguerre");
      detail::read_opt(l, "enabled", c.laguerre.enabled);
      detail::read_opt(l, "order", c.laguerre.order);
      if (l.contains("time_scale"))
        c.laguerre.time_scale =
            l.at("time_scale").is_null() ? std::nullopt : std::optional<double>(l.at("time_scale").get<double>());
      detail::read_opt(l, "delay", c.laguerre.delay);
    }
    if (j.contains("plant")) {
      const auto& p = j.at("plant");
      detail::check_keys(p,
                         {"cl_alpha_base", "a1", "a2", "b1", "b2", "b3", "c_nl", "c_nl3", "velocity_ratio", "a3_range",
                          "a3_mach_span", "a3_alpha_span", "noise_sigma"},
                         "plant");
      detail::read_opt(p, "cl_alpha_base", c.plant.cl_alpha_base);
      detail::read_opt(p, "a1", c.plant.a1);
      detail::read_opt(p, "a2", c.plant.a2);
      detail::read_opt(p, "b1", c.plant.b1);
      detail::read_opt(p, "b2", c.plant.b2);
      detail::read_opt(p, "b3", c.plant.b3);
      detail::read_opt(p, "c_nl", c.plant.c_nl);
      detail::read_opt(p, "c_nl3", c.plant.c_nl3);
      detail::read_opt(p, "velocity_ratio", c.plant.velocity_ratio);
      detail::read_opt(p, "a3_range", c.plant.a3_range);
      detail::read_opt(p, "a3_mach_span", c.plant.a3_mach_span);
      detail::read_opt(p, "a3_alpha_span", c.plant.a3_alpha_span);
      if (p.contains("noise_sigma"))
        c.plant.noise_sigma =
            p.at("noise_sigma").is_null() ? std::nullopt : std::optional<double>(p.at("noise_sigma").get<double>());
    }
    detail::read_opt(j, "interpolator", c.interpolator);
    if (j.contains("gpr")) {
      const auto& g = j.at("gpr");
      detail::check_keys(g, {"restarts", "shared_hyperparameters", "jitter", "max_iterations"}, "gpr");
      detail::read_opt(g, "restarts", c.gpr.restarts);
      detail::read_opt(g, "shared_hyperparameters", c.gpr.shared_hyperparameters);
      detail::read_opt(g, "jitter", c.gpr.jitter);
      detail::read_opt(g, "max_iterations", c.gpr.max_iterations);
    }
    if (j.contains("fcnn")) {
      const auto& f = j.at("fcnn");
      detail::check_keys(f, {"trials", "max_epochs", "patience", "shared_target_scale"}, "fcnn");
      detail::read_opt(f, "trials", c.fcnn.trials);
      detail::read_opt(f, "max_epochs", c.fcnn.max_epochs);
      detail::read_opt(f, "patience", c.fcnn.patience);
      detail::read_opt(f, "shared_target_scale", c.fcnn.shared_target_scale);
    }
    if (j.contains("validation")) {
      const auto& v = j.at("validation");
      detail::check_keys(
          v, {"reduced_frequency", "linear_amplitude", "nonlinear_amplitude", "settled_periods", "on_training_points"},
          "validation");
      detail::read_opt(v, "reduced_frequency", c.validation.reduced_frequency);
      detail::read_opt(v, "linear_amplitude", c.validation.linear_amplitude);
      detail::read_opt(v, "nonlinear_amplitude", c.validation.nonlinear_amplitude);
      detail::read_opt(v, "settled_periods", c.validation.settled_periods);
      detail::read_opt(v, "on_training_points", c.validation.on_training_points);
    }
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "out", c.out);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw Error("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

// --- Output layout ------------------------------------------------------------

struct Layout {
  fs::path root;

  fs::path samples() const { return root / "samples.csv"; }
  fs::path config() const { return root / "config.json"; }
  fs::path signals() const { return root / "signals"; }
  fs::path kernels() const { return root / "kernels"; }
  fs::path models() const { return root / "models"; }
  fs::path report() const { return root / "report"; }
  fs::path kernel_file(std::size_t i) const { return kernels() / point_name(i, ".json"); }

  static std::string point_name(std::size_t i, const std::string& suffix) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p%03zu", i);
    return buf + suffix;
  }
};

inline void write_json(const fs::path& path, const ojson& j) { io::write_file(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "': " + e.what());
  }
}

inline std::string describe(std::size_t index, const ParameterPoint& p) {
  return "point " + std::to_string(index) + " (M=" + io::format_double(p.mach) +
         ", alpha0=" + io::format_double(p.alpha0) + ")";
}

// --- Dataset records and ingestion -------------------------------------------

enum class AmplitudeRole { small, large, extra };

inline const char* amplitude_role_name(AmplitudeRole r) {
  switch (r) {
    case AmplitudeRole::small: return "small";
    case AmplitudeRole::large: return "large";
    case AmplitudeRole::extra: return "extra";
  }
  return "small";
}

struct DatasetRecord {
  std::size_t point_index = 0;
  ParameterPoint point;
  double amplitude_deg = 0.0;
  AmplitudeRole role = AmplitudeRole::small;
  fs::path input_path;
  fs::path output_path;
  TimeSignal input;
  TimeSignal output;
  double steady_offset = 0.0;
  std::string provenance = "external";  // synthetic | external
};

struct IngestResult {
  std::vector<DatasetRecord> records;
  std::vector<std::string> errors;
  std::size_t point_count = 0;  // points in the manifest, ingested or not
};

/// Reads `dir/manifest.json`:
///   {"provenance"?: "synthetic"|"external",
///    "points": [{"mach", "alpha0", "steady_cl"?, "steady_cm"?,
///                "responses": [{"amplitude_deg", "input_csv", "output_csv", "steady_offset"?}]}]}
/// Paths are relative to `dir`. Bad records are dropped and described in
/// `errors`; a point whose amplitudes do not increase strictly is dropped whole.
/// A malformed manifest (not an object, no points array) throws.
inline IngestResult ingest_external(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json manifest = read_json(manifest_path);
  require(manifest.is_object(), "manifest: top level must be an object");
  require(manifest.contains("points") && manifest.at("points").is_array(), "manifest: 'points' array is required");
  const std::string provenance = manifest.value("provenance", std::string("external"));
  require(provenance == "synthetic" || provenance == "external", "manifest: provenance must be synthetic or external");

  IngestResult result;
  std::optional<TimeGrid> reference_grid;
  const auto& points = manifest.at("points");
  result.point_count = points.size();
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto& pj = points[pi];
    const std::string where = "point " + std::to_string(pi);
    ParameterPoint point;
    std::vector<DatasetRecord> accepted;
    try {
      require(pj.is_object(), "entry must be an object");
      point = ParameterPoint::make(pj.at("mach").get<double>(), pj.at("alpha0").get<double>());
      if (pj.contains("steady_cl") && !pj.at("steady_cl").is_null()) point.steady_cl = pj.at("steady_cl").get<double>();
      if (pj.contains("steady_cm") && !pj.at("steady_cm").is_null()) point.steady_cm = pj.at("steady_cm").get<double>();
      const auto& responses = pj.at("responses");
      require(responses.is_array() && !responses.empty(), "'responses' must be a non-empty array");
      require(responses.size() <= 3, "at most three responses per point are supported");
      std::vector<double> amps;
      for (const auto& r : responses) amps.push_back(r.at("amplitude_deg").get<double>());
      for (std::size_t k = 0; k < amps.size(); ++k) {
        require(amps[k] > 0.0, "amplitudes must be positive");
        if (k > 0) require(amps[k] > amps[k - 1], "amplitudes must increase strictly");
      }
      for (std::size_t k = 0; k < responses.size(); ++k) {
        const auto& r = responses[k];
        const std::string rwhere = where + " response " + std::to_string(k);
        try {
          DatasetRecord rec;
          rec.point_index = pi;
          rec.point = point;
          rec.amplitude_deg = amps[k];
          rec.role = static_cast<AmplitudeRole>(k);
          rec.input_path = dir / r.at("input_csv").get<std::string>();
          rec.output_path = dir / r.at("output_csv").get<std::string>();
          require(fs::exists(rec.input_path), "missing file '" + rec.input_path.string() + "'");
          require(fs::exists(rec.output_path), "missing file '" + rec.output_path.string() + "'");
          rec.input = read_signal(rec.input_path);
          rec.output = read_signal(rec.output_path);
          require(compatible(rec.input.grid, rec.output.grid), "input and output grids differ");
          if (!reference_grid) reference_grid = rec.input.grid;
          require(compatible(rec.input.grid, *reference_grid),
                  "grid (dt=" + io::format_double(rec.input.grid.dt) + ", n=" + std::to_string(rec.input.grid.n) +
                      ") differs from the dataset grid (dt=" + io::format_double(reference_grid->dt) +
                      ", n=" + std::to_string(reference_grid->n) + ")");
          rec.steady_offset = r.contains("steady_offset") ? r.at("steady_offset").get<double>() : rec.output[0];
          rec.provenance = provenance;
          accepted.push_back(std::move(rec));
        } catch (const std::exception& e) {
          result.errors.push_back(rwhere + ": " + e.what());
        }
      }
    } catch (const std::exception& e) {
      result.errors.push_back(where + ": " + e.what());
      continue;
    }
    for (auto& rec : accepted) result.records.push_back(std::move(rec));
  }
  return result;
}

// --- Stage: gen ----------------------------------------------------------------

/// Samples the box, simulates the identification steps at every point and
/// writes samples.csv plus signals/ (CSV files and an ingestion manifest).
/// The smallest amplitude drives the linear plant; larger ones the nonlinear plant.
inline sampling::SamplePlan stage_gen(const RunConfig& config) {
  config.validate();
  const Layout layout{config.out};
  const auto grid = config.grid();
  const auto points = sampling::lhs(config.box, config.n_samples, derive_seed(config.seed, 1));
  const auto plan = sampling::split(points, config.split_fractions, derive_seed(config.seed, 2));

  const std::size_t na = config.amplitudes.size();
  std::vector<std::vector<std::pair<TimeSignal, TimeSignal>>> sims(plan.points.size());
  parallel_for(plan.points.size(), [&](std::size_t i) {
    try {
      for (std::size_t k = 0; k < na; ++k) {
        auto plant = config.plant;
        plant.seed = derive_seed(config.seed, 3, i * 8 + k);
        const auto input = make_step(grid, config.amplitudes[k]);
        sims[i].emplace_back(input, synthaero::simulate(plant, plan.points[i], input, k > 0));
      }
    } catch (const std::exception& e) {
      throw StageError("gen", describe(i, plan.points[i]) + ": " + e.what());
    }
  });

  io::write_file(layout.samples(), sampling::to_csv(plan));
  ojson manifest;
  manifest["provenance"] = "synthetic";
  auto pts = ojson::array();
  for (std::size_t i = 0; i < plan.points.size(); ++i) {
    const auto p = synthaero::with_steady_features(config.plant, plan.points[i]);
    ojson pj;
    pj["mach"] = p.mach;
    pj["alpha0"] = p.alpha0;
    pj["steady_cl"] = *p.steady_cl;
    auto responses = ojson::array();
    for (std::size_t k = 0; k < na; ++k) {
      const std::string stem = Layout::point_name(i, "_a" + std::to_string(k));
      write_signal(layout.signals() / (stem + "_input.csv"), sims[i][k].first);
      write_signal(layout.signals() / (stem + "_output.csv"), sims[i][k].second);
      ojson r;
      r["amplitude_deg"] = config.amplitudes[k];
      r["input_csv"] = stem + "_input.csv";
      r["output_csv"] = stem + "_output.csv";
      r["steady_offset"] = 0.0;
      responses.push_back(std::move(r));
    }
    pj["responses"] = std::move(responses);
    pts.push_back(std::move(pj));
  }
  manifest["points"] = std::move(pts);
  write_json(layout.signals() / "manifest.json", manifest);
  return plan;
}

// --- Stage: identify -------------------------------------------------------------

/// Candidate Laguerre time scales when none is configured.
inline std::vector<double> time_scale_candidates() { return log_spaced(0.02, 2.0, 21); }

/// Identifies the kernels of one point from its records (sorted by amplitude).
inline KernelSet identify_point(const std::vector<const DatasetRecord*>& recs, const RunConfig& config) {
  require(!recs.empty(), "no responses");
  const std::size_t m = config.memory_depth;
  auto pair_of = [](const DatasetRecord& r) { return ResponsePair{r.input, r.output, r.point, r.steady_offset}; };
  const ResponsePair a = pair_of(*recs[0]);
  require(a.output.size() >= m, "responses are shorter than the memory depth");

  std::optional<LaguerreBasis> basis;
  if (config.laguerre.enabled) {
    double scale = 0.0;
    if (config.laguerre.time_scale) {
      scale = *config.laguerre.time_scale;
    } else {
      const auto u = build_input_matrix(a.input, m, 1);
      scale = select_time_scale(u.data, a.centered_output(), a.input.grid, config.laguerre.order,
                                config.laguerre.delay, time_scale_candidates());
    }
    basis = build_basis(a.input.grid, m, config.laguerre.order, scale, config.laguerre.delay);
  }
  const LaguerreBasis* bp = basis ? &*basis : nullptr;

  KernelSet k;
  k.memory_depth = m;
  k.dt = a.input.grid.dt;
  k.steady_offset = recs[0]->steady_offset;
  for (const auto* r : recs) k.identification_amplitudes.push_back(r->amplitude_deg);
  k.h1 = identify_linear(a, m, bp);
  if (recs.size() == 2) {
    k.h2 = identify_second_order(k.h1, pair_of(*recs[1]), m, bp);
  } else if (recs.size() == 3) {
    const auto hk = identify_second_and_third(k.h1, pair_of(*recs[1]), pair_of(*recs[2]), m, bp);
    k.h2 = hk.h2;
    k.h3 = hk.h3;
  }
  k.validate();
  return k;
}

/// Point metadata stored next to the kernels; the training stage reads its
/// features from here.
inline ojson point_index_json(const std::vector<ParameterPoint>& points, const std::string& provenance) {
  ojson j;
  j["provenance"] = provenance;
  auto arr = ojson::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    ojson p;
    p["index"] = i;
    p["mach"] = points[i].mach;
    p["alpha0"] = points[i].alpha0;
    p["steady_cl"] = points[i].steady_cl ? ojson(*points[i].steady_cl) : ojson(nullptr);
    p["steady_cm"] = points[i].steady_cm ? ojson(*points[i].steady_cm) : ojson(nullptr);
    arr.push_back(std::move(p));
  }
  j["points"] = std::move(arr);
  return j;
}

struct PointIndex {
  std::string provenance;
  std::vector<ParameterPoint> points;
};

inline PointIndex read_point_index(const Layout& layout) {
  const json j = read_json(layout.kernels() / "index.json");
  PointIndex idx;
  idx.provenance = j.at("provenance").get<std::string>();
  for (const auto& p : j.at("points")) {
    auto pt = ParameterPoint::make(p.at("mach").get<double>(), p.at("alpha0").get<double>());
    if (!p.at("steady_cl").is_null()) pt.steady_cl = p.at("steady_cl").get<double>();
    if (!p.at("steady_cm").is_null()) pt.steady_cm = p.at("steady_cm").get<double>();
    idx.points.push_back(pt);
  }
  return idx;
}

/// Identifies kernels for every ingested point and writes kernels/. Any
/// rejected record or failed identification aborts with the point named.
inline std::vector<KernelSet> stage_identify(const RunConfig& config, const fs::path& dataset_dir,
                                             bool allow_partial = false, std::vector<std::string>* warnings = nullptr) {
  config.validate();
  const Layout layout{config.out};
  IngestResult ingest;
  try {
    ingest = ingest_external(dataset_dir);
  } catch (const std::exception& e) {
    throw StageError("identify", e.what());
  }
  if (!ingest.errors.empty() && !allow_partial) throw StageError("identify", ingest.errors.front());
  if (warnings) *warnings = ingest.errors;

  std::map<std::size_t, std::vector<const DatasetRecord*>> by_point;
  for (const auto& r : ingest.records) by_point[r.point_index].push_back(&r);
  if (allow_partial) {
    // A point that lost any response is dropped whole.
    std::set<std::size_t> incomplete;
    for (const auto& e : ingest.errors) {
      const auto pos = e.find("point ");
      if (pos == 0) incomplete.insert(static_cast<std::size_t>(std::stoul(e.substr(6))));
    }
    for (auto i : incomplete) by_point.erase(i);
  }
  require(!by_point.empty(), "[identify] no usable points in the dataset");

  std::vector<std::size_t> order;
  for (const auto& [i, recs] : by_point) order.push_back(i);
  std::vector<KernelSet> kernels(order.size());
  parallel_for(order.size(), [&](std::size_t s) {
    const auto& recs = by_point.at(order[s]);
    try {
      kernels[s] = identify_point(recs, config);
    } catch (const std::exception& e) {
      throw StageError("identify", describe(order[s], recs.front()->point) + ": " + e.what());
    }
  });

  fs::remove_all(layout.kernels());
  std::vector<ParameterPoint> points;
  for (std::size_t s = 0; s < order.size(); ++s) {
    points.push_back(by_point.at(order[s]).front()->point);
    write_json(layout.kernel_file(s), to_json(kernels[s]));
  }
  write_json(layout.kernels() / "index.json", point_index_json(points, ingest.records.front().provenance));
  return kernels;
}

inline std::vector<KernelSet> read_kernels(const Layout& layout, std::size_t count) {
  std::vector<KernelSet> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(kernel_set_from_json(read_json(layout.kernel_file(i))));
  return out;
}

// --- Stage: train --------------------------------------------------------------

/// Feature vector (M, alpha0, steady C_L[, steady C_M]).
inline Eigen::VectorXd features(const ParameterPoint& p, bool with_cm) {
  require(p.steady_cl.has_value(), "features: steady C_L is missing");
  Eigen::VectorXd f(with_cm ? 4 : 3);
  f[0] = p.mach;
  f[1] = p.alpha0;
  f[2] = *p.steady_cl;
  if (with_cm) {
    require(p.steady_cm.has_value(), "features: steady C_M is missing");
    f[3] = *p.steady_cm;
  }
  return f;
}

inline Eigen::VectorXd linear_targets(const KernelSet& k) { return k.h1; }

inline Eigen::VectorXd nonlinear_targets(const KernelSet& k) {
  require(k.h2.has_value(), "nonlinear targets: kernel set has no h2");
  if (!k.h3) return *k.h2;
  Eigen::VectorXd t(k.h2->size() + k.h3->size());
  t << *k.h2, *k.h3;
  return t;
}

/// Everything needed to predict kernels at a new point.
struct ModelBundle {
  std::size_t memory_depth = 0;
  double dt = 0.0;
  std::vector<double> amplitudes;
  bool has_h3 = false;
  bool with_cm = false;
  std::array<double, 2> mach_range{}, alpha0_range{};  // bounding box of the fitted points
  gpr::GprRegressor steady;                           // (M, alpha0) -> (C_L[, C_M])
  std::optional<gpr::GprRegressor> gpr_linear, gpr_nonlinear;
  std::optional<fcnn::FcnnModel> fcnn_linear, fcnn_nonlinear;

  bool has(const std::string& method) const {
    if (method == "gpr") return gpr_linear.has_value();
    if (method == "fcnn") return fcnn_linear.has_value();
    return false;
  }

  bool inside(double mach, double alpha0) const {
    const double tol = 1e-12;
    return mach >= mach_range[0] - tol && mach <= mach_range[1] + tol && alpha0 >= alpha0_range[0] - tol &&
           alpha0 <= alpha0_range[1] + tol;
  }

  /// Fills missing steady coefficients from the steady-feature GP.
  ParameterPoint complete(ParameterPoint p) const {
    if (!p.steady_cl || (with_cm && !p.steady_cm)) {
      const auto pred = steady.predict(Eigen::Vector2d(p.mach, p.alpha0)).mean;
      if (!p.steady_cl) p.steady_cl = pred[0];
      if (with_cm && !p.steady_cm) p.steady_cm = pred[1];
    }
    return p;
  }

  KernelSet predict(const std::string& method, const ParameterPoint& point) const {
    require(has(method), "no trained '" + method + "' model");
    const Eigen::VectorXd f = features(complete(point), with_cm);
    Eigen::VectorXd lin, nl;
    if (method == "gpr") {
      lin = gpr_linear->predict(f).mean;
      nl = gpr_nonlinear->predict(f).mean;
    } else {
      lin = fcnn::predict(*fcnn_linear, f);
      nl = fcnn::predict(*fcnn_nonlinear, f);
    }
    const auto m = static_cast<Eigen::Index>(memory_depth);
    KernelSet k;
    k.memory_depth = memory_depth;
    k.dt = dt;
    k.identification_amplitudes = amplitudes;
    k.h1 = lin;
    k.h2 = nl.head(m);
    if (has_h3) k.h3 = nl.segment(m, m);
    k.validate();
    return k;
  }
};

inline ojson bundle_manifest_json(const ModelBundle& b) {
  ojson j;
  j["memory_depth"] = b.memory_depth;
  j["dt"] = b.dt;
  j["amplitudes"] = b.amplitudes;
  j["has_h3"] = b.has_h3;
  j["features"] = b.with_cm ? std::vector<std::string>{"mach", "alpha0", "steady_cl", "steady_cm"}
                            : std::vector<std::string>{"mach", "alpha0", "steady_cl"};
  j["mach_range"] = b.mach_range;
  j["alpha0_range"] = b.alpha0_range;
  auto methods = ojson::array();
  if (b.gpr_linear) methods.push_back("gpr");
  if (b.fcnn_linear) methods.push_back("fcnn");
  j["methods"] = methods;
  return j;
}

inline ModelBundle load_models(const fs::path& models_dir) {
  const json j = read_json(models_dir / "manifest.json");
  ModelBundle b;
  b.memory_depth = j.at("memory_depth").get<std::size_t>();
  b.dt = j.at("dt").get<double>();
  b.amplitudes = j.at("amplitudes").get<std::vector<double>>();
  b.has_h3 = j.at("has_h3").get<bool>();
  b.with_cm = j.at("features").size() == 4;
  b.mach_range = j.at("mach_range").get<std::array<double, 2>>();
  b.alpha0_range = j.at("alpha0_range").get<std::array<double, 2>>();
  b.steady = gpr::regressor_from_json(read_json(models_dir / "gpr_steady.json"));
  for (const auto& m : j.at("methods")) {
    const auto name = m.get<std::string>();
    if (name == "gpr") {
      b.gpr_linear = gpr::regressor_from_json(read_json(models_dir / "gpr_linear.json"));
      b.gpr_nonlinear = gpr::regressor_from_json(read_json(models_dir / "gpr_nonlinear.json"));
    } else if (name == "fcnn") {
      b.fcnn_linear = fcnn::model_from_json(read_json(models_dir / "fcnn_linear.json"));
      b.fcnn_nonlinear = fcnn::model_from_json(read_json(models_dir / "fcnn_nonlinear.json"));
    }
  }
  return b;
}

namespace detail {

inline Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows) {
  require(!rows.empty(), "no rows to stack");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

inline ojson search_json(const fcnn::SearchResult& r) {
  ojson j;
  j["best"] = fcnn::to_json(r.best);
  j["best_test_mse"] = std::isfinite(r.best_objective) ? ojson(r.best_objective) : ojson(nullptr);
  auto trials = ojson::array();
  for (const auto& t : r.trials) {
    ojson tj = fcnn::to_json(t.hyperparameters);
    tj["test_mse"] = std::isfinite(t.objective) ? ojson(t.objective) : ojson(nullptr);
    trials.push_back(std::move(tj));
  }
  j["trials"] = std::move(trials);
  return j;
}

/// Bayesian search over the hyperparameter grid; returns the model of the best trial.
inline fcnn::FcnnModel search_and_train(const Eigen::MatrixXd& xtr, const Eigen::MatrixXd& ytr,
                                        const Eigen::MatrixXd& xte, const Eigen::MatrixXd& yte,
                                        const FcnnSettings& settings, std::uint64_t seed, ojson& log) {
  const fcnn::HyperparameterSpace space;
  std::map<std::size_t, fcnn::TrainResult> results;
  auto objective = [&](const fcnn::TrainHyperparameters& hp, std::size_t trial) {
    fcnn::TrainOptions opt;
    opt.seed = derive_seed(seed, 11, trial);
    opt.max_epochs = settings.max_epochs;
    opt.patience = settings.patience;
    opt.shared_target_scale = settings.shared_target_scale;
    auto r = fcnn::train(xtr, ytr, xte, yte, hp, opt);
    const double v = r.best_test_mse;
    results.emplace(trial, std::move(r));
    return v;
  };
  const auto search = fcnn::bayesian_search(space, objective, settings.trials, derive_seed(seed, 12));
  log = search_json(search);
  require(std::isfinite(search.best_objective), "every hyperparameter trial failed");
  for (std::size_t t = 0; t < search.trials.size(); ++t)
    if (search.trials[t].objective == search.best_objective && search.trials[t].hyperparameters == search.best)
      return results.at(t).model;
  throw Error("best trial not found");
}

}  // namespace detail

/// Trains the steady-feature GP and the configured interpolators (separate
/// linear and nonlinear models) and writes models/.
inline ModelBundle stage_train(const RunConfig& config) {
  config.validate();
  const Layout layout{config.out};
  try {
    const auto plan = sampling::plan_from_csv(io::read_file(layout.samples()));
    const auto index = read_point_index(layout);
    require(index.points.size() == plan.points.size(), "samples.csv and kernels/index.json disagree on point count");
    const auto kernels = read_kernels(layout, plan.points.size());
    const auto train_idx = plan.indices(sampling::Role::train);
    const auto test_idx = plan.indices(sampling::Role::test);
    require(train_idx.size() >= 2, "at least two training points are required");

    ModelBundle b;
    b.memory_depth = kernels.front().memory_depth;
    b.dt = kernels.front().dt;
    b.amplitudes = kernels.front().identification_amplitudes;
    b.has_h3 = kernels.front().h3.has_value();
    require(kernels.front().h2.has_value(), "kernels lack h2; at least two amplitudes are required");
    b.with_cm = std::all_of(index.points.begin(), index.points.end(), [](const auto& p) { return p.steady_cm.has_value(); });
    for (const auto& k : kernels)
      require(k.memory_depth == b.memory_depth && k.h3.has_value() == b.has_h3,
              "kernel sets differ in memory depth or order");

    std::vector<std::size_t> fit_idx = train_idx;
    fit_idx.insert(fit_idx.end(), test_idx.begin(), test_idx.end());
    b.mach_range = {1.0, 0.0};
    b.alpha0_range = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (auto i : fit_idx) {
      b.mach_range = {std::min(b.mach_range[0], index.points[i].mach), std::max(b.mach_range[1], index.points[i].mach)};
      b.alpha0_range = {std::min(b.alpha0_range[0], index.points[i].alpha0),
                        std::max(b.alpha0_range[1], index.points[i].alpha0)};
    }

    auto rows = [&](const std::vector<std::size_t>& idx, auto&& fn) {
      std::vector<Eigen::VectorXd> r;
      for (auto i : idx) r.push_back(fn(i));
      return detail::stack_rows(r);
    };
    auto feat = [&](std::size_t i) { return features(index.points[i], b.with_cm); };
    auto lin = [&](std::size_t i) { return linear_targets(kernels[i]); };
    auto nl = [&](std::size_t i) { return nonlinear_targets(kernels[i]); };

    gpr::FitOptions gopt;
    gopt.restarts = config.gpr.restarts;
    gopt.jitter = config.gpr.jitter;
    gopt.max_iterations = config.gpr.max_iterations;
    gopt.shared_hyperparameters = config.gpr.shared_hyperparameters;

    // Steady coefficients at unseen points come from a GP on (M, alpha0).
    {
      auto sopt = gopt;
      sopt.seed = derive_seed(config.seed, 20);
      sopt.shared_hyperparameters = false;
      const Eigen::MatrixXd xs = rows(fit_idx, [&](std::size_t i) {
        return Eigen::VectorXd(Eigen::Vector2d(index.points[i].mach, index.points[i].alpha0));
      });
      const Eigen::MatrixXd ys = rows(fit_idx, [&](std::size_t i) {
        Eigen::VectorXd v(b.with_cm ? 2 : 1);
        v[0] = *index.points[i].steady_cl;
        if (b.with_cm) v[1] = *index.points[i].steady_cm;
        return v;
      });
      b.steady = gpr::fit_regressor(xs, ys, sopt);
    }

    fs::remove_all(layout.models());
    write_json(layout.models() / "gpr_steady.json", gpr::to_json(b.steady));

    if (config.uses_gpr()) {
      const Eigen::MatrixXd x = rows(fit_idx, feat);
      auto o1 = gopt;
      o1.seed = derive_seed(config.seed, 21);
      b.gpr_linear = gpr::fit_regressor(x, rows(fit_idx, lin), o1);
      auto o2 = gopt;
      o2.seed = derive_seed(config.seed, 22);
      b.gpr_nonlinear = gpr::fit_regressor(x, rows(fit_idx, nl), o2);
      write_json(layout.models() / "gpr_linear.json", gpr::to_json(*b.gpr_linear));
      write_json(layout.models() / "gpr_nonlinear.json", gpr::to_json(*b.gpr_nonlinear));
    }
    if (config.uses_fcnn()) {
      require(!test_idx.empty(), "FCNN training needs a non-empty test subset for early stopping");
      const Eigen::MatrixXd xtr = rows(train_idx, feat), xte = rows(test_idx, feat);
      ojson log_lin, log_nl;
      b.fcnn_linear = detail::search_and_train(xtr, rows(train_idx, lin), xte, rows(test_idx, lin), config.fcnn,
                                               derive_seed(config.seed, 31), log_lin);
      b.fcnn_nonlinear = detail::search_and_train(xtr, rows(train_idx, nl), xte, rows(test_idx, nl), config.fcnn,
                                                  derive_seed(config.seed, 32), log_nl);
      write_json(layout.models() / "fcnn_linear.json", fcnn::to_json(*b.fcnn_linear));
      write_json(layout.models() / "fcnn_nonlinear.json", fcnn::to_json(*b.fcnn_nonlinear));
      write_json(layout.models() / "fcnn_linear_search.json", log_lin);
      write_json(layout.models() / "fcnn_nonlinear_search.json", log_nl);
    }
    write_json(layout.models() / "manifest.json", bundle_manifest_json(b));
    return b;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("train", e.what());
  }
}

// --- Stage: report ---------------------------------------------------------------

/// RMS of (prediction - reference) over the window, divided by the RMS of the reference.
inline double relative_rms(const Eigen::VectorXd& prediction, const Eigen::VectorXd& reference, Eigen::Index start = 0) {
  const Eigen::Index len = reference.size() - start;
  const double denom = linalg::rms(reference.tail(len));
  const double num = linalg::rms(prediction.tail(len) - reference.tail(len));
  return denom > 0.0 ? num / denom : num;
}

inline double relative_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& ref) {
  const double d = ref.norm();
  return d > 0.0 ? (a - ref).norm() / d : (a - ref).norm();
}

/// First sample of the final `periods` full periods of a sinusoid of reduced frequency k.
inline Eigen::Index settled_start(const TimeGrid& grid, double k, int periods) {
  const double window = periods * 2.0 * std::numbers::pi / k;
  const double t0 = grid.tau(grid.n - 1) - window;
  require(t0 >= 0.0, "the validation signal is shorter than the settled window");
  return static_cast<Eigen::Index>(std::ceil(t0 / grid.dt - 1e-9));
}

struct ValidationRow {
  std::size_t index = 0;
  ParameterPoint point;
  std::string method;  // identified | gpr | fcnn
  double h1_error = 0.0;
  double h2_error = 0.0;
  std::optional<double> sine_linear, sine_nonlinear, step_linear, step_nonlinear;  // vs the plant oracle
  double sine_linear_vs_series = 0.0, sine_nonlinear_vs_series = 0.0;              // vs identified kernels
};

struct ValidationReport {
  std::vector<ValidationRow> rows;
  std::string provenance;

  std::vector<const ValidationRow*> for_method(const std::string& m) const {
    std::vector<const ValidationRow*> out;
    for (const auto& r : rows)
      if (r.method == m) out.push_back(&r);
    return out;
  }
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<std::string> metric_names() {
  return {"h1_rel_l2",      "h2_rel_l2",      "sine_linear_rel_rms", "sine_nonlinear_rel_rms", "step_linear_rel_rms",
          "step_nonlinear_rel_rms", "sine_linear_vs_series", "sine_nonlinear_vs_series"};
}

inline std::vector<std::optional<double>> metric_values(const ValidationRow& r) {
  return {r.h1_error,    r.h2_error,       r.sine_linear, r.sine_nonlinear, r.step_linear,
          r.step_nonlinear, r.sine_linear_vs_series, r.sine_nonlinear_vs_series};
}

inline std::string to_csv(const ValidationReport& report) {
  std::string out = "index,mach,alpha0,method";
  for (const auto& n : metric_names()) out += "," + n;
  out += "\n";
  for (const auto& r : report.rows) {
    out += std::to_string(r.index) + "," + io::format_double(r.point.mach) + "," + io::format_double(r.point.alpha0) +
           "," + r.method;
    for (const auto& v : metric_values(r)) out += "," + (v ? io::format_double(*v) : std::string());
    out += "\n";
  }
  return out;
}

inline ojson summary_json(const ValidationReport& report) {
  ojson j;
  j["provenance"] = report.provenance;
  std::vector<std::string> methods;
  for (const auto& r : report.rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  ojson per;
  for (const auto& m : methods) {
    const auto rows = report.for_method(m);
    ojson mj;
    mj["points"] = rows.size();
    ojson med;
    const auto names = metric_names();
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::vector<double> vals;
      for (const auto* r : rows)
        if (auto v = metric_values(*r)[k]) vals.push_back(*v);
      med[names[k]] = vals.empty() ? ojson(nullptr) : ojson(median(vals));
    }
    mj["median"] = med;
    per[m] = mj;
  }
  j["methods"] = per;
  return j;
}

namespace detail {

inline std::string hysteresis_csv(const TimeSignal& input, double alpha0, double steady, const Eigen::VectorXd& oracle,
                                  const Eigen::VectorXd& predicted, Eigen::Index start) {
  std::string out = oracle.size() ? "alpha,oracle,predicted\n" : "alpha,predicted\n";
  for (Eigen::Index i = start; i < input.values.size(); ++i) {
    out += io::format_double(alpha0 + input.values[i]);
    if (oracle.size()) out += "," + io::format_double(steady + oracle[i]);
    out += "," + io::format_double(steady + predicted[i]) + "\n";
  }
  return out;
}

inline KernelSet linear_part(KernelSet k) {
  k.h2.reset();
  k.h3.reset();
  return k;
}

}  // namespace detail

/// Scores every validation point from persisted artifacts and writes
/// report/validation.csv, report/summary.json and hysteresis CSVs.
inline ValidationReport stage_report(const RunConfig& config) {
  config.validate();
  const Layout layout{config.out};
  try {
    const auto plan = sampling::plan_from_csv(io::read_file(layout.samples()));
    const auto index = read_point_index(layout);
    const auto kernels = read_kernels(layout, plan.points.size());
    std::optional<ModelBundle> bundle;
    if (fs::exists(layout.models() / "manifest.json")) bundle = load_models(layout.models());
    std::vector<std::string> methods{"identified"};
    for (const std::string m : {"gpr", "fcnn"})
      if (bundle && bundle->has(m)) methods.push_back(m);

    const bool synthetic = index.provenance == "synthetic";
    const auto& vs = config.validation;
    const auto val_idx = plan.indices(vs.on_training_points ? sampling::Role::train : sampling::Role::validation);
    require(!val_idx.empty(), "the validation subset is empty");
    const TimeGrid grid = TimeGrid::make(kernels.front().dt, config.n_steps);
    const auto sine_lin = make_sinusoid(grid, 0.0, vs.linear_amplitude, vs.reduced_frequency);
    const auto sine_nl = make_sinusoid(grid, 0.0, vs.nonlinear_amplitude, vs.reduced_frequency);
    const auto step_lin = make_step(grid, vs.linear_amplitude);
    const auto step_nl = make_step(grid, vs.nonlinear_amplitude);
    const Eigen::Index start = settled_start(grid, vs.reduced_frequency, vs.settled_periods);

    ValidationReport report;
    report.provenance = index.provenance;
    std::vector<std::vector<ValidationRow>> per_point(val_idx.size());
    std::vector<std::vector<std::pair<std::string, std::string>>> files(val_idx.size());
    parallel_for(val_idx.size(), [&](std::size_t s) {
      const std::size_t i = val_idx[s];
      const ParameterPoint& p = index.points[i];
      try {
        const KernelSet& ident = kernels[i];
        const Eigen::VectorXd ref_lin = reconstruct(detail::linear_part(ident), sine_lin).values;
        const Eigen::VectorXd ref_nl = reconstruct(ident, sine_nl).values;
        Eigen::VectorXd o_sl, o_snl, o_stl, o_stnl;
        if (synthetic) {
          o_sl = synthaero::exact_response_oracle(config.plant, p, sine_lin, false).values;
          o_snl = synthaero::exact_response_oracle(config.plant, p, sine_nl, true).values;
          o_stl = synthaero::exact_response_oracle(config.plant, p, step_lin, false).values;
          o_stnl = synthaero::exact_response_oracle(config.plant, p, step_nl, true).values;
        }
        const double steady = p.steady_cl.value_or(0.0);
        for (const auto& method : methods) {
          const KernelSet k = method == "identified" ? ident : bundle->predict(method, p);
          ValidationRow row;
          row.index = i;
          row.point = p;
          row.method = method;
          row.h1_error = relative_l2(k.h1, ident.h1);
          row.h2_error = relative_l2(*k.h2, *ident.h2);
          const Eigen::VectorXd y_sl = reconstruct(detail::linear_part(k), sine_lin).values;
          const Eigen::VectorXd y_snl = reconstruct(k, sine_nl).values;
          row.sine_linear_vs_series = relative_rms(y_sl, ref_lin, start);
          row.sine_nonlinear_vs_series = relative_rms(y_snl, ref_nl, start);
          if (synthetic) {
            row.sine_linear = relative_rms(y_sl, o_sl, start);
            row.sine_nonlinear = relative_rms(y_snl, o_snl, start);
            row.step_linear = relative_rms(reconstruct(detail::linear_part(k), step_lin).values, o_stl);
            row.step_nonlinear = relative_rms(reconstruct(k, step_nl).values, o_stnl);
          }
          const std::string stem = Layout::point_name(i, "_" + method);
          files[s].emplace_back("hysteresis/" + stem + "_linear.csv",
                                detail::hysteresis_csv(sine_lin, p.alpha0, steady, o_sl, y_sl, start));
          files[s].emplace_back("hysteresis/" + stem + "_nonlinear.csv",
                                detail::hysteresis_csv(sine_nl, p.alpha0, steady, o_snl, y_snl, start));
          per_point[s].push_back(row);
        }
      } catch (const std::exception& e) {
        throw StageError("report", describe(i, p) + ": " + e.what());
      }
    });
    fs::remove_all(layout.report());
    for (std::size_t s = 0; s < val_idx.size(); ++s) {
      for (auto& r : per_point[s]) report.rows.push_back(r);
      for (const auto& [name, text] : files[s]) io::write_file(layout.report() / name, text);
    }
    io::write_file(layout.report() / "validation.csv", to_csv(report));
    write_json(layout.report() / "summary.json", summary_json(report));
    return report;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("report", e.what());
  }
}

/// Full procedure: sample, simulate, identify, split, train, predict, reconstruct, report.
inline ValidationReport run_algorithm1(const RunConfig& config) {
  config.validate();
  const Layout layout{config.out};
  fs::create_directories(layout.root);
  write_json(layout.config(), to_json(config));
  stage_gen(config);
  stage_identify(config, layout.signals());
  if (config.interpolator != "none") stage_train(config);
  else fs::remove_all(layout.models());
  return stage_report(config);
}

/// Identifies an external dataset into `config.out`: kernels/ plus a
/// samples.csv split of the ingested points. Rejected records are returned.
inline std::vector<std::string> ingest_and_identify(const RunConfig& config, const fs::path& dataset_dir) {
  std::vector<std::string> warnings;
  stage_identify(config, dataset_dir, true, &warnings);
  const Layout layout{config.out};
  const auto index = read_point_index(layout);
  const auto plan = sampling::split(index.points, config.split_fractions, derive_seed(config.seed, 2));
  io::write_file(layout.samples(), sampling::to_csv(plan));
  return warnings;
}

// --- Sweeps --------------------------------------------------------------------

struct SweepSpec {
  std::vector<double> machs;
  std::vector<double> alpha0s;
  std::string input = "step";  // step | harmonic
  double amplitude = 1.0;
  double reduced_frequency = 0.3;
  std::string method = "gpr";
  std::size_t n_steps = 0;  // 0: use the kernels' memory depth
};

struct SweepCase {
  double mach = 0.0;
  double alpha0 = 0.0;
  bool extrapolated = false;
  double steady_cl = 0.0;
  std::string response_file, hysteresis_file;
};

/// One CSV per (M, alpha0) with tau,input,output (absolute angle and steady
/// plus dynamic response), a hysteresis CSV (alpha,output) per case, and
/// sweep.json listing every case with its extrapolation flag.
inline std::vector<SweepCase> sweep_reconstruct(const ModelBundle& models, const SweepSpec& spec, const fs::path& out_dir,
                                                std::vector<std::string>* warnings = nullptr) {
  require(!spec.machs.empty() && !spec.alpha0s.empty(), "sweep: Mach and alpha0 lists must be non-empty");
  require(spec.input == "step" || spec.input == "harmonic", "sweep: input must be step or harmonic");
  require(spec.amplitude >= 0.0, "sweep: amplitude must be non-negative");
  const std::size_t n = spec.n_steps ? spec.n_steps : models.memory_depth;
  require(n >= models.memory_depth, "sweep: signal shorter than the memory depth");
  const TimeGrid grid = TimeGrid::make(models.dt, n);
  const TimeSignal u = spec.input == "step" ? make_step(grid, spec.amplitude)
                                            : make_sinusoid(grid, 0.0, spec.amplitude, spec.reduced_frequency);
  std::vector<SweepCase> cases;
  auto arr = ojson::array();
  for (double mach : spec.machs) {
    for (double alpha0 : spec.alpha0s) {
      SweepCase c;
      c.mach = mach;
      c.alpha0 = alpha0;
      c.extrapolated = !models.inside(mach, alpha0);
      if (c.extrapolated && warnings)
        warnings->push_back("query (M=" + io::format_double(mach) + ", alpha0=" + io::format_double(alpha0) +
                            ") lies outside the training box; extrapolating");
      const ParameterPoint p = models.complete(ParameterPoint::make(mach, alpha0));
      c.steady_cl = *p.steady_cl;
      const KernelSet k = models.predict(spec.method, p);
      const Eigen::VectorXd y = reconstruct(k, u).values;
      const std::string stem = "M" + io::format_double(mach) + "_a" + io::format_double(alpha0);
      c.response_file = stem + ".csv";
      c.hysteresis_file = stem + "_hysteresis.csv";
      std::string resp = "tau,input,output\n", hyst = "alpha,output\n";
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::string a = io::format_double(alpha0 + u.values[ii]);
        const std::string o = io::format_double(c.steady_cl + y[ii]);
        resp += io::format_double(grid.tau(i)) + "," + a + "," + o + "\n";
        hyst += a + "," + o + "\n";
      }
      io::write_file(out_dir / c.response_file, resp);
      io::write_file(out_dir / c.hysteresis_file, hyst);
      ojson cj;
      cj["mach"] = mach;
      cj["alpha0"] = alpha0;
      cj["steady_cl"] = c.steady_cl;
      cj["extrapolated"] = c.extrapolated;
      cj["response_csv"] = c.response_file;
      cj["hysteresis_csv"] = c.hysteresis_file;
      arr.push_back(std::move(cj));
      cases.push_back(std::move(c));
    }
  }
  ojson meta;
  meta["method"] = spec.method;
  meta["input"] = spec.input;
  meta["amplitude"] = spec.amplitude;
  meta["reduced_frequency"] = spec.reduced_frequency;
  meta["cases"] = std::move(arr);
  write_json(out_dir / "sweep.json", meta);
  return cases;
}

}  // namespace vrom::pipeline
