// Command-line harness: mesh generation, verification of the concurrent
// engines against the sequential one, wall-clock benchmarks with CSV output,
// and cycle-model reports.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowforge/compare.hpp"
#include "flowforge/dataflow.hpp"
#include "flowforge/mesh.hpp"
#include "flowforge/mesh_io.hpp"
#include "flowforge/perfmodel.hpp"
#include "flowforge/streaming.hpp"

namespace {

using namespace flowforge;
using nlohmann::json;

constexpr double kVerifyTol = 1e-12;

struct RunConfig {
  std::string preset;
  std::uint64_t elements = 0;
  std::uint64_t points = 0;
  std::uint64_t seed = 42;
  std::vector<std::string> modes;
  std::string mesh_path;
  std::uint64_t chunk_size = 4096;
  std::size_t fifo_depth = 8;
  std::vector<std::uint64_t> engines;
  std::string accum = "sharded";
  bool offload = false;
  std::uint64_t repeats = 3;
  std::string out;
  std::string routing = "on";
  std::uint64_t watchdog_ms = 30000;
  std::size_t workers = 1;
  std::string config_path;
};

void add_common_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--preset", cfg.preset,
                  "named benchmark mesh (all presets are 3D tetrahedral meshes of the listed "
                  "sizes, including the *2d names)");
  cmd->add_option("--elements", cfg.elements, "custom element count");
  cmd->add_option("--points", cfg.points, "custom point count");
  cmd->add_option("--seed", cfg.seed, "mesh generator seed");
  cmd->add_option("--mesh", cfg.mesh_path, "load mesh from file instead of generating");
  cmd->add_option("--chunk-size", cfg.chunk_size, "streamed-mode chunk size (0 = auto)");
  cmd->add_option("--fifo-depth", cfg.fifo_depth, "stream FIFO capacity");
  cmd->add_option("--engines", cfg.engines, "engine counts (repeatable)");
  cmd->add_option("--accum", cfg.accum, "result accumulation: serial|locked|sharded");
  cmd->add_flag("--offload-cartesian", cfg.offload, "compute geometry stage on the host");
  cmd->add_option("--repeats", cfg.repeats, "timed repetitions per row");
  cmd->add_option("--out", cfg.out, "output file path");
  cmd->add_option("--routing", cfg.routing, "stream routing through stages: on|off");
  cmd->add_option("--watchdog-ms", cfg.watchdog_ms, "stall watchdog timeout (0 disables)");
  cmd->add_option("--workers", cfg.workers, "host-side worker threads");
  cmd->add_option("--config", cfg.config_path, "JSON config file; flags override its values");
}

// Applies config-file values for options the user did not pass on the line.
void apply_config_file(const CLI::App* cmd, RunConfig& cfg) {
  if (cfg.config_path.empty()) return;
  std::ifstream f(cfg.config_path);
  if (!f) throw FileError("cannot open config: " + cfg.config_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("bad config JSON: " + std::string(e.what()));
  }
  auto unset = [&](const char* flag) { return cmd->count(flag) == 0; };
  auto get_modes = [&](const json& v) {
    std::vector<std::string> m;
    if (v.is_string())
      m.push_back(v.get<std::string>());
    else
      for (const auto& x : v) m.push_back(x.get<std::string>());
    return m;
  };
  auto get_engines = [&](const json& v) {
    std::vector<std::uint64_t> e;
    if (v.is_number())
      e.push_back(v.get<std::uint64_t>());
    else
      for (const auto& x : v) e.push_back(x.get<std::uint64_t>());
    return e;
  };
  try {
    if (j.contains("preset") && unset("--preset")) cfg.preset = j["preset"].get<std::string>();
    if (j.contains("elements") && unset("--elements")) cfg.elements = j["elements"].get<std::uint64_t>();
    if (j.contains("points") && unset("--points")) cfg.points = j["points"].get<std::uint64_t>();
    if (j.contains("seed") && unset("--seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("mode") && cfg.modes.empty()) cfg.modes = get_modes(j["mode"]);
    if (j.contains("mesh") && unset("--mesh")) cfg.mesh_path = j["mesh"].get<std::string>();
    if (j.contains("chunk_size") && unset("--chunk-size")) cfg.chunk_size = j["chunk_size"].get<std::uint64_t>();
    if (j.contains("fifo_depth") && unset("--fifo-depth")) cfg.fifo_depth = j["fifo_depth"].get<std::size_t>();
    if (j.contains("engines") && unset("--engines")) cfg.engines = get_engines(j["engines"]);
    if (j.contains("accum") && unset("--accum")) cfg.accum = j["accum"].get<std::string>();
    if (j.contains("offload_cartesian") && unset("--offload-cartesian"))
      cfg.offload = j["offload_cartesian"].get<bool>();
    if (j.contains("repeats") && unset("--repeats")) cfg.repeats = j["repeats"].get<std::uint64_t>();
    if (j.contains("out") && unset("--out")) cfg.out = j["out"].get<std::string>();
    if (j.contains("routing") && unset("--routing")) cfg.routing = j["routing"].get<std::string>();
    if (j.contains("watchdog_ms") && unset("--watchdog-ms")) cfg.watchdog_ms = j["watchdog_ms"].get<std::uint64_t>();
    if (j.contains("workers") && unset("--workers")) cfg.workers = j["workers"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError("bad config value: " + std::string(e.what()));
  }
}

bool routing_enabled(const RunConfig& cfg) {
  if (cfg.routing == "on") return true;
  if (cfg.routing == "off") return false;
  throw ConfigError("--routing must be on or off");
}

PipelineConfig pipeline_config(const RunConfig& cfg, std::uint64_t engines) {
  PipelineConfig pc;
  pc.fifo_depth = cfg.fifo_depth;
  pc.num_engines = static_cast<std::size_t>(engines);
  pc.routing_enabled = routing_enabled(cfg);
  pc.watchdog_timeout = std::chrono::milliseconds(cfg.watchdog_ms);
  return pc;
}

StreamScheduleConfig schedule_config(const RunConfig& cfg) {
  StreamScheduleConfig sc;
  sc.chunk_size = cfg.chunk_size;
  sc.accumulation_mode = accumulation_mode_from_string(cfg.accum);
  sc.host_offload_cartesian = cfg.offload;
  sc.worker_count = cfg.workers;
  return sc;
}

std::string mesh_label(const RunConfig& cfg) {
  if (!cfg.mesh_path.empty()) return cfg.mesh_path;
  if (!cfg.preset.empty()) return cfg.preset;
  return "custom";
}

Mesh acquire_mesh(const RunConfig& cfg) {
  if (!cfg.mesh_path.empty()) return load_mesh(cfg.mesh_path);
  if (!cfg.preset.empty()) {
    const MeshPreset* p = find_preset(cfg.preset);
    if (!p) throw ConfigError("unknown preset: " + cfg.preset);
    return generate_synthetic_mesh(p->elements, p->points, cfg.seed);
  }
  if (cfg.elements == 0) throw ConfigError("need --mesh, --preset, or --elements");
  const std::uint64_t pts = cfg.points ? cfg.points : std::max<std::uint64_t>(8, cfg.elements / 6);
  return generate_synthetic_mesh(cfg.elements, pts, cfg.seed);
}

int cmd_generate(const RunConfig& cfg) {
  Mesh mesh = acquire_mesh(cfg);
  const std::string path = cfg.out.empty() ? mesh_label(cfg) + ".mesh" : cfg.out;
  save_mesh(mesh, path);
  std::cout << "wrote " << path << ": " << mesh.num_elements << " elements, " << mesh.num_points
            << " points\n";
  return 0;
}

int cmd_verify(const RunConfig& cfg) {
  Mesh mesh = acquire_mesh(cfg);
  std::cout << "mesh " << mesh_label(cfg) << ": " << mesh.num_elements << " elements, "
            << mesh.num_points << " points\n";
  GlobalOutputs ref = assemble_all<>(mesh, PhysParams{});

  std::vector<std::uint64_t> engines = cfg.engines.empty() ? std::vector<std::uint64_t>{1} : cfg.engines;
  bool pass = true;
  for (std::uint64_t e : engines) {
    const PipelineConfig pc = pipeline_config(cfg, e);
    GlobalOutputs got = assemble_with_pipeline<>(mesh, pc, PhysParams{});
    const double dev = max_rel_deviation(got, ref);
    const bool ok = dev <= kVerifyTol;
    pass = pass && ok;
    std::printf("pipeline  engines=%llu fifo_depth=%zu routing=%s: max rel dev %.3e %s\n",
                static_cast<unsigned long long>(e), cfg.fifo_depth, cfg.routing.c_str(), dev,
                ok ? "PASS" : "FAIL");
  }
  for (std::uint64_t e : engines) {
    const PipelineConfig pc = pipeline_config(cfg, e);
    const StreamScheduleConfig sc = schedule_config(cfg);
    GlobalOutputs got = run_streamed<>(mesh, PhysParams{}, pc, sc);
    const double dev = max_rel_deviation(got, ref);
    const bool ok = dev <= kVerifyTol;
    pass = pass && ok;
    std::printf("streamed  engines=%llu accum=%s offload=%d chunk_size=%llu: max rel dev %.3e %s\n",
                static_cast<unsigned long long>(e), cfg.accum.c_str(), cfg.offload ? 1 : 0,
                static_cast<unsigned long long>(cfg.chunk_size), dev, ok ? "PASS" : "FAIL");
  }
  if (!cfg.out.empty()) {
    export_outputs_csv(ref, cfg.out);
    std::cout << "reference outputs written to " << cfg.out << "\n";
  }
  std::cout << "verify: " << (pass ? "PASS" : "FAIL") << " (tolerance " << kVerifyTol << ")\n";
  return pass ? 0 : 2;
}

int cmd_bench(const RunConfig& cfg) {
  Mesh mesh = acquire_mesh(cfg);
  GlobalOutputs ref = assemble_all<>(mesh, PhysParams{});
  const std::uint64_t flops_per_elem = count_flops<>().measured_total;

  std::vector<std::string> modes = cfg.modes.empty() ? std::vector<std::string>{"reference"} : cfg.modes;
  std::vector<std::uint64_t> engines = cfg.engines.empty() ? std::vector<std::uint64_t>{1} : cfg.engines;
  const std::uint64_t repeats = std::max<std::uint64_t>(1, cfg.repeats);

  std::string csv = "benchmark,mode,engines,chunk_size,accum,offload,repeats,mean_seconds,gflops,max_rel_dev\n";
  for (const std::string& mode : modes) {
    if (mode != "reference" && mode != "pipeline" && mode != "streamed")
      throw ConfigError("unknown mode: " + mode);
    const bool uses_engines = mode != "reference";
    const std::vector<std::uint64_t> row_engines =
        uses_engines ? engines : std::vector<std::uint64_t>{1};
    for (std::uint64_t e : row_engines) {
      double total = 0.0;
      double dev = 0.0;
      for (std::uint64_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        GlobalOutputs got(0);
        if (mode == "reference") {
          got = assemble_all<>(mesh, PhysParams{});
        } else if (mode == "pipeline") {
          got = assemble_with_pipeline<>(mesh, pipeline_config(cfg, e), PhysParams{});
        } else {
          got = run_streamed<>(mesh, PhysParams{}, pipeline_config(cfg, e), schedule_config(cfg));
        }
        total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (r == 0) dev = max_rel_deviation(got, ref);
      }
      const double mean = total / static_cast<double>(repeats);
      char row[512];
      std::snprintf(row, sizeof(row), "%s,%s,%llu,%llu,%s,%d,%llu,%.9e,%.6f,%.3e\n",
                    mesh_label(cfg).c_str(), mode.c_str(), static_cast<unsigned long long>(e),
                    static_cast<unsigned long long>(mode == "streamed" ? cfg.chunk_size : 0),
                    mode == "streamed" ? cfg.accum.c_str() : "-",
                    mode == "streamed" && cfg.offload ? 1 : 0,
                    static_cast<unsigned long long>(repeats), mean,
                    gflops(flops_per_elem, mesh.num_elements, mean), dev);
      csv += row;
    }
  }
  if (cfg.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(cfg.out, std::ios::trunc);
    if (!f) throw FileError("cannot open for writing: " + cfg.out);
    f << csv;
    if (!f) throw FileError("write failed: " + cfg.out);
    std::cout << "wrote " << cfg.out << "\n";
  }
  return 0;
}

StageSpec stage_from_json(const json& j) {
  StageSpec s;
  s.name = j.value("name", std::string("stage"));
  s.trip_count = j.value("trip", std::uint64_t{1});
  s.ii = j.value("ii", std::uint64_t{1});
  s.fused_elements = j.value("fused", false);
  return s;
}

VariantSpec variant_from_json(const json& j) {
  VariantSpec v;
  v.name = j.value("name", std::string("custom"));
  if (j.contains("stages"))
    for (const auto& s : j["stages"]) v.stages.push_back(stage_from_json(s));
  v.restart_between_elements = j.value("restart", false);
  v.contiguous_access = j.value("contiguous", false);
  v.streamed_io = j.value("streamed_io", false);
  v.engines = j.value("engines", std::uint64_t{1});
  v.element_accesses = j.value("element_accesses", std::uint64_t{20});
  v.resources = j.value("resources", std::string{});
  return v;
}

int cmd_model(const RunConfig& cfg, std::uint64_t model_elements) {
  CostParams params;
  std::vector<VariantSpec> variants = builtin_variants(params);
  const std::size_t builtin_count = variants.size();
  if (!cfg.config_path.empty()) {
    std::ifstream f(cfg.config_path);
    if (!f) throw FileError("cannot open config: " + cfg.config_path);
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw ConfigError("bad config JSON: " + std::string(e.what()));
    }
    if (j.contains("variants"))
      for (const auto& v : j["variants"]) variants.push_back(variant_from_json(v));
  }

  json report;
  report["elements"] = model_elements;
  report["reports"] = json::array();
  std::vector<double> builtin_seconds;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const CycleEstimate est = estimate_cycles(variants[i], model_elements, params);
    if (i < builtin_count) builtin_seconds.push_back(est.seconds);
    json r;
    r["variant"] = variants[i].name;
    r["cycles"] = est.cycles;
    r["seconds"] = est.seconds;
    if (!variants[i].resources.empty()) r["resources"] = variants[i].resources;
    r["per_stage"] = json::array();
    for (const auto& s : est.per_stage)
      r["per_stage"].push_back({{"name", s.name}, {"per_element_cycles", s.per_element_cycles}});
    report["reports"].push_back(r);
    std::printf("%-24s %12llu cycles  %10.3f ms\n", variants[i].name.c_str(),
                static_cast<unsigned long long>(est.cycles), est.seconds * 1e3);
  }
  bool ordered = true;
  for (std::size_t i = 1; i < builtin_seconds.size(); ++i)
    ordered = ordered && builtin_seconds[i] < builtin_seconds[i - 1];
  report["ordering_ok"] = ordered;
  std::cout << "ladder ordering: " << (ordered ? "strictly decreasing" : "VIOLATED") << "\n";

  if (!cfg.out.empty()) {
    std::ofstream f(cfg.out, std::ios::trunc);
    if (!f) throw FileError("cannot open for writing: " + cfg.out);
    f << report.dump(2) << "\n";
    if (!f) throw FileError("write failed: " + cfg.out);
    std::cout << "wrote " << cfg.out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowforge: element matrix assembly engines and benchmarks"};
  app.require_subcommand(1);

  RunConfig gen_cfg, ver_cfg, ben_cfg, mod_cfg;
  std::uint64_t model_elements = 100000;

  CLI::App* gen = app.add_subcommand("generate", "generate a mesh file");
  add_common_flags(gen, gen_cfg);
  CLI::App* ver = app.add_subcommand("verify", "check concurrent engines against the reference");
  add_common_flags(ver, ver_cfg);
  CLI::App* ben = app.add_subcommand("bench", "timed runs with CSV output");
  add_common_flags(ben, ben_cfg);
  ben->add_option("--mode", ben_cfg.modes, "reference|pipeline|streamed (repeatable)");
  CLI::App* mod = app.add_subcommand("model", "cycle-model report over design variants");
  add_common_flags(mod, mod_cfg);
  mod->add_option("--model-elements", model_elements, "element count the model predicts for");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      apply_config_file(gen, gen_cfg);
      return cmd_generate(gen_cfg);
    }
    if (ver->parsed()) {
      apply_config_file(ver, ver_cfg);
      return cmd_verify(ver_cfg);
    }
    if (ben->parsed()) {
      apply_config_file(ben, ben_cfg);
      return cmd_bench(ben_cfg);
    }
    apply_config_file(mod, mod_cfg);
    return cmd_model(mod_cfg, model_elements);
  } catch (const flowforge::WatchdogStallError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const flowforge::DegenerateElementError& e) {
    std::cerr << "FAIL: " << e.what() << "\n";
    return 2;
  } catch (const flowforge::TruncatedFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const flowforge::BadMagicError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const flowforge::FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const flowforge::InvalidMeshError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
