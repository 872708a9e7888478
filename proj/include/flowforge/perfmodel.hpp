#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowforge/assembly.hpp"
#include "flowforge/core.hpp"
#include "flowforge/counted_real.hpp"
#include "flowforge/mesh.hpp"
#include "flowforge/quadrature.hpp"

namespace flowforge {

// Cycle-level throughput model for the staged engine. It is a slowest-stage
// bound, not a queueing simulation: each stage contributes a per-element
// cycle cost, the design restarts per element or pipelines across elements,
// and irregular external accesses compete with compute for the bottleneck.

struct CostParams {
  double clock_hz = 3.0e8;
  std::uint64_t access_request_cycles = 69;
  std::uint64_t dadd_latency_cycles = 7;
  std::uint64_t stage_fill_depth = 40;
};

inline void validate(const CostParams& p) {
  if (!(p.clock_hz > 0)) throw ConfigError("clock_hz must be positive");
  if (p.access_request_cycles < 1) throw ConfigError("access_request_cycles must be >= 1");
  if (p.dadd_latency_cycles < 1) throw ConfigError("dadd_latency_cycles must be >= 1");
  if (p.stage_fill_depth < 1) throw ConfigError("stage_fill_depth must be >= 1");
}

struct StageSpec {
  std::string name;
  std::uint64_t trip_count = 1;  // loop iterations per element
  std::uint64_t ii = 1;          // initiation interval
  bool fused_elements = false;   // element loop lives inside the stage
};

struct VariantSpec {
  std::string name;
  std::vector<StageSpec> stages;
  bool restart_between_elements = false;
  bool contiguous_access = false;
  bool streamed_io = false;
  std::uint64_t engines = 1;
  // Irregular external accesses per element (reads + writes) when I/O is
  // not streamed: 8 gather reads plus 12 scattered result writes.
  std::uint64_t element_accesses = 20;
  std::string resources;  // static annotation for reports, e.g. "DSP 15% LUT 13%"
};

inline void validate(const VariantSpec& v) {
  if (v.stages.empty()) throw ConfigError("variant needs at least one stage");
  for (const auto& s : v.stages) {
    if (s.ii < 1) throw ConfigError("stage II must be >= 1: " + s.name);
    if (s.trip_count < 1) throw ConfigError("stage trip count must be >= 1: " + s.name);
  }
  if (v.engines < 1) throw ConfigError("engine count must be >= 1");
}

struct StageCost {
  std::string name;
  std::uint64_t per_element_cycles = 0;
};

struct CycleEstimate {
  std::uint64_t cycles = 0;
  double seconds = 0.0;
  std::uint64_t bottleneck_per_element = 0;  // unused in restart mode
  std::uint64_t access_cycles_per_element = 0;
  std::vector<StageCost> per_stage;
};

namespace detail {

// Single-shot latency of one stage: the last iteration issues at
// II*(trip-1) and completes a pipeline depth later.
inline std::uint64_t stage_latency(const StageSpec& s, const CostParams& p) {
  return p.stage_fill_depth + s.ii * (s.trip_count - 1);
}

// Steady-state spacing between elements once the element loop is fused into
// the stage; never worse than restarting the stage per element.
inline std::uint64_t stage_spacing(const StageSpec& s, const CostParams& p) {
  return std::min(s.ii * s.trip_count, stage_latency(s, p));
}

inline std::uint64_t access_cycles(const VariantSpec& v, const CostParams& p) {
  if (v.streamed_io || v.element_accesses == 0) return 0;
  if (v.contiguous_access) return p.access_request_cycles * ((v.element_accesses + 15) / 16);
  return p.access_request_cycles * v.element_accesses;
}

}  // namespace detail

inline CycleEstimate estimate_cycles(const VariantSpec& v, std::uint64_t num_elements,
                                     const CostParams& params = CostParams{}) {
  validate(params);
  validate(v);
  CycleEstimate est;
  est.access_cycles_per_element = detail::access_cycles(v, params);
  const std::uint64_t per_engine =
      (num_elements + v.engines - 1) / v.engines;

  if (v.restart_between_elements) {
    // The whole region drains and refills per element: stage latencies add
    // up, and every external access is serialized on top.
    std::uint64_t per_element = est.access_cycles_per_element;
    for (const auto& s : v.stages) {
      const std::uint64_t c = detail::stage_latency(s, params);
      est.per_stage.push_back({s.name, c});
      per_element += c;
    }
    est.bottleneck_per_element = per_element;
    est.cycles = per_element * per_engine;
  } else {
    // Stages run concurrently; the slowest stage (or the access path) sets
    // the pace and fills are paid once.
    std::uint64_t bottleneck = est.access_cycles_per_element;
    std::uint64_t fills = 0;
    for (const auto& s : v.stages) {
      const std::uint64_t c =
          s.fused_elements ? detail::stage_spacing(s, params) : detail::stage_latency(s, params);
      est.per_stage.push_back({s.name, c});
      bottleneck = std::max(bottleneck, c);
      fills += params.stage_fill_depth;
    }
    est.bottleneck_per_element = bottleneck;
    est.cycles = (num_elements > 0 ? fills : 0) + bottleneck * per_engine;
  }
  est.seconds = static_cast<double>(est.cycles) / params.clock_hz;
  return est;
}

// The optimization ladder: each entry keeps the previous one's changes and
// adds its own. Trip counts describe the matrix-assembly loop nests; the
// dof-level convective and viscous nests dominate early on, and after the
// engine rework the per-gauss streamed forms shrink them.
inline std::vector<VariantSpec> builtin_variants(const CostParams& params = CostParams{}) {
  const std::uint64_t dadd = params.dadd_latency_cycles;
  std::vector<VariantSpec> out;

  VariantSpec v1;
  v1.name = "initial-dataflow";
  v1.restart_between_elements = true;
  v1.stages = {{"gather", 4, 2},      {"cartesian", 16, 2}, {"gauss_values", 16, 2},
               {"tau_tim", 4, 2},     {"stabilization", 16, 2}, {"convective", 576, dadd},
               {"viscous", 192, dadd}};
  v1.resources = "DSP 15% LUT 13%";
  out.push_back(v1);

  VariantSpec v2 = v1;
  v2.name = "optimized-ii";
  for (auto& s : v2.stages) s.ii = 1;
  v2.resources = "DSP 91% LUT 40%";
  out.push_back(v2);

  VariantSpec v3 = v2;
  v3.name = "elements-loop-fused";
  v3.restart_between_elements = false;
  for (auto& s : v3.stages) s.fused_elements = true;
  v3.resources = "DSP 91% LUT 44%";
  out.push_back(v3);

  VariantSpec v4 = v3;
  v4.name = "engine-refactor";
  v4.element_accesses = 16;  // packed 512-bit result writes
  v4.resources = "DSP 97% LUT 48%";
  out.push_back(v4);

  // Streaming designs: the host feeds lanes and accumulates results, the
  // engine stages stream per gauss point so their per-element trips shrink.
  VariantSpec v5;
  v5.name = "streaming-initial";
  v5.streamed_io = true;
  v5.element_accesses = 0;
  v5.stages = {{"stream_in", 3, 64, true},   {"cartesian", 16, 1, true},
               {"gauss_values", 16, 1, true}, {"tau_tim", 4, 1, true},
               {"stabilization", 16, 1, true}, {"convective", 48, 1, true},
               {"viscous", 48, 1, true},      {"stream_out", 3, 1, true},
               {"host_scatter", 20, 6, true}};
  out.push_back(v5);

  VariantSpec v6 = v5;
  v6.name = "streamed-each-cycle";
  v6.stages[0] = {"stream_in", 2, 1, true};  // one lane per bank per cycle
  out.push_back(v6);

  VariantSpec v7 = v6;
  v7.name = "threaded-results";
  v7.stages.back() = {"host_scatter", 5, 6, true};  // accumulation split across threads
  out.push_back(v7);

  return out;
}

// Arithmetic counts per element. The nominal column is the hand-derived
// operation budget the design was sized against; measured is what one
// instrumented element actually performs, stage by stage.
struct FlopReport {
  struct Row {
    std::string stage;
    std::uint64_t measured = 0;
    std::uint64_t nominal = 0;
  };
  std::vector<Row> rows;
  std::uint64_t measured_total = 0;
  std::uint64_t nominal_total = 0;
};

inline constexpr std::uint64_t kNominalStageFlops[8] = {0, 664, 400, 76, 416, 3936, 1540, 20};

template <std::size_t G = kDefaultGauss>
FlopReport count_flops(const PhysParams& phys = PhysParams{},
                       const Quadrature<G>& quad = quadrature<G>()) {
  Mesh mesh = generate_synthetic_mesh(1, 4, 11);
  Mat34<Counted> elvel, elcod;
  GlobalOutputsT<Counted> acc(mesh.num_points);

  FlopReport rep;
  Counted::reset();
  auto take = [&rep](const char* stage, std::uint64_t nominal) {
    rep.rows.push_back({stage, Counted::ops, nominal});
    Counted::reset();
  };

  gather_into<Counted>(mesh, 0, elvel, elcod);
  take("gather", kNominalStageFlops[0]);

  const auto cart = cartesian_derivatives<Counted, G>(elcod, quad, 0);
  take("cartesian", kNominalStageFlops[1]);

  const auto gauss = gauss_point_values<Counted, G>(elvel, cart, quad, phys);
  take("gauss_values", kNominalStageFlops[2]);

  const auto tt = tau_and_tim<Counted, G>(cart, gauss, quad, phys);
  take("tau_tim", kNominalStageFlops[3]);

  const auto stab = element_matrices<Counted, G>(cart, gauss, phys);
  take("stabilization", kNominalStageFlops[4]);

  ElementMatrices<Counted> m;
  m.zero();
  for (std::size_t g = 0; g < G; ++g)
    add_convective_partial(m, convective_partial<Counted, G>(g, cart, gauss, tt, stab, quad, phys));
  take("convective", kNominalStageFlops[5]);

  std::array<NodeVec<Counted>, kNodesPerElem> s{};
  for (std::size_t g = 0; g < G; ++g) add_viscous_partial(s, viscous_partial<Counted, G>(g, cart, stab, phys));
  viscous_apply(m, s, elvel);
  take("viscous", kNominalStageFlops[6]);

  ElementResultT<Counted> r;
  r.elem_id = 0;
  r.elrbu = m.elrbu;
  r.eldtrho = tt.eldtrho;
  r.elmurho = tt.elmurho;
  scatter_add(acc, mesh, r);
  take("scatter", kNominalStageFlops[7]);

  for (const auto& row : rep.rows) {
    rep.measured_total += row.measured;
    rep.nominal_total += row.nominal;
  }
  return rep;
}

inline double gflops(std::uint64_t flops_per_element, std::uint64_t num_elements,
                     double wall_seconds) {
  if (!(wall_seconds > 0)) throw ConfigError("wall_seconds must be positive");
  return static_cast<double>(flops_per_element) * static_cast<double>(num_elements) /
         wall_seconds / 1e9;
}

}  // namespace flowforge
