// Acceptance gate: one line per criterion, exit 0 only if none fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "flowforge/assembly.hpp"
#include "flowforge/compare.hpp"
#include "flowforge/dataflow.hpp"
#include "flowforge/mesh.hpp"
#include "flowforge/perfmodel.hpp"
#include "flowforge/streaming.hpp"

namespace ff = flowforge;

namespace {

int g_failures = 0;

void report(int n, const std::string& name, const std::string& status,
            const std::string& detail) {
  std::printf("[%d] %-42s %s (%s)\n", n, name.c_str(), status.c_str(), detail.c_str());
  if (status == "FAIL") ++g_failures;
}

void criterion(int n, const std::string& name,
               const std::function<std::pair<bool, std::string>()>& body) {
  try {
    auto [ok, detail] = body();
    report(n, name, ok ? "PASS" : "FAIL", detail);
  } catch (const std::exception& e) {
    report(n, name, "FAIL", std::string("exception: ") + e.what());
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

ff::PipelineConfig routed(std::size_t depth, std::size_t engines = 1) {
  ff::PipelineConfig cfg;
  cfg.fifo_depth = depth;
  cfg.num_engines = engines;
  return cfg;
}

double rng_unit(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Random tetrahedron with comfortably positive volume.
void random_element(std::mt19937_64& eng, ff::Mat34<double>& elvel, ff::Mat34<double>& elcod) {
  while (true) {
    for (int d = 0; d < 3; ++d)
      for (int n = 0; n < 4; ++n) elcod[d][n] = rng_unit(eng);
    double j[3][3];
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) j[i][k] = elcod[i][k + 1] - elcod[i][0];
    const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                       j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                       j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    if (det > 1e-3) break;
  }
  for (int d = 0; d < 3; ++d)
    for (int n = 0; n < 4; ++n) elvel[d][n] = 2.0 * rng_unit(eng) - 1.0;
}

double rel_dev(double got, double want) {
  const double denom = std::max(std::fabs(want), 1e-30);
  return std::fabs(got - want) / denom;
}

// ---- criterion bodies ------------------------------------------------------

std::pair<bool, std::string> equivalence_matrix() {
  const ff::PhysParams phys;
  const std::pair<std::uint64_t, std::uint64_t> sizes[] = {
      {1, 4}, {10, 8}, {1200, 1280}, {100000, 15768}};
  double worst = 0.0;
  int runs = 0;
  for (auto [e, p] : sizes) {
    const ff::Mesh mesh = ff::generate_synthetic_mesh(e, p, 42);
    const ff::GlobalOutputs ref = ff::assemble_all(mesh, phys);
    for (std::size_t engines : {1u, 2u, 3u}) {
      const auto got = ff::assemble_with_pipeline(mesh, routed(8, engines), phys);
      worst = std::max(worst, ff::max_rel_deviation(got, ref));
      ++runs;
    }
    for (std::size_t engines : {1u, 2u, 3u})
      for (auto mode : {ff::AccumulationMode::serial, ff::AccumulationMode::locked,
                        ff::AccumulationMode::sharded})
        for (bool offload : {false, true}) {
          ff::StreamScheduleConfig s;
          s.chunk_size = 4096;
          s.worker_count = 2;
          s.accumulation_mode = mode;
          s.host_offload_cartesian = offload;
          const auto got = ff::run_streamed(mesh, phys, routed(8, engines), s);
          worst = std::max(worst, ff::max_rel_deviation(got, ref));
          ++runs;
        }
  }
  return {worst <= 1e-12,
          std::to_string(runs) + " runs over 4 mesh sizes, worst rel dev " + fmt(worst)};
}

std::pair<bool, std::string> single_chunk_bit_identity() {
  const ff::PhysParams phys;
  const ff::Mesh mesh = ff::generate_synthetic_mesh(1200, 1280, 42);
  const ff::GlobalOutputs ref = ff::assemble_all(mesh, phys);
  ff::StreamScheduleConfig s;
  s.chunk_size = mesh.num_elements;
  s.accumulation_mode = ff::AccumulationMode::serial;
  const auto got = ff::run_streamed(mesh, phys, routed(8, 1), s);
  const bool ok = ff::bit_identical(got, ref);
  return {ok, ok ? "one chunk, one engine, serial: outputs bit-identical"
                 : "outputs differ from the sequential engine"};
}

std::pair<bool, std::string> unit_tet_analytics() {
  const auto& quad = ff::quadrature<ff::kDefaultGauss>();
  ff::Mat34<double> elcod{};
  elcod[0] = {0, 1, 0, 0};
  elcod[1] = {0, 0, 1, 0};
  elcod[2] = {0, 0, 0, 1};
  const auto cart = ff::cartesian_derivatives<double, ff::kDefaultGauss>(elcod, quad);

  double vol = 0.0;
  for (std::size_t g = 0; g < ff::kDefaultGauss; ++g) vol += cart.gpvol[g];
  if (std::fabs(vol - 1.0 / 6.0) > 1e-15)
    return {false, "quadrature volume off: " + fmt(std::fabs(vol - 1.0 / 6.0))};

  const double expect[3][4] = {{-1, 1, 0, 0}, {-1, 0, 1, 0}, {-1, 0, 0, 1}};
  for (std::size_t g = 0; g < ff::kDefaultGauss; ++g)
    for (int d = 0; d < 3; ++d)
      for (int n = 0; n < 4; ++n)
        if (cart.gpcar_g[g][d][n] != expect[d][n])
          return {false, "unit-tet gradient not exact"};

  ff::PhysParams phys;
  ff::Mat34<double> elvel{};
  const auto r = ff::assemble_element<double, ff::kDefaultGauss>(0, elvel, elcod, phys, quad);
  const double want = -9.81 / 24.0;
  double worst = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (r.elrbu[0][n] != 0.0 || r.elrbu[1][n] != 0.0)
      return {false, "gravity-only load has in-plane components"};
    worst = std::max(worst, rel_dev(r.elrbu[2][n], want));
  }
  if (worst > 1e-14) return {false, "hydrostatic z-load off by " + fmt(worst)};
  return {true, "volume 1/6, exact gradients, z-load -9.81/24 within " + fmt(worst)};
}

template <std::size_t G>
ff::ElementMatrices<double> conv_both_forms(const ff::Mat34<double>& elvel,
                                            const ff::Mat34<double>& elcod, bool streamed) {
  const auto& quad = ff::quadrature<G>();
  const ff::PhysParams phys;
  const auto cart = ff::cartesian_derivatives<double, G>(elcod, quad);
  const auto gauss = ff::gauss_point_values<double, G>(elvel, cart, quad, phys);
  const auto tt = ff::tau_and_tim<double, G>(cart, gauss, quad, phys);
  const auto stab = ff::element_matrices<double, G>(cart, gauss, phys);
  ff::ElementMatrices<double> m;
  m.zero();
  if (streamed) {
    for (std::size_t g = 0; g < G; ++g)
      ff::add_convective_partial(m, ff::convective_partial<double, G>(g, cart, gauss, tt, stab,
                                                                      quad, phys));
  } else {
    ff::convective_accumulate<double, G>(cart, gauss, tt, stab, quad, phys, m);
  }
  return m;
}

std::pair<bool, std::string> convective_forms() {
  std::mt19937_64 eng(2024);
  ff::Mat34<double> elvel, elcod;
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    random_element(eng, elvel, elcod);
    const auto acc = conv_both_forms<ff::kDefaultGauss>(elvel, elcod, false);
    const auto str = conv_both_forms<ff::kDefaultGauss>(elvel, elcod, true);
    // The two forms reassociate identical addends, so near-cancelled entries
    // carry rounding noise; measure each error against its matrix magnitude.
    double scale_auu = 0.0, scale_rbu = 0.0;
    for (std::size_t j = 0; j < ff::kDofPerElem; ++j)
      for (std::size_t i = 0; i < ff::kDofPerElem; ++i)
        scale_auu = std::max(scale_auu, std::fabs(acc.elauu[j][i]));
    for (int d = 0; d < 3; ++d)
      for (int n = 0; n < 4; ++n) scale_rbu = std::max(scale_rbu, std::fabs(acc.elrbu[d][n]));
    for (std::size_t j = 0; j < ff::kDofPerElem; ++j)
      for (std::size_t i = 0; i < ff::kDofPerElem; ++i)
        worst = std::max(worst, std::fabs(str.elauu[j][i] - acc.elauu[j][i]) /
                                    std::max(scale_auu, 1e-300));
    for (int d = 0; d < 3; ++d)
      for (int n = 0; n < 4; ++n)
        worst = std::max(worst, std::fabs(str.elrbu[d][n] - acc.elrbu[d][n]) /
                                    std::max(scale_rbu, 1e-300));
  }
  if (worst > 1e-12) return {false, "forms disagree by " + fmt(worst) + " at 4 Gauss points"};

  for (int trial = 0; trial < 500; ++trial) {
    random_element(eng, elvel, elcod);
    const auto acc = conv_both_forms<1>(elvel, elcod, false);
    const auto str = conv_both_forms<1>(elvel, elcod, true);
    if (std::memcmp(&acc, &str, sizeof(acc)) != 0)
      return {false, "single-point forms not bit-exact"};
  }
  return {true, "10000 elements within " + fmt(worst) + "; bit-exact at one Gauss point"};
}

std::pair<bool, std::string> cost_ladder() {
  const auto ladder = ff::builtin_variants();
  std::vector<std::uint64_t> cycles;
  for (const auto& v : ladder) cycles.push_back(ff::estimate_cycles(v, 100000).cycles);
  for (std::size_t i = 1; i < cycles.size(); ++i)
    if (cycles[i] >= cycles[i - 1])
      return {false, ladder[i].name + " does not improve on " + ladder[i - 1].name};

  ff::VariantSpec probe;
  probe.name = "probe";
  probe.streamed_io = true;
  probe.element_accesses = 0;
  probe.stages.push_back({"loop", 576, 7, true});
  const double slow = ff::estimate_cycles(probe, 100000).seconds;
  probe.stages[0].ii = 1;
  const double fast = ff::estimate_cycles(probe, 100000).seconds;
  const double ratio = slow / fast;
  if (ratio < 6.5 || ratio > 7.0)
    return {false, "ii 7->1 speedup " + fmt(ratio) + " outside [6.5, 7.0]"};
  return {true, std::to_string(ladder.size()) + " variants strictly decreasing; ii speedup " +
                    fmt(ratio)};
}

std::pair<bool, std::string> flop_budget() {
  const auto rep = ff::count_flops<>();
  if (rep.rows.size() != 8) return {false, "expected 8 stage rows"};
  for (std::size_t i = 0; i < 8; ++i)
    if (rep.rows[i].nominal != ff::kNominalStageFlops[i])
      return {false, "nominal column drifted at " + rep.rows[i].stage};
  if (rep.rows[0].measured != 0)
    return {false, "gather measured " + std::to_string(rep.rows[0].measured) + " flops"};
  if (rep.rows[7].measured != 20)
    return {false, "scatter measured " + std::to_string(rep.rows[7].measured) + " flops"};
  return {true, "nominal row intact; gather 0 and scatter 20 as measured, totals " +
                    std::to_string(rep.measured_total) + "/" + std::to_string(rep.nominal_total)};
}

std::pair<bool, std::string> routing_behavior() {
  const ff::PhysParams phys;

  const auto crafted = ff::demo_element_sequence(12, 7);
  ff::PipelineConfig skip;
  skip.routing_enabled = false;
  skip.fifo_depth = 1;
  skip.watchdog_timeout = std::chrono::milliseconds(500);
  bool stalled = false;
  try {
    (void)ff::run_pipeline(skip, phys, crafted);
  } catch (const ff::WatchdogStallError&) {
    stalled = true;
  }
  if (!stalled) return {false, "unrouted depth-1 run did not stall on 12 elements"};

  const auto elements = ff::demo_element_sequence(1000, 11);
  const auto ref = ff::run_pipeline(routed(1), phys, elements);
  if (ref.size() != elements.size()) return {false, "depth-1 routed run dropped elements"};
  for (std::size_t depth : {2u, 4u, 8u, 16u}) {
    const auto got = ff::run_pipeline(routed(depth), phys, elements);
    if (got.size() != ref.size()) return {false, "dropped elements at depth " + std::to_string(depth)};
    for (std::size_t i = 0; i < got.size(); ++i)
      if (std::memcmp(&got[i], &ref[i], sizeof(got[i])) != 0)
        return {false, "outputs changed at depth " + std::to_string(depth)};
  }
  return {true, "unrouted stalls at depth 1; routed identical across depths 1,2,4,8,16"};
}

std::pair<bool, std::string> concurrency_speedups() {
  const ff::PhysParams phys;
  const ff::Mesh mesh = ff::generate_synthetic_mesh(100000, 15768, 42);

  auto best_of = [](int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      best = std::min(best,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };

  ff::StreamScheduleConfig overlapped;
  overlapped.worker_count = 4;
  ff::StreamScheduleConfig serial_phases = overlapped;
  serial_phases.force_serial_phases = true;

  const double t_overlap =
      best_of(3, [&] { (void)ff::run_streamed(mesh, phys, routed(8, 1), overlapped); });
  const double t_serial =
      best_of(3, [&] { (void)ff::run_streamed(mesh, phys, routed(8, 1), serial_phases); });

  const double t_one = best_of(3, [&] { (void)ff::assemble_with_pipeline(mesh, routed(8, 1), phys); });
  const double t_two = best_of(3, [&] { (void)ff::assemble_with_pipeline(mesh, routed(8, 2), phys); });

  const double overlap_ratio = t_overlap / t_serial;
  const double engine_speedup = t_one / t_two;
  const bool ok = overlap_ratio <= 0.8 && engine_speedup >= 1.5;
  return {ok, "overlap/serial " + fmt(overlap_ratio) + " (need <= 0.8), 2-engine speedup " +
                  fmt(engine_speedup) + " (need >= 1.5)"};
}

std::pair<bool, std::string> lane_transport() {
  const ff::Mesh mesh = ff::generate_synthetic_mesh(64, 30, 29);
  const ff::PhysParams phys;
  const auto& quad = ff::quadrature<ff::kDefaultGauss>();

  ff::Chunk chunk{0, 0, mesh.num_elements, ff::pack_chunk(mesh, 0, mesh.num_elements)};
  std::vector<ff::ElementInput> inputs;
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    const auto got = ff::unpack_element(chunk, e);
    const auto want = ff::gather_element(mesh, e);
    if (got.elem_id != want.elem_id || std::memcmp(&got.elvel, &want.elvel, sizeof(got.elvel)) ||
        std::memcmp(&got.elcod, &want.elcod, sizeof(got.elcod)))
      return {false, "input lanes not bit-exact at element " + std::to_string(e)};
    inputs.push_back(got);
  }

  auto lanes = ff::make_result_lanes(0, 0, mesh.num_elements);
  std::vector<ff::ElementResult> results;
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    results.push_back(ff::assemble_element<ff::kDefaultGauss>(inputs[e], phys, quad));
    ff::pack_result(lanes, e, results[e]);
  }
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    const auto back = ff::unpack_result(lanes, e);
    if (std::memcmp(&back.elrbu, &results[e].elrbu, sizeof(back.elrbu)) ||
        std::memcmp(&back.eldtrho, &results[e].eldtrho, sizeof(back.eldtrho)) ||
        std::memcmp(&back.elmurho, &results[e].elmurho, sizeof(back.elmurho)))
      return {false, "result lanes not bit-exact at element " + std::to_string(e)};
  }

  // Scribble the pad slots; unpacked inputs and downstream results must not move.
  std::mt19937_64 eng(5);
  for (auto* var : {&chunk.packed.elvel, &chunk.packed.elcod})
    for (auto* bank : {&var->bank0, &var->bank1})
      for (auto& lane : *bank) {
        lane[6] = rng_unit(eng) * 1e9;
        lane[7] = -rng_unit(eng) * 1e9;
      }
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    const auto got = ff::unpack_element(chunk, e);
    if (std::memcmp(&got.elvel, &inputs[e].elvel, sizeof(got.elvel)) ||
        std::memcmp(&got.elcod, &inputs[e].elcod, sizeof(got.elcod)))
      return {false, "pad fuzz leaked into element " + std::to_string(e)};
    const auto r = ff::assemble_element<ff::kDefaultGauss>(got, phys, quad);
    if (std::memcmp(&r.elrbu, &results[e].elrbu, sizeof(r.elrbu)))
      return {false, "pad fuzz changed assembled results at element " + std::to_string(e)};
  }
  return {true, "64 elements round-trip bit-exact; pad fuzz is invisible"};
}

}  // namespace

int main() {
  std::printf("acceptance: staged assembly engines and cost model\n");

  criterion(1, "sequential-vs-concurrent equivalence", equivalence_matrix);
  criterion(2, "single-chunk stream bit identity", single_chunk_bit_identity);
  criterion(3, "unit tetrahedron analytics", unit_tet_analytics);
  criterion(4, "convective form agreement", convective_forms);
  criterion(5, "cost ladder ordering and ii speedup", cost_ladder);
  criterion(6, "flop budget per stage", flop_budget);
  criterion(7, "routing stall and depth invariance", routing_behavior);

  const unsigned cores = std::thread::hardware_concurrency();
  if (cores < 4)
    report(8, "phase overlap and engine scaling", "SKIP",
           "needs >= 4 cores, have " + std::to_string(cores));
  else
    criterion(8, "phase overlap and engine scaling", concurrency_speedups);

  criterion(9, "lane transport integrity", lane_transport);

  if (g_failures == 0) {
    std::printf("acceptance: all criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}
