// End-to-end tour: assemble a mesh three ways (sequential, staged pipeline,
// chunked streaming), confirm they agree, then print the cycle model's view
// of the design ladder for the same element count.

#include <chrono>
#include <cstdio>

#include "flowforge/compare.hpp"
#include "flowforge/dataflow.hpp"
#include "flowforge/perfmodel.hpp"
#include "flowforge/streaming.hpp"

using namespace flowforge;

namespace {

template <class Fn>
double timed(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main() {
  const Mesh mesh = generate_synthetic_mesh(20000, 4000, 42);
  const PhysParams phys;
  std::printf("mesh: %llu elements, %llu points\n",
              static_cast<unsigned long long>(mesh.num_elements),
              static_cast<unsigned long long>(mesh.num_points));

  GlobalOutputs ref;
  const double t_ref = timed([&] { ref = assemble_all(mesh, phys); });
  std::printf("sequential:        %.3f s\n", t_ref);

  PipelineConfig pcfg;
  pcfg.num_engines = 2;
  GlobalOutputs piped;
  const double t_pipe = timed([&] { piped = assemble_with_pipeline(mesh, pcfg, phys); });
  std::printf("pipeline (2 eng):  %.3f s, max rel dev %.3e\n", t_pipe,
              max_rel_deviation(piped, ref));

  StreamScheduleConfig scfg;
  scfg.chunk_size = 4096;
  scfg.worker_count = 2;
  GlobalOutputs streamed;
  const double t_str = timed([&] { streamed = run_streamed(mesh, phys, pcfg, scfg); });
  std::printf("streamed (chunks): %.3f s, max rel dev %.3e\n", t_str,
              max_rel_deviation(streamed, ref));

  const std::uint64_t flops = count_flops<>().measured_total;
  std::printf("measured %llu flops/element -> %.2f GFLOP/s sequential\n",
              static_cast<unsigned long long>(flops),
              gflops(flops, mesh.num_elements, t_ref));

  std::printf("\ncycle model at %llu elements:\n",
              static_cast<unsigned long long>(mesh.num_elements));
  for (const auto& v : builtin_variants()) {
    const auto est = estimate_cycles(v, mesh.num_elements);
    std::printf("  %-22s %10.3f ms%s%s\n", v.name.c_str(), est.seconds * 1e3,
                v.resources.empty() ? "" : "  ", v.resources.c_str());
  }
  return 0;
}
