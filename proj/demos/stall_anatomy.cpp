// Why stream routing matters: the unrouted stage graph forwards elvel past
// several stages over skip edges, and its input stage writes a burst of
// elvel values before the matching elcod. At FIFO depth 1 that burst wedges
// the whole graph. This program probes a few depths and prints the watchdog's
// diagnosis of the wedge.

#include <cstdio>

#include "flowforge/dataflow.hpp"

using namespace flowforge;

int main() {
  const auto elements = demo_element_sequence(12);

  std::printf("skip edges in the unrouted graph:\n");
  {
    PipelineConfig cfg;
    cfg.routing_enabled = false;
    Pipeline<> probe(cfg, PhysParams{});
    for (const auto& e : routing_violations(probe.descriptor()))
      std::printf("  %-34s %s -> %s (span %zu)\n", e.stream.c_str(), e.producer.c_str(),
                  e.consumer.c_str(), e.span);
    probe.close_input();
    probe.join();
  }

  const auto report = find_stall(elements);
  for (const auto& p : report.probes)
    std::printf("depth %zu: %s\n", p.depth, p.stalled ? "STALL" : "ok");
  if (report.first_safe_depth)
    std::printf("first safe depth: %zu\n", *report.first_safe_depth);

  for (const auto& p : report.probes)
    if (p.stalled) {
      std::printf("\nwatchdog diagnosis at depth %zu:\n%s", p.depth, p.diagnosis.c_str());
      break;
    }

  std::printf("\nrouted graph at depth 1 over the same elements: ");
  PipelineConfig cfg;
  cfg.fifo_depth = 1;
  const auto out = run_pipeline(cfg, PhysParams{}, elements);
  std::printf("%zu results, no stall\n", out.size());
  return 0;
}
