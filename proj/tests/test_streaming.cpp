// Chunked lane transport and the overlapped host/device driver.

#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <json.hpp>

#include "flowforge/assembly.hpp"
#include "flowforge/compare.hpp"
#include "flowforge/streaming.hpp"

namespace ff = flowforge;
namespace fs = std::filesystem;

namespace {

ff::PipelineConfig pipe_cfg(std::size_t depth = 8, std::size_t engines = 1) {
  ff::PipelineConfig cfg;
  cfg.fifo_depth = depth;
  cfg.num_engines = engines;
  return cfg;
}

// Lane layout oracle: value-major rewrite of the packer. Values 0..11 of a
// 3x4 element matrix are dim-fastest (v = node * 3 + dim); the first six go
// to bank 0, the rest to bank 1, final two slots of each lane stay zero.
ff::PackedVariable pack_by_value(const ff::Mesh& mesh, std::uint64_t b, std::uint64_t e,
                                 bool velocity) {
  ff::PackedVariable out;
  const std::size_t n = static_cast<std::size_t>(e - b);
  out.bank0.assign(n, {});
  out.bank1.assign(n, {});
  for (std::size_t v = 0; v < 12; ++v)
    for (std::size_t l = 0; l < n; ++l) {
      const std::uint32_t node = mesh.lnods[b + l][v / 3];
      const double val = velocity ? mesh.veloc[v % 3][node] : mesh.coord[v % 3][node];
      (v < 6 ? out.bank0 : out.bank1)[l][v % 6] = val;
    }
  return out;
}

bool banks_equal(const ff::PackedVariable& a, const ff::PackedVariable& b) {
  return a.bank0 == b.bank0 && a.bank1 == b.bank1;
}

bool same_input_bits(const ff::ElementInput& a, const ff::ElementInput& b) {
  return a.elem_id == b.elem_id && std::memcmp(&a.elvel, &b.elvel, sizeof(a.elvel)) == 0 &&
         std::memcmp(&a.elcod, &b.elcod, sizeof(a.elcod)) == 0;
}

bool same_result_bits(const ff::ElementResult& a, const ff::ElementResult& b) {
  return a.elem_id == b.elem_id && std::memcmp(&a.elrbu, &b.elrbu, sizeof(a.elrbu)) == 0 &&
         std::memcmp(&a.eldtrho, &b.eldtrho, sizeof(a.eldtrho)) == 0 &&
         std::memcmp(&a.elmurho, &b.elmurho, sizeof(a.elmurho)) == 0;
}

// Four disjoint tetrahedra; element 2 is squashed flat on purpose.
ff::Mesh mesh_with_flat_element() {
  ff::Mesh m;
  m.num_elements = 4;
  m.num_points = 16;
  const double base[4][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int d = 0; d < 3; ++d) {
    m.coord[d].resize(16);
    m.veloc[d].assign(16, 0.01 * d);
  }
  for (std::uint32_t e = 0; e < 4; ++e) {
    m.lnods.push_back({4 * e, 4 * e + 1, 4 * e + 2, 4 * e + 3});
    for (std::uint32_t n = 0; n < 4; ++n)
      for (int d = 0; d < 3; ++d) {
        double c = base[n][d] + 3.0 * e;
        if (e == 2 && d == 2) c = 3.0 * e;  // flatten onto a plane
        m.coord[d][4 * e + n] = c;
      }
  }
  return m;
}

struct TempPrefix {
  fs::path prefix;
  explicit TempPrefix(const std::string& tag) {
    prefix = fs::temp_directory_path() /
             ("ff_lanes_" + tag + "_" + std::to_string(::getpid()));
  }
  ~TempPrefix() {
    std::error_code ec;
    fs::remove(prefix.string() + ".bin", ec);
    fs::remove(prefix.string() + ".json", ec);
  }
};

}  // namespace

TEST_CASE("chunk plans tile the element range exactly") {
  auto plan = ff::plan_chunks(10, 4);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0].chunk_id == 0);
  CHECK(plan[0].elem_begin == 0);
  CHECK(plan[0].elem_end == 4);
  CHECK(plan[1].elem_begin == 4);
  CHECK(plan[1].elem_end == 8);
  CHECK(plan[2].chunk_id == 2);
  CHECK(plan[2].elem_begin == 8);
  CHECK(plan[2].elem_end == 10);

  auto big = ff::plan_chunks(100000, 4096);
  REQUIRE(big.size() == 25);
  CHECK(big.back().elem_begin == 98304);
  CHECK(big.back().elem_end == 100000);

  CHECK_THROWS_AS(ff::plan_chunks(10, 0), ff::ConfigError);
}

TEST_CASE("schedule resolution fills in derived defaults") {
  ff::StreamScheduleConfig s;
  s.worker_count = 0;
  auto r = ff::resolve_schedule(s, 100000);
  CHECK(r.worker_count >= 1);

  s = {};
  s.chunk_size = 0;
  s.worker_count = 2;
  r = ff::resolve_schedule(s, 1000000);
  CHECK(r.chunk_size == 1000000 / 8);

  s.chunk_size = 0;
  r = ff::resolve_schedule(s, 100);
  CHECK(r.chunk_size == 1024);  // floor kicks in for small meshes

  s = {};
  s.queue_capacity = 0;
  CHECK_THROWS_AS(ff::resolve_schedule(s, 100), ff::ConfigError);
}

TEST_CASE("lane packing matches an independent value-major packer") {
  const auto mesh = ff::generate_synthetic_mesh(40, 25, 19);
  const auto packed = ff::pack_chunk(mesh, 5, 23);
  CHECK(packed.count() == 18);
  CHECK(banks_equal(packed.elvel, pack_by_value(mesh, 5, 23, true)));
  CHECK(banks_equal(packed.elcod, pack_by_value(mesh, 5, 23, false)));
}

TEST_CASE("pad slots stay zero and carry no information") {
  const auto mesh = ff::generate_synthetic_mesh(30, 20, 23);
  ff::Chunk chunk{1, 4, 20, ff::pack_chunk(mesh, 4, 20)};

  for (const auto* var : {&chunk.packed.elvel, &chunk.packed.elcod})
    for (const auto* bank : {&var->bank0, &var->bank1})
      for (const auto& lane : *bank) {
        CHECK(lane[6] == 0.0);
        CHECK(lane[7] == 0.0);
      }

  std::vector<ff::ElementInput> before;
  for (std::uint64_t l = 0; l < 16; ++l) before.push_back(ff::unpack_element(chunk, l));

  // Scribble over the pad slots; nothing downstream may notice.
  std::mt19937_64 rng(99);
  for (auto* var : {&chunk.packed.elvel, &chunk.packed.elcod})
    for (auto* bank : {&var->bank0, &var->bank1})
      for (auto& lane : *bank) {
        lane[6] = std::ldexp(double(rng() >> 11), -20);
        lane[7] = -std::ldexp(double(rng() >> 11), -20);
      }

  for (std::uint64_t l = 0; l < 16; ++l) {
    const auto after = ff::unpack_element(chunk, l);
    CAPTURE(l);
    REQUIRE(same_input_bits(before[l], after));
  }
}

TEST_CASE("packed elements reproduce the gathered inputs bit for bit") {
  const auto mesh = ff::generate_synthetic_mesh(64, 30, 29);
  ff::Chunk chunk{0, 10, 42, ff::pack_chunk(mesh, 10, 42)};
  for (std::uint64_t l = 0; l < 32; ++l) {
    const auto got = ff::unpack_element(chunk, l);
    const auto want = ff::gather_element(mesh, 10 + l);
    CAPTURE(l);
    CHECK(got.elem_id == 10 + l);
    REQUIRE(same_input_bits(got, want));
  }
}

TEST_CASE("result lanes round-trip every element of a chunk") {
  const auto mesh = ff::generate_synthetic_mesh(21, 15, 31);
  ff::PhysParams phys;
  const auto& quad = ff::quadrature<ff::kDefaultGauss>();

  auto lanes = ff::make_result_lanes(3, 0, mesh.num_elements);
  CHECK(lanes.rbu.size() == (21 * 12 + 7) / 8);
  CHECK(lanes.dtrho.size() == (21 * 4 + 7) / 8);
  CHECK(lanes.murho.size() == (21 * 4 + 7) / 8);

  std::vector<ff::ElementResult> refs;
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    const auto r = ff::assemble_element<ff::kDefaultGauss>(ff::gather_element(mesh, e), phys, quad);
    ff::pack_result(lanes, e, r);
    refs.push_back(r);
  }
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    auto back = ff::unpack_result(lanes, e);
    CAPTURE(e);
    REQUIRE(same_result_bits(back, refs[e]));
  }

  // Spot-check the flat layout: element 0's first lane is dim-fastest.
  CHECK(lanes.rbu[0][0] == refs[0].elrbu[0][0]);
  CHECK(lanes.rbu[0][1] == refs[0].elrbu[1][0]);
  CHECK(lanes.rbu[0][2] == refs[0].elrbu[2][0]);
  CHECK(lanes.rbu[0][3] == refs[0].elrbu[0][1]);
  CHECK(lanes.dtrho[0][0] == refs[0].eldtrho[0]);
}

TEST_CASE("lane dumps write fixed-width banks and a manifest") {
  const auto mesh = ff::generate_synthetic_mesh(12, 10, 37);
  ff::Chunk chunk{5, 2, 12, ff::pack_chunk(mesh, 2, 12)};
  TempPrefix tp("dump");
  ff::dump_lanes(chunk, tp.prefix.string());

  const auto bin = tp.prefix.string() + ".bin";
  REQUIRE(fs::exists(bin));
  CHECK(fs::file_size(bin) == 4 * 10 * 64);  // 4 banks, 10 lanes, 64 B each

  std::ifstream jf(tp.prefix.string() + ".json");
  REQUIRE(jf.good());
  const auto manifest = nlohmann::json::parse(jf);
  REQUIRE(manifest.is_array());
  REQUIRE(manifest.size() == 2);
  CHECK(manifest[0]["variable"] == "elvel");
  CHECK(manifest[1]["variable"] == "elcod");
  for (const auto& entry : manifest) {
    CHECK(entry["chunk_id"] == 5);
    CHECK(entry["elem_begin"] == 2);
    CHECK(entry["elem_end"] == 12);
  }
}

TEST_CASE("host geometry offload is worker-count invariant") {
  const auto mesh = ff::generate_synthetic_mesh(50, 22, 41);
  ff::Chunk chunk{0, 0, 50, ff::pack_chunk(mesh, 0, 50)};
  const auto& quad = ff::quadrature<ff::kDefaultGauss>();

  const auto one = ff::host_cartesian_offload(chunk, 1);
  REQUIRE(one.size() == 50);
  for (std::uint64_t e = 0; e < 50; ++e) {
    const auto direct =
        ff::cartesian_derivatives<double, ff::kDefaultGauss>(ff::gather_element(mesh, e).elcod,
                                                             quad, e);
    REQUIRE(std::memcmp(&one[e], &direct, sizeof(direct)) == 0);
  }
  for (std::size_t workers : {2u, 3u, 8u}) {
    const auto many = ff::host_cartesian_offload(chunk, workers);
    REQUIRE(many.size() == one.size());
    CAPTURE(workers);
    CHECK(std::memcmp(many.data(), one.data(), one.size() * sizeof(one[0])) == 0);
  }
}

TEST_CASE("offload reports the lowest degenerate element id") {
  auto mesh = mesh_with_flat_element();
  // Flatten element 1 as well so two candidates race; 1 must win.
  for (std::uint32_t n = 4; n < 8; ++n) mesh.coord[2][n] = 0.0;
  ff::Chunk chunk{0, 0, 4, ff::pack_chunk(mesh, 0, 4)};
  for (std::size_t workers : {1u, 2u, 4u}) {
    CAPTURE(workers);
    try {
      (void)ff::host_cartesian_offload(chunk, workers);
      FAIL("expected a degenerate-element failure");
    } catch (const ff::DegenerateElementError& e) {
      CHECK(e.elem_id == 1);
    }
  }
}

TEST_CASE("accumulation disciplines agree on the assembled fields") {
  const auto mesh = ff::generate_synthetic_mesh(200, 60, 43);
  ff::PhysParams phys;
  const auto& quad = ff::quadrature<ff::kDefaultGauss>();
  std::vector<ff::ElementResult> results;
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e)
    results.push_back(ff::assemble_element<ff::kDefaultGauss>(ff::gather_element(mesh, e), phys, quad));

  ff::GlobalOutputs ref(mesh.num_points);
  for (const auto& r : results) ff::scatter_add(ref, mesh, r);

  SECTION("serial is the plain loop") {
    ff::GlobalOutputs out(mesh.num_points);
    ff::accumulate_results(out, mesh, results, ff::AccumulationMode::serial);
    CHECK(ff::bit_identical(out, ref));
  }

  SECTION("sharded ownership keeps element order per point") {
    for (std::size_t workers : {1u, 2u, 3u, 5u}) {
      ff::GlobalOutputs out(mesh.num_points);
      ff::accumulate_results(out, mesh, results, ff::AccumulationMode::sharded, workers);
      CAPTURE(workers);
      CHECK(ff::bit_identical(out, ref));
    }
  }

  SECTION("stripe locking reorders but stays within tolerance") {
    for (std::size_t workers : {1u, 3u}) {
      ff::GlobalOutputs out(mesh.num_points);
      ff::accumulate_results(out, mesh, results, ff::AccumulationMode::locked, workers);
      CAPTURE(workers);
      CHECK(ff::max_rel_deviation(out, ref) <= 1e-12);
    }
  }

  SECTION("zero workers is rejected") {
    ff::GlobalOutputs out(mesh.num_points);
    CHECK_THROWS_AS(ff::accumulate_results(out, mesh, results, ff::AccumulationMode::serial, 0),
                    ff::ConfigError);
  }
}

TEST_CASE("accumulation mode names round-trip") {
  using M = ff::AccumulationMode;
  for (M m : {M::serial, M::locked, M::sharded})
    CHECK(ff::accumulation_mode_from_string(ff::to_string(m)) == m);
  CHECK_THROWS_AS(ff::accumulation_mode_from_string("lockfree"), ff::ConfigError);
}

TEST_CASE("streamed execution reproduces the sequential assembly") {
  const auto mesh = ff::generate_synthetic_mesh(317, 97, 33);
  ff::PhysParams phys;
  const auto ref = ff::assemble_all(mesh, phys);

  ff::StreamScheduleConfig base;
  base.chunk_size = 64;
  base.worker_count = 2;

  SECTION("one chunk stream, serial accumulation, is bit-identical") {
    auto s = base;
    s.chunk_size = mesh.num_elements;
    s.accumulation_mode = ff::AccumulationMode::serial;
    const auto out = ff::run_streamed(mesh, phys, pipe_cfg(), s);
    CHECK(ff::bit_identical(out, ref));
  }

  SECTION("serial accumulation is bit-identical at any chunking") {
    for (std::uint64_t chunk : {1u, 13u, 64u, 317u}) {
      auto s = base;
      s.chunk_size = chunk;
      s.accumulation_mode = ff::AccumulationMode::serial;
      const auto out = ff::run_streamed(mesh, phys, pipe_cfg(), s);
      CAPTURE(chunk);
      CHECK(ff::bit_identical(out, ref));
    }
  }

  SECTION("sharded accumulation matches serial bit for bit") {
    auto s = base;
    s.accumulation_mode = ff::AccumulationMode::sharded;
    s.worker_count = 3;
    const auto out = ff::run_streamed(mesh, phys, pipe_cfg(), s);
    CHECK(ff::bit_identical(out, ref));
  }

  SECTION("the full mode matrix stays within verification tolerance") {
    for (auto mode : {ff::AccumulationMode::serial, ff::AccumulationMode::locked,
                      ff::AccumulationMode::sharded})
      for (std::size_t engines : {1u, 2u})
        for (bool offload : {false, true}) {
          auto s = base;
          s.accumulation_mode = mode;
          s.host_offload_cartesian = offload;
          const auto out = ff::run_streamed(mesh, phys, pipe_cfg(4, engines), s);
          CAPTURE(ff::to_string(mode), engines, offload);
          CHECK(ff::max_rel_deviation(out, ref) <= 1e-12);
        }
  }

  SECTION("forcing the phases serial changes nothing") {
    auto s = base;
    s.force_serial_phases = true;
    s.accumulation_mode = ff::AccumulationMode::serial;
    const auto serial_out = ff::run_streamed(mesh, phys, pipe_cfg(), s);
    CHECK(ff::bit_identical(serial_out, ref));

    s.host_offload_cartesian = true;
    s.accumulation_mode = ff::AccumulationMode::sharded;
    const auto off_out = ff::run_streamed(mesh, phys, pipe_cfg(), s);
    CHECK(ff::max_rel_deviation(off_out, ref) <= 1e-12);
  }
}

TEST_CASE("a degenerate element fails the stream with its id") {
  const auto mesh = mesh_with_flat_element();
  ff::PhysParams phys;
  ff::StreamScheduleConfig s;
  s.chunk_size = 2;
  for (bool offload : {false, true}) {
    CAPTURE(offload);
    auto sc = s;
    sc.host_offload_cartesian = offload;
    try {
      (void)ff::run_streamed(mesh, phys, pipe_cfg(), sc);
      FAIL("expected a degenerate-element failure");
    } catch (const ff::DegenerateElementError& e) {
      CHECK(e.elem_id == 2);
      CHECK(std::string(e.what()).find("degenerate element 2") != std::string::npos);
    }
  }
}

TEST_CASE("stream schedule validation happens before any work") {
  const auto mesh = ff::generate_synthetic_mesh(8, 8, 3);
  ff::StreamScheduleConfig s;
  s.queue_capacity = 0;
  CHECK_THROWS_AS(ff::run_streamed(mesh, ff::PhysParams{}, pipe_cfg(), s), ff::ConfigError);
}
