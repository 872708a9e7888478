#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowforge/assembly.hpp"
#include "flowforge/channel.hpp"
#include "flowforge/core.hpp"
#include "flowforge/dataflow.hpp"
#include "flowforge/mesh.hpp"
#include "flowforge/mesh_io.hpp"

namespace flowforge {

// Host-side streaming around the staged engine: elements are gathered into
// chunks, packed into 512-bit lanes, fed through a long-lived pipeline, and
// the results are unpacked and accumulated back into the global arrays. The
// three phase classes (gather+pack, compute, unpack+scatter) run on adjacent
// chunks concurrently, connected by bounded queues.

class StreamError : public Error {
 public:
  using Error::Error;
};

// One lane is 8 slots of 64 bits. A 12-value element variable occupies two
// lanes: slots 0..5 hold values 0..5 (bank0) or 6..11 (bank1), slots 6..7
// are zero padding. Value v of an element is node v/3, dimension v%3.
struct PackedVariable {
  std::vector<std::array<double, 8>> bank0;
  std::vector<std::array<double, 8>> bank1;
};

struct PackedLanes {
  PackedVariable elvel;
  PackedVariable elcod;
  std::size_t count() const { return elvel.bank0.size(); }
};

struct Chunk {
  std::uint64_t chunk_id = 0;
  std::uint64_t elem_begin = 0;
  std::uint64_t elem_end = 0;
  PackedLanes packed;
};

enum class AccumulationMode { serial, locked, sharded };

inline const char* to_string(AccumulationMode m) {
  switch (m) {
    case AccumulationMode::serial: return "serial";
    case AccumulationMode::locked: return "locked";
    default: return "sharded";
  }
}

inline AccumulationMode accumulation_mode_from_string(const std::string& s) {
  if (s == "serial") return AccumulationMode::serial;
  if (s == "locked") return AccumulationMode::locked;
  if (s == "sharded") return AccumulationMode::sharded;
  throw ConfigError("unknown accumulation mode: " + s);
}

struct StreamScheduleConfig {
  std::uint64_t chunk_size = 4096;  // 0 picks max(1024, elements / (4 * workers))
  AccumulationMode accumulation_mode = AccumulationMode::sharded;
  bool host_offload_cartesian = false;
  std::size_t worker_count = 1;  // 0 picks hardware_concurrency
  bool force_serial_phases = false;
  std::size_t queue_capacity = 2;
};

inline StreamScheduleConfig resolve_schedule(StreamScheduleConfig s, std::uint64_t num_elements) {
  if (s.worker_count == 0) {
    const unsigned hc = std::thread::hardware_concurrency();
    s.worker_count = hc ? hc : 1;
  }
  if (s.chunk_size == 0)
    s.chunk_size = std::max<std::uint64_t>(
        1024, num_elements / (4 * static_cast<std::uint64_t>(s.worker_count)));
  if (s.chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  if (s.queue_capacity < 1) throw ConfigError("queue_capacity must be >= 1");
  return s;
}

inline std::vector<Chunk> plan_chunks(std::uint64_t num_elements, std::uint64_t chunk_size) {
  if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  std::vector<Chunk> out;
  out.reserve(static_cast<std::size_t>((num_elements + chunk_size - 1) / chunk_size));
  for (std::uint64_t b = 0; b < num_elements; b += chunk_size) {
    Chunk c;
    c.chunk_id = out.size();
    c.elem_begin = b;
    c.elem_end = std::min(num_elements, b + chunk_size);
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline void pack_variable(PackedVariable& v, std::size_t lane, const Mat34<double>& m) {
  auto& b0 = v.bank0[lane];
  auto& b1 = v.bank1[lane];
  b0.fill(0.0);
  b1.fill(0.0);
  for (std::size_t val = 0; val < 6; ++val) {
    b0[val] = m[val % kNumDims][val / kNumDims];
    b1[val] = m[(val + 6) % kNumDims][(val + 6) / kNumDims];
  }
}

inline void unpack_variable(const PackedVariable& v, std::size_t lane, Mat34<double>& m) {
  const auto& b0 = v.bank0[lane];
  const auto& b1 = v.bank1[lane];
  for (std::size_t val = 0; val < 6; ++val) {
    m[val % kNumDims][val / kNumDims] = b0[val];
    m[(val + 6) % kNumDims][(val + 6) / kNumDims] = b1[val];
  }
}

}  // namespace detail

inline PackedLanes pack_chunk(const Mesh& mesh, std::uint64_t elem_begin, std::uint64_t elem_end) {
  const std::size_t n = static_cast<std::size_t>(elem_end - elem_begin);
  PackedLanes out;
  out.elvel.bank0.resize(n);
  out.elvel.bank1.resize(n);
  out.elcod.bank0.resize(n);
  out.elcod.bank1.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    const ElementInput in = gather_element(mesh, elem_begin + l);
    detail::pack_variable(out.elvel, l, in.elvel);
    detail::pack_variable(out.elcod, l, in.elcod);
  }
  return out;
}

inline void pack_chunk(const Mesh& mesh, Chunk& chunk) {
  chunk.packed = pack_chunk(mesh, chunk.elem_begin, chunk.elem_end);
}

inline ElementInput unpack_element(const PackedLanes& packed, std::uint64_t local,
                                   std::uint64_t elem_begin = 0) {
  ElementInput out;
  out.elem_id = elem_begin + local;
  detail::unpack_variable(packed.elvel, static_cast<std::size_t>(local), out.elvel);
  detail::unpack_variable(packed.elcod, static_cast<std::size_t>(local), out.elcod);
  return out;
}

inline ElementInput unpack_element(const Chunk& chunk, std::uint64_t local) {
  return unpack_element(chunk.packed, local, chunk.elem_begin);
}

// Results travel back as dense per-variable lanes: 12 elrbu values per
// element packed 8 to a lane, 4 eldtrho and 4 elmurho values likewise.
struct ResultLanes {
  std::uint64_t chunk_id = 0;
  std::uint64_t elem_begin = 0;
  std::uint64_t elem_end = 0;
  std::vector<std::array<double, 8>> rbu;
  std::vector<std::array<double, 8>> dtrho;
  std::vector<std::array<double, 8>> murho;
};

inline ResultLanes make_result_lanes(std::uint64_t chunk_id, std::uint64_t elem_begin,
                                     std::uint64_t elem_end) {
  ResultLanes out;
  out.chunk_id = chunk_id;
  out.elem_begin = elem_begin;
  out.elem_end = elem_end;
  const std::uint64_t n = elem_end - elem_begin;
  out.rbu.assign(static_cast<std::size_t>((n * 12 + 7) / 8), {});
  out.dtrho.assign(static_cast<std::size_t>((n * 4 + 7) / 8), {});
  out.murho.assign(static_cast<std::size_t>((n * 4 + 7) / 8), {});
  return out;
}

inline void pack_result(ResultLanes& lanes, std::uint64_t local, const ElementResult& r) {
  for (std::uint64_t v = 0; v < 12; ++v) {
    const std::uint64_t flat = local * 12 + v;
    lanes.rbu[flat / 8][flat % 8] = r.elrbu[v % kNumDims][v / kNumDims];
  }
  for (std::uint64_t i = 0; i < kNodesPerElem; ++i) {
    const std::uint64_t flat = local * 4 + i;
    lanes.dtrho[flat / 8][flat % 8] = r.eldtrho[i];
    lanes.murho[flat / 8][flat % 8] = r.elmurho[i];
  }
}

inline ElementResult unpack_result(const ResultLanes& lanes, std::uint64_t local) {
  ElementResult r;
  r.elem_id = lanes.elem_begin + local;
  for (std::uint64_t v = 0; v < 12; ++v) {
    const std::uint64_t flat = local * 12 + v;
    r.elrbu[v % kNumDims][v / kNumDims] = lanes.rbu[flat / 8][flat % 8];
  }
  for (std::uint64_t i = 0; i < kNodesPerElem; ++i) {
    const std::uint64_t flat = local * 4 + i;
    r.eldtrho[i] = lanes.dtrho[flat / 8][flat % 8];
    r.elmurho[i] = lanes.murho[flat / 8][flat % 8];
  }
  return r;
}

// Debug dump: for each variable, all bank0 lanes then all bank1 lanes, 64
// bytes per lane, with a JSON manifest describing both sections.
inline void dump_lanes(const Chunk& chunk, const std::string& path_prefix) {
  const std::string bin_path = path_prefix + ".bin";
  std::FILE* f = std::fopen(bin_path.c_str(), "wb");
  if (!f) throw FileError("cannot open " + bin_path + " for writing");
  auto write_bank = [&](const std::vector<std::array<double, 8>>& bank) {
    if (!bank.empty() && std::fwrite(bank.data(), sizeof(bank[0]), bank.size(), f) != bank.size()) {
      std::fclose(f);
      throw FileError("short write to " + bin_path);
    }
  };
  write_bank(chunk.packed.elvel.bank0);
  write_bank(chunk.packed.elvel.bank1);
  write_bank(chunk.packed.elcod.bank0);
  write_bank(chunk.packed.elcod.bank1);
  if (std::fclose(f) != 0) throw FileError("error closing " + bin_path);

  nlohmann::json manifest = nlohmann::json::array();
  for (const char* var : {"elvel", "elcod"}) {
    nlohmann::json entry;
    entry["chunk_id"] = chunk.chunk_id;
    entry["elem_begin"] = chunk.elem_begin;
    entry["elem_end"] = chunk.elem_end;
    entry["variable"] = var;
    manifest.push_back(entry);
  }
  const std::string json_path = path_prefix + ".json";
  std::FILE* j = std::fopen(json_path.c_str(), "wb");
  if (!j) throw FileError("cannot open " + json_path + " for writing");
  const std::string text = manifest.dump(2);
  const bool ok = std::fwrite(text.data(), 1, text.size(), j) == text.size();
  if (std::fclose(j) != 0 || !ok) throw FileError("error writing " + json_path);
}

namespace detail {

// Static range split of [0, n) into k contiguous pieces.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> split_range(std::uint64_t n,
                                                                        std::size_t k) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  if (k < 1) k = 1;
  const std::uint64_t base = n / k, rem = n % k;
  std::uint64_t b = 0;
  for (std::size_t i = 0; i < k && b < n; ++i) {
    const std::uint64_t len = base + (i < rem ? 1 : 0);
    if (len == 0) continue;
    out.push_back({b, b + len});
    b += len;
  }
  return out;
}

}  // namespace detail

// Runs the geometry stage on the host for every element of the chunk, split
// across workers. Per-element work is pure, so the values are identical for
// any worker count. On failure the lowest failing element id wins.
template <std::size_t G = kDefaultGauss>
std::vector<CartesianBasis<double, G>> host_cartesian_offload(
    const Chunk& chunk, std::size_t workers, const Quadrature<G>& quad = quadrature<G>()) {
  const std::uint64_t n = chunk.elem_end - chunk.elem_begin;
  std::vector<CartesianBasis<double, G>> out(static_cast<std::size_t>(n));
  const auto ranges = detail::split_range(n, workers);
  std::mutex err_m;
  std::uint64_t err_elem = static_cast<std::uint64_t>(-1);
  std::exception_ptr err;
  auto work = [&](std::uint64_t b, std::uint64_t e) {
    for (std::uint64_t l = b; l < e; ++l) {
      const ElementInput in = unpack_element(chunk, l);
      try {
        out[static_cast<std::size_t>(l)] = cartesian_derivatives<double, G>(in.elcod, quad, in.elem_id);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_m);
        if (in.elem_id < err_elem) {
          err_elem = in.elem_id;
          err = std::current_exception();
        }
        return;
      }
    }
  };
  if (ranges.size() <= 1) {
    if (!ranges.empty()) work(ranges[0].first, ranges[0].second);
  } else {
    std::vector<std::thread> pool;
    for (const auto& r : ranges) pool.emplace_back(work, r.first, r.second);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

inline void scatter_add_locked(GlobalOutputs& out, const Mesh& mesh, const ElementResult& r,
                               std::vector<std::mutex>& stripes) {
  for (std::size_t i = 0; i < kNodesPerElem; ++i) {
    const std::uint32_t p = mesh.lnods[r.elem_id][i];
    std::lock_guard<std::mutex> lk(stripes[p % stripes.size()]);
    for (std::size_t j = 0; j < kNumDims; ++j) out.rhsid[j][p] = out.rhsid[j][p] + r.elrbu[j][i];
    out.dt_rho_nsi[p] = out.dt_rho_nsi[p] + r.eldtrho[i];
    out.mass_rho_nsi[p] = out.mass_rho_nsi[p] + r.elmurho[i];
  }
}

inline void scatter_add_shard(GlobalOutputs& out, const Mesh& mesh, const ElementResult& r,
                              std::size_t shard, std::size_t num_shards) {
  for (std::size_t i = 0; i < kNodesPerElem; ++i) {
    const std::uint32_t p = mesh.lnods[r.elem_id][i];
    if (p % num_shards != shard) continue;
    for (std::size_t j = 0; j < kNumDims; ++j) out.rhsid[j][p] = out.rhsid[j][p] + r.elrbu[j][i];
    out.dt_rho_nsi[p] = out.dt_rho_nsi[p] + r.eldtrho[i];
    out.mass_rho_nsi[p] = out.mass_rho_nsi[p] + r.elmurho[i];
  }
}

inline constexpr std::size_t kLockStripes = 1024;

// Applies one batch of element results under the chosen discipline. serial
// applies in element order on the calling thread; locked splits the batch
// across workers holding per-point stripe locks; sharded gives each worker
// the whole batch filtered to the points it owns (point id mod worker).
inline void accumulate_results(GlobalOutputs& out, const Mesh& mesh,
                               const std::vector<ElementResult>& results, AccumulationMode mode,
                               std::size_t workers = 1) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  if (results.empty()) return;
  switch (mode) {
    case AccumulationMode::serial: {
      for (const auto& r : results) scatter_add(out, mesh, r);
      return;
    }
    case AccumulationMode::locked: {
      std::vector<std::mutex> stripes(kLockStripes);
      const auto ranges = detail::split_range(results.size(), workers);
      if (ranges.size() <= 1) {
        for (const auto& r : results) scatter_add_locked(out, mesh, r, stripes);
        return;
      }
      std::vector<std::thread> pool;
      for (const auto& rg : ranges)
        pool.emplace_back([&, rg] {
          for (std::uint64_t i = rg.first; i < rg.second; ++i)
            scatter_add_locked(out, mesh, results[static_cast<std::size_t>(i)], stripes);
        });
      for (auto& t : pool) t.join();
      return;
    }
    case AccumulationMode::sharded: {
      if (workers == 1) {
        for (const auto& r : results) scatter_add(out, mesh, r);
        return;
      }
      std::vector<std::thread> pool;
      for (std::size_t s = 0; s < workers; ++s)
        pool.emplace_back([&, s] {
          for (const auto& r : results) scatter_add_shard(out, mesh, r, s, workers);
        });
      for (auto& t : pool) t.join();
      return;
    }
  }
}

namespace detail {

// Shared teardown for the phase threads: first real error wins, and any
// failure aborts every phase queue (and the pipeline) so the others unblock.
class PhaseGuard {
 public:
  void watch(ChannelBase* c) {
    hooks_.push_back([c] { c->abort(); });
  }
  void watch(std::function<void()> hook) { hooks_.push_back(std::move(hook)); }
  void fail(std::exception_ptr e) {
    {
      std::lock_guard<std::mutex> lk(m_);
      if (!err_) err_ = e;
    }
    abort();
  }
  void abort() {
    for (auto& h : hooks_) h();
  }
  std::exception_ptr error() {
    std::lock_guard<std::mutex> lk(m_);
    return err_;
  }

 private:
  std::mutex m_;
  std::exception_ptr err_;
  std::vector<std::function<void()>> hooks_;
};

}  // namespace detail

// Feeds one chunk through the pipeline and drains exactly its results.
// The feeder runs aside so the bounded pipeline input cannot wedge against
// the result drain.
template <std::size_t G>
ResultLanes compute_chunk(Pipeline<G>& pipe, const Chunk& chunk,
                          const std::vector<CartesianBasis<double, G>>* sidecar) {
  const std::uint64_t n = chunk.elem_end - chunk.elem_begin;
  std::thread feeder([&] {
    try {
      for (std::uint64_t l = 0; l < n; ++l) {
        const ElementInput in = unpack_element(chunk, l);
        if (sidecar)
          pipe.push_prepared({in.elem_id, in.elvel, (*sidecar)[static_cast<std::size_t>(l)]});
        else
          pipe.push(in);
      }
    } catch (const ChannelAborted&) {
    }
  });
  ResultLanes lanes = make_result_lanes(chunk.chunk_id, chunk.elem_begin, chunk.elem_end);
  std::uint64_t drained = 0;
  std::exception_ptr drain_err;
  try {
    for (; drained < n; ++drained) {
      auto r = pipe.pop_result();
      if (!r) break;
      if (r->elem_id != chunk.elem_begin + drained)
        throw ProtocolError("result order broken in chunk " + std::to_string(chunk.chunk_id));
      pack_result(lanes, drained, *r);
    }
  } catch (const ChannelAborted&) {
  } catch (...) {
    drain_err = std::current_exception();
    pipe.abort();
  }
  feeder.join();
  if (drain_err) std::rethrow_exception(drain_err);
  if (drained != n) {
    pipe.join();  // surfaces the pipeline's own error
    throw StreamError("chunk " + std::to_string(chunk.chunk_id) + ": result stream ended early");
  }
  return lanes;
}

// Chunked streaming run. Gather+pack of chunk i+1, pipeline compute of chunk
// i, and unpack+scatter of chunk i-1 overlap through bounded queues unless
// force_serial_phases runs them strictly one after another.
template <std::size_t G = kDefaultGauss>
GlobalOutputs run_streamed(const Mesh& mesh, const PhysParams& phys, const PipelineConfig& pcfg_in,
                           const StreamScheduleConfig& scfg_in) {
  const StreamScheduleConfig scfg = resolve_schedule(scfg_in, mesh.num_elements);
  PipelineConfig pcfg = pcfg_in;
  pcfg.external_cartesian = scfg.host_offload_cartesian;
  validate(pcfg);

  std::vector<Chunk> plan = plan_chunks(mesh.num_elements, scfg.chunk_size);
  GlobalOutputs out(mesh.num_points);
  Pipeline<G> pipe(pcfg, phys);

  using Sidecar = std::shared_ptr<const std::vector<CartesianBasis<double, G>>>;

  if (scfg.force_serial_phases) {
    for (auto& c : plan) {
      pack_chunk(mesh, c);
      Sidecar sidecar;
      if (scfg.host_offload_cartesian)
        sidecar = std::make_shared<const std::vector<CartesianBasis<double, G>>>(
            host_cartesian_offload<G>(c, scfg.worker_count));
      const ResultLanes lanes = compute_chunk(pipe, c, sidecar ? sidecar.get() : nullptr);
      std::vector<ElementResult> batch;
      batch.reserve(static_cast<std::size_t>(c.elem_end - c.elem_begin));
      for (std::uint64_t l = 0; l < c.elem_end - c.elem_begin; ++l)
        batch.push_back(unpack_result(lanes, l));
      accumulate_results(out, mesh, batch, scfg.accumulation_mode, scfg.worker_count);
      c.packed = PackedLanes{};
    }
    pipe.close_input();
    pipe.join();
    return out;
  }

  struct DeviceChunk {
    Chunk chunk;
    Sidecar sidecar;
  };
  struct ChunkMeta {
    std::uint64_t chunk_id = 0, elem_begin = 0, elem_end = 0;
  };

  detail::PhaseGuard guard;
  Channel<DeviceChunk> compute_q("compute_q", scfg.queue_capacity, nullptr);
  Channel<ChunkMeta> meta_q("meta_q", scfg.queue_capacity + 2, nullptr);
  Channel<ResultLanes> scatter_q("scatter_q", scfg.queue_capacity, nullptr);
  std::vector<std::unique_ptr<Channel<std::shared_ptr<const ResultLanes>>>> shard_qs;
  const bool sharded = scfg.accumulation_mode == AccumulationMode::sharded;
  const std::size_t shard_workers = sharded ? scfg.worker_count : 0;
  for (std::size_t s = 0; s < shard_workers; ++s)
    shard_qs.push_back(std::make_unique<Channel<std::shared_ptr<const ResultLanes>>>(
        "shard_q" + std::to_string(s), scfg.queue_capacity, nullptr));
  guard.watch(&compute_q);
  guard.watch(&meta_q);
  guard.watch(&scatter_q);
  for (auto& q : shard_qs) guard.watch(q.get());
  guard.watch([&pipe] { pipe.abort(); });

  auto guarded = [&guard](auto fn) {
    return [fn, &guard] {
      try {
        fn();
      } catch (const ChannelAborted&) {
        guard.abort();
      } catch (...) {
        guard.fail(std::current_exception());
      }
    };
  };

  std::vector<std::thread> threads;

  threads.emplace_back(guarded([&] {
    for (const auto& range : plan) {
      Chunk c = range;
      pack_chunk(mesh, c);
      DeviceChunk dc{std::move(c), nullptr};
      if (scfg.host_offload_cartesian)
        dc.sidecar = std::make_shared<const std::vector<CartesianBasis<double, G>>>(
            host_cartesian_offload<G>(dc.chunk, scfg.worker_count));
      compute_q.push(std::move(dc));
    }
    compute_q.close();
  }));

  threads.emplace_back(guarded([&] {
    try {
      while (auto dc = compute_q.pop()) {
        meta_q.push({dc->chunk.chunk_id, dc->chunk.elem_begin, dc->chunk.elem_end});
        const std::uint64_t n = dc->chunk.elem_end - dc->chunk.elem_begin;
        for (std::uint64_t l = 0; l < n; ++l) {
          const ElementInput in = unpack_element(dc->chunk, l);
          if (dc->sidecar)
            pipe.push_prepared({in.elem_id, in.elvel, (*dc->sidecar)[static_cast<std::size_t>(l)]});
          else
            pipe.push(in);
        }
      }
      meta_q.close();
      pipe.close_input();
    } catch (const ChannelAborted&) {
      guard.abort();
    }
  }));

  threads.emplace_back(guarded([&] {
    try {
      while (auto meta = meta_q.pop()) {
        ResultLanes lanes = make_result_lanes(meta->chunk_id, meta->elem_begin, meta->elem_end);
        const std::uint64_t n = meta->elem_end - meta->elem_begin;
        for (std::uint64_t l = 0; l < n; ++l) {
          auto r = pipe.pop_result();
          if (!r)
            throw StreamError("chunk " + std::to_string(meta->chunk_id) +
                              ": result stream ended early");
          if (r->elem_id != meta->elem_begin + l)
            throw ProtocolError("result order broken in chunk " + std::to_string(meta->chunk_id));
          pack_result(lanes, l, *r);
        }
        if (sharded) {
          auto shared = std::make_shared<const ResultLanes>(std::move(lanes));
          for (auto& q : shard_qs) q->push(shared);
        } else {
          scatter_q.push(std::move(lanes));
        }
      }
      if (sharded)
        for (auto& q : shard_qs) q->close();
      else
        scatter_q.close();
    } catch (const ChannelAborted&) {
      guard.abort();
    }
  }));

  if (sharded) {
    for (std::size_t s = 0; s < shard_workers; ++s) {
      auto* q = shard_qs[s].get();
      threads.emplace_back(guarded([&, q, s] {
        while (auto lanes = q->pop()) {
          const std::uint64_t n = (*lanes)->elem_end - (*lanes)->elem_begin;
          for (std::uint64_t l = 0; l < n; ++l)
            scatter_add_shard(out, mesh, unpack_result(**lanes, l), s, shard_workers);
        }
      }));
    }
  } else if (scfg.accumulation_mode == AccumulationMode::serial) {
    threads.emplace_back(guarded([&] {
      while (auto lanes = scatter_q.pop()) {
        const std::uint64_t n = lanes->elem_end - lanes->elem_begin;
        for (std::uint64_t l = 0; l < n; ++l) scatter_add(out, mesh, unpack_result(*lanes, l));
      }
    }));
  } else {
    auto stripes = std::make_shared<std::vector<std::mutex>>(kLockStripes);
    for (std::size_t w = 0; w < scfg.worker_count; ++w) {
      threads.emplace_back(guarded([&, stripes] {
        while (auto lanes = scatter_q.pop()) {
          const std::uint64_t n = lanes->elem_end - lanes->elem_begin;
          for (std::uint64_t l = 0; l < n; ++l)
            scatter_add_locked(out, mesh, unpack_result(*lanes, l), *stripes);
        }
      }));
    }
  }

  for (auto& t : threads) t.join();

  if (guard.error()) {
    pipe.close_input();
    pipe.join();  // a pipeline-side failure is the root cause, surface it first
    std::rethrow_exception(guard.error());
  }
  pipe.join();
  return out;
}

}  // namespace flowforge
