#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "flowforge/assembly.hpp"
#include "flowforge/channel.hpp"
#include "flowforge/core.hpp"
#include "flowforge/mesh.hpp"
#include "flowforge/quadrature.hpp"

namespace flowforge {

// Staged concurrent engine. Every per-element value travels through bounded
// SPSC streams between long-lived stage threads. With routing enabled the
// stages form a linear chain and any value needed further downstream is
// re-emitted hop by hop, so no stream ever spans more than one hop. With
// routing disabled, streams connect producers directly to distant consumers
// (fanned out by replication stages) and the input stage writes its two
// output streams in bursts instead of element-interleaved; that topology
// needs a minimum FIFO depth to drain and is kept as the stall demonstrator.

template <class T>
struct Tagged {
  std::uint64_t elem_id = 0;
  std::uint32_t part = 0;  // Gauss index for per-point partials
  T value{};
};

struct StageDesc {
  std::string name;
  int chain_id = -1;   // engine index; -1 for distributor/collector
  int chain_pos = -1;  // position within the chain
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

struct StreamDesc {
  std::string id;
  std::string value;
  std::string type;
  std::size_t capacity = 0;
  std::string producer;
  std::string consumer;
};

struct GraphDescriptor {
  std::vector<StageDesc> stages;
  std::vector<StreamDesc> streams;

  const StageDesc* find_stage(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return &s;
    return nullptr;
  }
};

struct SkipEdge {
  std::string stream;
  std::string value;
  std::string producer;
  std::string consumer;
  std::size_t span = 0;  // hops between producer and consumer in chain order
};

inline constexpr const char* kCallerEndpoint = "(caller)";

inline void validate_graph(const GraphDescriptor& g) {
  for (std::size_t i = 0; i < g.streams.size(); ++i)
    for (std::size_t j = i + 1; j < g.streams.size(); ++j)
      if (g.streams[i].id == g.streams[j].id)
        throw ConfigError("duplicate stream id: " + g.streams[i].id);

  auto stage_index = [&](const std::string& name) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < g.stages.size(); ++i)
      if (g.stages[i].name == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };
  auto count_role = [&](const std::string& id, bool as_output) {
    std::size_t n = 0;
    for (const auto& s : g.stages) {
      const auto& lst = as_output ? s.outputs : s.inputs;
      for (const auto& e : lst)
        if (e == id) ++n;
    }
    return n;
  };

  for (const auto& st : g.streams) {
    if (st.producer != kCallerEndpoint) {
      if (stage_index(st.producer) < 0)
        throw ConfigError("stream " + st.id + " has unknown producer");
      if (count_role(st.id, true) != 1)
        throw ConfigError("stream " + st.id + " must have exactly one producer");
    }
    if (st.consumer != kCallerEndpoint) {
      if (stage_index(st.consumer) < 0)
        throw ConfigError("stream " + st.id + " has unknown consumer");
      if (count_role(st.id, false) != 1)
        throw ConfigError("stream " + st.id + " must have exactly one consumer");
    }
    if (st.producer != kCallerEndpoint && st.consumer != kCallerEndpoint) {
      if (stage_index(st.consumer) <= stage_index(st.producer))
        throw ConfigError("stream " + st.id + " does not flow forward");
    }
  }
}

// Streams whose producer and consumer sit in the same chain but are not
// adjacent. Empty on the routed topology by construction.
inline std::vector<SkipEdge> routing_violations(const GraphDescriptor& g) {
  std::vector<SkipEdge> out;
  for (const auto& st : g.streams) {
    const StageDesc* p = g.find_stage(st.producer);
    const StageDesc* c = g.find_stage(st.consumer);
    if (!p || !c) continue;
    if (p->chain_id < 0 || p->chain_id != c->chain_id) continue;
    const std::size_t span = static_cast<std::size_t>(c->chain_pos - p->chain_pos);
    if (span > 1) out.push_back({st.id, st.value, st.producer, st.consumer, span});
  }
  return out;
}

struct PipelineConfig {
  std::size_t fifo_depth = 8;
  std::size_t num_engines = 1;
  bool routing_enabled = true;
  std::chrono::milliseconds watchdog_timeout{30000};  // 0 disables the watchdog
  bool external_cartesian = false;  // feed PreparedInput, skip the cart stage
};

inline void validate(const PipelineConfig& cfg) {
  if (cfg.fifo_depth < 1) throw ConfigError("fifo_depth must be >= 1");
  if (cfg.num_engines < 1) throw ConfigError("num_engines must be >= 1");
  if (cfg.external_cartesian && !cfg.routing_enabled)
    throw ConfigError("external cartesian feed requires the routed topology");
}

// Element whose geometry stage already ran on the host.
template <std::size_t G>
struct PreparedInput {
  std::uint64_t elem_id = 0;
  Mat34<double> elvel{};
  CartesianBasis<double, G> cart{};
};

struct StageMetrics {
  std::string name;
  std::uint64_t processed = 0;
};

struct MetricsSnapshot {
  std::vector<StageMetrics> stages;
  std::vector<ChannelStats> streams;

  std::uint64_t total_blocked_waits() const {
    std::uint64_t n = 0;
    for (const auto& s : streams) n += s.full_waits + s.empty_waits;
    return n;
  }
  std::size_t max_occupancy_over_capacity() const {
    std::size_t worst = 0;
    for (const auto& s : streams)
      if (s.max_occupancy > s.capacity) worst = std::max(worst, s.max_occupancy - s.capacity);
    return worst;
  }
};

// Pops one value per cycle and writes it to all k outputs in fixed order.
template <class T>
void replicate_stream(Channel<T>& in, const std::vector<Channel<T>*>& outs,
                      std::atomic<std::uint64_t>* processed = nullptr) {
  if (outs.size() < 2) throw ConfigError("replicate_stream needs k >= 2 outputs");
  while (auto v = in.pop()) {
    for (auto* o : outs) o->push(*v);
    if (processed) processed->fetch_add(1, std::memory_order_relaxed);
  }
  for (auto* o : outs) o->close();
}

// Folds groups of exactly `group_size` partials (tagged part = 0..group-1,
// same element, contiguous) into one total per element, in ascending part
// order. Fold order is the deterministic summation order everything else
// relies on.
template <class P, class T, class Fold>
void accumulate_stage(Channel<Tagged<P>>& in, Channel<Tagged<T>>& out, std::size_t group_size,
                      Fold fold, std::atomic<std::uint64_t>* processed = nullptr) {
  if (group_size < 1) throw ConfigError("accumulate_stage group size must be >= 1");
  while (true) {
    auto first = in.pop();
    if (!first) break;
    if (first->part != 0)
      throw ProtocolError("accumulate: group for element " + std::to_string(first->elem_id) +
                          " does not start at partial 0");
    T total{};
    fold(total, first->value);
    for (std::size_t g = 1; g < group_size; ++g) {
      auto p = in.pop();
      if (!p)
        throw ProtocolError("accumulate: group for element " + std::to_string(first->elem_id) +
                            " truncated at partial " + std::to_string(g));
      if (p->elem_id != first->elem_id || p->part != g)
        throw ProtocolError("accumulate: expected partial " + std::to_string(g) + " of element " +
                            std::to_string(first->elem_id) + ", got partial " +
                            std::to_string(p->part) + " of element " + std::to_string(p->elem_id));
      fold(total, p->value);
    }
    out.push({first->elem_id, 0, std::move(total)});
    if (processed) processed->fetch_add(1, std::memory_order_relaxed);
  }
  out.close();
}

// Burst width of the unrouted input stage: it writes this many elvel values
// back to back before the matching elcod values.
inline constexpr std::size_t kWriteReorderBurst = 4;

template <std::size_t G = kDefaultGauss>
class Pipeline {
  using Vel = Mat34<double>;
  using Cod = Mat34<double>;
  using Cart = CartesianBasis<double, G>;
  using Gau = GaussValues<double, G>;
  using Tt = TauTim<double, G>;
  using Stb = StabMats<double, G>;
  using CPar = ConvectivePartial<double>;
  using VPar = ViscousPartial<double>;
  using MConv = ElementMatrices<double>;
  using VSum = std::array<NodeVec<double>, kNodesPerElem>;

 public:
  Pipeline(const PipelineConfig& cfg, const PhysParams& phys)
      : cfg_(cfg), phys_(phys), quad_(quadrature<G>()) {
    validate(cfg_);
    validate(phys_);
    const std::size_t k = cfg_.num_engines;

    if (k == 1) {
      const std::string first = first_stage_name("");
      if (cfg_.external_cartesian)
        in_pre_ = make_endpoint<PreparedInput<G>>("prepared", "PreparedInput", kCallerEndpoint, first);
      else
        in_raw_ = make_endpoint<ElementInput>("elements", "ElementInput", kCallerEndpoint, first);
      out_ = make_endpoint<ElementResult>("results", "ElementResult", "result", kCallerEndpoint);
      build_chain(in_raw_, in_pre_, out_, "", 0);
    } else {
      const std::size_t dist = add_stage("distributor", -1, -1);
      std::vector<Channel<ElementInput>*> eng_raw;
      std::vector<Channel<PreparedInput<G>>*> eng_pre;
      std::vector<Channel<ElementResult>*> eng_out;
      for (std::size_t i = 0; i < k; ++i) {
        const std::string pfx = "e" + std::to_string(i) + ".";
        const std::string first = first_stage_name(pfx);
        if (cfg_.external_cartesian)
          eng_pre.push_back(
              register_chan<PreparedInput<G>>("prepared", "PreparedInput", "distributor", first));
        else
          eng_raw.push_back(
              register_chan<ElementInput>("elements", "ElementInput", "distributor", first));
        eng_out.push_back(register_chan<ElementResult>("results", "ElementResult", pfx + "result",
                                                       "collector"));
      }
      for (std::size_t i = 0; i < k; ++i) {
        const std::string pfx = "e" + std::to_string(i) + ".";
        build_chain(cfg_.external_cartesian ? nullptr : eng_raw[i],
                    cfg_.external_cartesian ? eng_pre[i] : nullptr, eng_out[i], pfx,
                    static_cast<int>(i));
      }
      const std::size_t coll = add_stage("collector", -1, -1);

      if (cfg_.external_cartesian)
        in_pre_ = make_endpoint<PreparedInput<G>>("prepared", "PreparedInput", kCallerEndpoint,
                                                  "distributor");
      else
        in_raw_ =
            make_endpoint<ElementInput>("elements", "ElementInput", kCallerEndpoint, "distributor");
      out_ = make_endpoint<ElementResult>("results", "ElementResult", "collector", kCallerEndpoint);

      if (cfg_.external_cartesian)
        spawn_distributor(dist, in_pre_, eng_pre);
      else
        spawn_distributor(dist, in_raw_, eng_raw);
      spawn_collector(coll, eng_out, out_);
    }

    rebuild_stage_lists();
    validate_graph(desc_);
    for (auto& p : pending_) threads_.emplace_back(std::move(p));
    pending_.clear();
    start_watchdog();
  }

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  ~Pipeline() {
    if (!joined_) {
      abort_all();
      for (auto& t : threads_)
        if (t.joinable()) t.join();
      stop_watchdog();
    }
  }

  void push(const ElementInput& in) {
    if (!in_raw_) throw ConfigError("pipeline expects prepared input");
    in_raw_->push(in);
    in_pushed_.fetch_add(1, std::memory_order_relaxed);
  }

  void push_prepared(const PreparedInput<G>& in) {
    if (!in_pre_) throw ConfigError("pipeline expects raw element input");
    in_pre_->push(in);
    in_pushed_.fetch_add(1, std::memory_order_relaxed);
  }

  void close_input() {
    if (in_raw_) in_raw_->close();
    if (in_pre_) in_pre_->close();
  }

  std::optional<ElementResult> pop_result() {
    auto r = out_->pop();
    if (r) out_popped_.fetch_add(1, std::memory_order_relaxed);
    return r;
  }

  // Blocks until every stage exits (close_input first), then surfaces the
  // first error raised anywhere in the graph.
  void join() {
    if (!joined_) {
      joined_ = true;
      for (auto& t : threads_)
        if (t.joinable()) t.join();
      stop_watchdog();
    }
    std::lock_guard<std::mutex> lk(err_m_);
    if (error_) std::rethrow_exception(error_);
  }

  const GraphDescriptor& descriptor() const { return desc_; }
  const PipelineConfig& config() const { return cfg_; }

  MetricsSnapshot metrics() const {
    MetricsSnapshot m;
    for (std::size_t i = 0; i < desc_.stages.size(); ++i)
      m.stages.push_back({desc_.stages[i].name, counters_[i]->load(std::memory_order_relaxed)});
    for (const auto& c : chans_) m.streams.push_back(c->stats());
    return m;
  }

  std::uint64_t in_flight() const {
    return in_pushed_.load(std::memory_order_relaxed) - out_popped_.load(std::memory_order_relaxed);
  }

  // Unblocks every stage without recording an error; callers embedding the
  // pipeline use this to tear down after a failure of their own.
  void abort() { abort_all(); }

 private:
  // Streams between compute stages carry Tagged<T>; endpoint and engine-feed
  // channels carry their payload bare.
  template <class T>
  Channel<Tagged<T>>* make_stream(const std::string& value, const std::string& type,
                                  const std::string& prod, const std::string& cons) {
    return register_chan<Tagged<T>>(value, type, prod, cons);
  }

  template <class T>
  Channel<T>* register_chan(const std::string& value, const std::string& type,
                            const std::string& prod, const std::string& cons) {
    const std::string id = value + ":" + prod + "->" + cons;
    auto ch = std::make_shared<Channel<T>>(id, cfg_.fifo_depth, &progress_);
    chans_.push_back(ch);
    desc_.streams.push_back({id, value, type, cfg_.fifo_depth, prod, cons});
    return ch.get();
  }

  template <class T>
  Channel<T>* make_endpoint(const std::string& value, const std::string& type,
                            const std::string& prod, const std::string& cons) {
    return register_chan<T>(value, type, prod, cons);
  }

  void rebuild_stage_lists() {
    for (auto& s : desc_.stages) {
      s.inputs.clear();
      s.outputs.clear();
    }
    for (const auto& st : desc_.streams)
      for (auto& s : desc_.stages) {
        if (s.name == st.producer) s.outputs.push_back(st.id);
        if (s.name == st.consumer) s.inputs.push_back(st.id);
      }
  }

  std::size_t add_stage(const std::string& name, int chain, int pos) {
    desc_.stages.push_back({name, chain, pos, {}, {}});
    counters_.push_back(std::make_unique<std::atomic<std::uint64_t>>(0));
    return desc_.stages.size() - 1;
  }

  void spawn(std::size_t stage_idx, std::function<void()> body) {
    pending_.push_back([this, body = std::move(body)] {
      try {
        body();
      } catch (const ChannelAborted&) {
      } catch (...) {
        fail(std::current_exception());
      }
    });
    (void)stage_idx;
  }

  void fail(std::exception_ptr e) {
    {
      std::lock_guard<std::mutex> lk(err_m_);
      if (!error_) error_ = e;
    }
    abort_all();
  }

  void abort_all() {
    for (auto& c : chans_) c->abort();
  }

  std::string first_stage_name(const std::string& pfx) const { return pfx + "input"; }

  template <class A, class B>
  static void require_tag(const char* stage, const Tagged<A>& primary,
                          const std::optional<Tagged<B>>& other, const char* what) {
    if (!other)
      throw ProtocolError(std::string(stage) + ": stream '" + what + "' ended before element " +
                          std::to_string(primary.elem_id));
    if (other->elem_id != primary.elem_id)
      throw ProtocolError(std::string(stage) + ": '" + std::string(what) + "' carries element " +
                          std::to_string(other->elem_id) + " while processing " +
                          std::to_string(primary.elem_id));
  }

  void build_chain(Channel<ElementInput>* src_raw, Channel<PreparedInput<G>>* src_pre,
                   Channel<ElementResult>* sink, const std::string& pfx, int chain) {
    if (cfg_.routing_enabled)
      build_routed_chain(src_raw, src_pre, sink, pfx, chain);
    else
      build_skip_chain(src_raw, sink, pfx, chain);
  }

  void build_routed_chain(Channel<ElementInput>* src_raw, Channel<PreparedInput<G>>* src_pre,
                          Channel<ElementResult>* sink, const std::string& pfx, int chain) {
    int pos = 0;
    const std::size_t s_in = add_stage(pfx + "input", chain, pos++);
    std::size_t s_cart = 0;
    if (!cfg_.external_cartesian) s_cart = add_stage(pfx + "cart", chain, pos++);
    const std::size_t s_gauss = add_stage(pfx + "gauss", chain, pos++);
    const std::size_t s_tau = add_stage(pfx + "tau", chain, pos++);
    const std::size_t s_stab = add_stage(pfx + "stab", chain, pos++);
    const std::size_t s_conv = add_stage(pfx + "conv", chain, pos++);
    const std::size_t s_visc = add_stage(pfx + "visc", chain, pos++);
    const std::size_t s_acca = add_stage(pfx + "acc_conv", chain, pos++);
    const std::size_t s_accb = add_stage(pfx + "acc_visc", chain, pos++);
    const std::size_t s_res = add_stage(pfx + "result", chain, pos++);

    Channel<Tagged<Cart>>* ca2;
    Channel<Tagged<Vel>>* ev2;
    if (!cfg_.external_cartesian) {
      auto* ec1 = make_stream<Cod>("elcod", "Mat34", pfx + "input", pfx + "cart");
      auto* ev1 = make_stream<Vel>("elvel", "Mat34", pfx + "input", pfx + "cart");
      ca2 = make_stream<Cart>("cart", "CartesianBasis", pfx + "cart", pfx + "gauss");
      ev2 = make_stream<Vel>("elvel", "Mat34", pfx + "cart", pfx + "gauss");

      auto* ctr_in = counters_[s_in].get();
      spawn(s_in, [src_raw, ec1, ev1, ctr_in] {
        while (auto v = src_raw->pop()) {
          ec1->push({v->elem_id, 0, v->elcod});
          ev1->push({v->elem_id, 0, v->elvel});
          ctr_in->fetch_add(1, std::memory_order_relaxed);
        }
        ec1->close();
        ev1->close();
      });

      auto* ctr_cart = counters_[s_cart].get();
      spawn(s_cart, [this, ec1, ev1, ca2, ev2, ctr_cart] {
        while (auto ec = ec1->pop()) {
          auto ev = ev1->pop();
          require_tag("cart", *ec, ev, "elvel");
          Cart c = cartesian_derivatives<double, G>(ec->value, quad_, ec->elem_id);
          ca2->push({ec->elem_id, 0, c});
          ev2->push(*ev);
          ctr_cart->fetch_add(1, std::memory_order_relaxed);
        }
        ca2->close();
        ev2->close();
      });
    } else {
      ca2 = make_stream<Cart>("cart", "CartesianBasis", pfx + "input", pfx + "gauss");
      ev2 = make_stream<Vel>("elvel", "Mat34", pfx + "input", pfx + "gauss");
      auto* ctr_in = counters_[s_in].get();
      spawn(s_in, [src_pre, ca2, ev2, ctr_in] {
        while (auto v = src_pre->pop()) {
          ca2->push({v->elem_id, 0, v->cart});
          ev2->push({v->elem_id, 0, v->elvel});
          ctr_in->fetch_add(1, std::memory_order_relaxed);
        }
        ca2->close();
        ev2->close();
      });
    }

    auto* ca3 = make_stream<Cart>("cart", "CartesianBasis", pfx + "gauss", pfx + "tau");
    auto* ga3 = make_stream<Gau>("gauss", "GaussValues", pfx + "gauss", pfx + "tau");
    auto* ev3 = make_stream<Vel>("elvel", "Mat34", pfx + "gauss", pfx + "tau");
    auto* ctr_gauss = counters_[s_gauss].get();
    spawn(s_gauss, [this, ca2, ev2, ca3, ga3, ev3, ctr_gauss] {
      while (auto ca = ca2->pop()) {
        auto ev = ev2->pop();
        require_tag("gauss", *ca, ev, "elvel");
        Gau gv = gauss_point_values<double, G>(ev->value, ca->value, quad_, phys_);
        ca3->push(*ca);
        ga3->push({ca->elem_id, 0, gv});
        ev3->push(*ev);
        ctr_gauss->fetch_add(1, std::memory_order_relaxed);
      }
      ca3->close();
      ga3->close();
      ev3->close();
    });

    auto* ca4 = make_stream<Cart>("cart", "CartesianBasis", pfx + "tau", pfx + "stab");
    auto* ga4 = make_stream<Gau>("gauss", "GaussValues", pfx + "tau", pfx + "stab");
    auto* tt4 = make_stream<Tt>("tau", "TauTim", pfx + "tau", pfx + "stab");
    auto* ev4 = make_stream<Vel>("elvel", "Mat34", pfx + "tau", pfx + "stab");
    auto* ctr_tau = counters_[s_tau].get();
    spawn(s_tau, [this, ca3, ga3, ev3, ca4, ga4, tt4, ev4, ctr_tau] {
      while (auto ca = ca3->pop()) {
        auto ga = ga3->pop();
        require_tag("tau", *ca, ga, "gauss");
        auto ev = ev3->pop();
        require_tag("tau", *ca, ev, "elvel");
        Tt tt = tau_and_tim<double, G>(ca->value, ga->value, quad_, phys_);
        ca4->push(*ca);
        ga4->push(*ga);
        tt4->push({ca->elem_id, 0, tt});
        ev4->push(*ev);
        ctr_tau->fetch_add(1, std::memory_order_relaxed);
      }
      ca4->close();
      ga4->close();
      tt4->close();
      ev4->close();
    });

    auto* ca5 = make_stream<Cart>("cart", "CartesianBasis", pfx + "stab", pfx + "conv");
    auto* ga5 = make_stream<Gau>("gauss", "GaussValues", pfx + "stab", pfx + "conv");
    auto* tt5 = make_stream<Tt>("tau", "TauTim", pfx + "stab", pfx + "conv");
    auto* st5 = make_stream<Stb>("stab", "StabMats", pfx + "stab", pfx + "conv");
    auto* ev5 = make_stream<Vel>("elvel", "Mat34", pfx + "stab", pfx + "conv");
    auto* ctr_stab = counters_[s_stab].get();
    spawn(s_stab, [this, ca4, ga4, tt4, ev4, ca5, ga5, tt5, st5, ev5, ctr_stab] {
      while (auto ca = ca4->pop()) {
        auto ga = ga4->pop();
        require_tag("stab", *ca, ga, "gauss");
        auto tt = tt4->pop();
        require_tag("stab", *ca, tt, "tau");
        auto ev = ev4->pop();
        require_tag("stab", *ca, ev, "elvel");
        Stb st = element_matrices<double, G>(ca->value, ga->value, phys_);
        ca5->push(*ca);
        ga5->push(*ga);
        tt5->push(*tt);
        st5->push({ca->elem_id, 0, st});
        ev5->push(*ev);
        ctr_stab->fetch_add(1, std::memory_order_relaxed);
      }
      ca5->close();
      ga5->close();
      tt5->close();
      st5->close();
      ev5->close();
    });

    auto* ca6 = make_stream<Cart>("cart", "CartesianBasis", pfx + "conv", pfx + "visc");
    auto* tt6 = make_stream<Tt>("tau", "TauTim", pfx + "conv", pfx + "visc");
    auto* st6 = make_stream<Stb>("stab", "StabMats", pfx + "conv", pfx + "visc");
    auto* cp6 = make_stream<CPar>("conv_partial", "ConvectivePartial", pfx + "conv", pfx + "visc");
    auto* ev6 = make_stream<Vel>("elvel", "Mat34", pfx + "conv", pfx + "visc");
    auto* ctr_conv = counters_[s_conv].get();
    spawn(s_conv, [this, ca5, ga5, tt5, st5, ev5, ca6, tt6, st6, cp6, ev6, ctr_conv] {
      while (auto ca = ca5->pop()) {
        auto ga = ga5->pop();
        require_tag("conv", *ca, ga, "gauss");
        auto tt = tt5->pop();
        require_tag("conv", *ca, tt, "tau");
        auto st = st5->pop();
        require_tag("conv", *ca, st, "stab");
        auto ev = ev5->pop();
        require_tag("conv", *ca, ev, "elvel");
        ca6->push(*ca);
        tt6->push(*tt);
        st6->push(*st);
        for (std::uint32_t g = 0; g < G; ++g)
          cp6->push({ca->elem_id, g,
                     convective_partial<double, G>(g, ca->value, ga->value, tt->value, st->value,
                                                   quad_, phys_)});
        ev6->push(*ev);
        ctr_conv->fetch_add(1, std::memory_order_relaxed);
      }
      ca6->close();
      tt6->close();
      st6->close();
      cp6->close();
      ev6->close();
    });

    auto* tt7 = make_stream<Tt>("tau", "TauTim", pfx + "visc", pfx + "acc_conv");
    auto* cp7 = make_stream<CPar>("conv_partial", "ConvectivePartial", pfx + "visc", pfx + "acc_conv");
    auto* vp7 = make_stream<VPar>("visc_partial", "ViscousPartial", pfx + "visc", pfx + "acc_conv");
    auto* ev7 = make_stream<Vel>("elvel", "Mat34", pfx + "visc", pfx + "acc_conv");
    auto* ctr_visc = counters_[s_visc].get();
    spawn(s_visc, [this, ca6, tt6, st6, cp6, ev6, tt7, cp7, vp7, ev7, ctr_visc] {
      while (auto ca = ca6->pop()) {
        auto tt = tt6->pop();
        require_tag("visc", *ca, tt, "tau");
        auto st = st6->pop();
        require_tag("visc", *ca, st, "stab");
        std::array<Tagged<CPar>, G> cps;
        for (std::uint32_t g = 0; g < G; ++g) {
          auto cp = cp6->pop();
          require_tag("visc", *ca, cp, "conv_partial");
          if (cp->part != g) throw ProtocolError("visc: conv partials out of order");
          cps[g] = *cp;
        }
        auto ev = ev6->pop();
        require_tag("visc", *ca, ev, "elvel");
        tt7->push(*tt);
        for (std::uint32_t g = 0; g < G; ++g) cp7->push(cps[g]);
        for (std::uint32_t g = 0; g < G; ++g)
          vp7->push({ca->elem_id, g, viscous_partial<double, G>(g, ca->value, st->value, phys_)});
        ev7->push(*ev);
        ctr_visc->fetch_add(1, std::memory_order_relaxed);
      }
      tt7->close();
      cp7->close();
      vp7->close();
      ev7->close();
    });

    auto* tt8 = make_stream<Tt>("tau", "TauTim", pfx + "acc_conv", pfx + "acc_visc");
    auto* vp8 = make_stream<VPar>("visc_partial", "ViscousPartial", pfx + "acc_conv", pfx + "acc_visc");
    auto* mc8 = make_stream<MConv>("conv_total", "ElementMatrices", pfx + "acc_conv", pfx + "acc_visc");
    auto* ev8 = make_stream<Vel>("elvel", "Mat34", pfx + "acc_conv", pfx + "acc_visc");
    auto* ctr_acca = counters_[s_acca].get();
    spawn(s_acca, [tt7, cp7, vp7, ev7, tt8, vp8, mc8, ev8, ctr_acca] {
      while (auto tt = tt7->pop()) {
        MConv m;
        m.zero();
        for (std::uint32_t g = 0; g < G; ++g) {
          auto cp = cp7->pop();
          require_tag("acc_conv", *tt, cp, "conv_partial");
          if (cp->part != g) throw ProtocolError("acc_conv: conv partials out of order");
          add_convective_partial(m, cp->value);
        }
        std::array<Tagged<VPar>, G> vps;
        for (std::uint32_t g = 0; g < G; ++g) {
          auto vp = vp7->pop();
          require_tag("acc_conv", *tt, vp, "visc_partial");
          if (vp->part != g) throw ProtocolError("acc_conv: visc partials out of order");
          vps[g] = *vp;
        }
        auto ev = ev7->pop();
        require_tag("acc_conv", *tt, ev, "elvel");
        tt8->push(*tt);
        for (std::uint32_t g = 0; g < G; ++g) vp8->push(vps[g]);
        mc8->push({tt->elem_id, 0, m});
        ev8->push(*ev);
        ctr_acca->fetch_add(1, std::memory_order_relaxed);
      }
      tt8->close();
      vp8->close();
      mc8->close();
      ev8->close();
    });

    auto* tt9 = make_stream<Tt>("tau", "TauTim", pfx + "acc_visc", pfx + "result");
    auto* mc9 = make_stream<MConv>("conv_total", "ElementMatrices", pfx + "acc_visc", pfx + "result");
    auto* ss9 = make_stream<VSum>("visc_total", "ViscousSum", pfx + "acc_visc", pfx + "result");
    auto* ev9 = make_stream<Vel>("elvel", "Mat34", pfx + "acc_visc", pfx + "result");
    auto* ctr_accb = counters_[s_accb].get();
    spawn(s_accb, [tt8, vp8, mc8, ev8, tt9, mc9, ss9, ev9, ctr_accb] {
      while (auto tt = tt8->pop()) {
        VSum s{};
        for (std::uint32_t g = 0; g < G; ++g) {
          auto vp = vp8->pop();
          require_tag("acc_visc", *tt, vp, "visc_partial");
          if (vp->part != g) throw ProtocolError("acc_visc: visc partials out of order");
          add_viscous_partial(s, vp->value);
        }
        auto mc = mc8->pop();
        require_tag("acc_visc", *tt, mc, "conv_total");
        auto ev = ev8->pop();
        require_tag("acc_visc", *tt, ev, "elvel");
        tt9->push(*tt);
        mc9->push(*mc);
        ss9->push({tt->elem_id, 0, s});
        ev9->push(*ev);
        ctr_accb->fetch_add(1, std::memory_order_relaxed);
      }
      tt9->close();
      mc9->close();
      ss9->close();
      ev9->close();
    });

    auto* ctr_res = counters_[s_res].get();
    spawn(s_res, [tt9, mc9, ss9, ev9, sink, ctr_res] {
      while (auto tt = tt9->pop()) {
        auto mc = mc9->pop();
        require_tag("result", *tt, mc, "conv_total");
        auto ss = ss9->pop();
        require_tag("result", *tt, ss, "visc_total");
        auto ev = ev9->pop();
        require_tag("result", *tt, ev, "elvel");
        MConv m = mc->value;
        viscous_apply(m, ss->value, ev->value);
        ElementResult r;
        r.elem_id = tt->elem_id;
        r.elrbu = m.elrbu;
        r.eldtrho = tt->value.eldtrho;
        r.elmurho = tt->value.elmurho;
        sink->push(r);
        ctr_res->fetch_add(1, std::memory_order_relaxed);
      }
      sink->close();
    });
  }

  // Unrouted topology: replication stages fan values out to every consumer
  // directly, so several streams cross more than one stage boundary, and the
  // input stage emits elvel in bursts of kWriteReorderBurst before the
  // matching elcod values.
  void build_skip_chain(Channel<ElementInput>* src, Channel<ElementResult>* sink,
                        const std::string& pfx, int chain) {
    int pos = 0;
    const std::size_t s_in = add_stage(pfx + "input", chain, pos++);
    const std::size_t s_repv = add_stage(pfx + "rep_elvel", chain, pos++);
    const std::size_t s_cart = add_stage(pfx + "cart", chain, pos++);
    const std::size_t s_repc = add_stage(pfx + "rep_cart", chain, pos++);
    const std::size_t s_gauss = add_stage(pfx + "gauss", chain, pos++);
    const std::size_t s_repg = add_stage(pfx + "rep_gauss", chain, pos++);
    const std::size_t s_tau = add_stage(pfx + "tau", chain, pos++);
    const std::size_t s_rept = add_stage(pfx + "rep_tau", chain, pos++);
    const std::size_t s_stab = add_stage(pfx + "stab", chain, pos++);
    const std::size_t s_reps = add_stage(pfx + "rep_stab", chain, pos++);
    const std::size_t s_conv = add_stage(pfx + "conv", chain, pos++);
    const std::size_t s_visc = add_stage(pfx + "visc", chain, pos++);
    const std::size_t s_acca = add_stage(pfx + "acc_conv", chain, pos++);
    const std::size_t s_accb = add_stage(pfx + "acc_visc", chain, pos++);
    const std::size_t s_res = add_stage(pfx + "result", chain, pos++);

    auto* ev_in = make_stream<Vel>("elvel", "Mat34", pfx + "input", pfx + "rep_elvel");
    auto* ec = make_stream<Cod>("elcod", "Mat34", pfx + "input", pfx + "cart");
    auto* ev_g = make_stream<Vel>("elvel", "Mat34", pfx + "rep_elvel", pfx + "gauss");
    auto* ev_r = make_stream<Vel>("elvel", "Mat34", pfx + "rep_elvel", pfx + "result");
    auto* ca_rep = make_stream<Cart>("cart", "CartesianBasis", pfx + "cart", pfx + "rep_cart");
    auto* ca_g = make_stream<Cart>("cart", "CartesianBasis", pfx + "rep_cart", pfx + "gauss");
    auto* ca_t = make_stream<Cart>("cart", "CartesianBasis", pfx + "rep_cart", pfx + "tau");
    auto* ca_s = make_stream<Cart>("cart", "CartesianBasis", pfx + "rep_cart", pfx + "stab");
    auto* ca_c = make_stream<Cart>("cart", "CartesianBasis", pfx + "rep_cart", pfx + "conv");
    auto* ca_v = make_stream<Cart>("cart", "CartesianBasis", pfx + "rep_cart", pfx + "visc");
    auto* ga_rep = make_stream<Gau>("gauss", "GaussValues", pfx + "gauss", pfx + "rep_gauss");
    auto* ga_t = make_stream<Gau>("gauss", "GaussValues", pfx + "rep_gauss", pfx + "tau");
    auto* ga_s = make_stream<Gau>("gauss", "GaussValues", pfx + "rep_gauss", pfx + "stab");
    auto* ga_c = make_stream<Gau>("gauss", "GaussValues", pfx + "rep_gauss", pfx + "conv");
    auto* tt_rep = make_stream<Tt>("tau", "TauTim", pfx + "tau", pfx + "rep_tau");
    auto* tt_c = make_stream<Tt>("tau", "TauTim", pfx + "rep_tau", pfx + "conv");
    auto* tt_r = make_stream<Tt>("tau", "TauTim", pfx + "rep_tau", pfx + "result");
    auto* st_rep = make_stream<Stb>("stab", "StabMats", pfx + "stab", pfx + "rep_stab");
    auto* st_c = make_stream<Stb>("stab", "StabMats", pfx + "rep_stab", pfx + "conv");
    auto* st_v = make_stream<Stb>("stab", "StabMats", pfx + "rep_stab", pfx + "visc");
    auto* cp = make_stream<CPar>("conv_partial", "ConvectivePartial", pfx + "conv", pfx + "acc_conv");
    auto* vp = make_stream<VPar>("visc_partial", "ViscousPartial", pfx + "visc", pfx + "acc_visc");
    auto* mc = make_stream<MConv>("conv_total", "ElementMatrices", pfx + "acc_conv", pfx + "result");
    auto* ss = make_stream<VSum>("visc_total", "ViscousSum", pfx + "acc_visc", pfx + "result");

    auto* ctr_in = counters_[s_in].get();
    spawn(s_in, [src, ev_in, ec, ctr_in] {
      std::vector<ElementInput> burst;
      burst.reserve(kWriteReorderBurst);
      auto flush = [&] {
        for (const auto& e : burst) ev_in->push({e.elem_id, 0, e.elvel});
        for (const auto& e : burst) ec->push({e.elem_id, 0, e.elcod});
        burst.clear();
      };
      while (auto v = src->pop()) {
        burst.push_back(*v);
        ctr_in->fetch_add(1, std::memory_order_relaxed);
        if (burst.size() == kWriteReorderBurst) flush();
      }
      flush();
      ev_in->close();
      ec->close();
    });

    spawn(s_repv, [ev_in, ev_g, ev_r, c = counters_[s_repv].get()] {
      replicate_stream(*ev_in, {ev_g, ev_r}, c);
    });

    auto* ctr_cart = counters_[s_cart].get();
    spawn(s_cart, [this, ec, ca_rep, ctr_cart] {
      while (auto e = ec->pop()) {
        ca_rep->push({e->elem_id, 0, cartesian_derivatives<double, G>(e->value, quad_, e->elem_id)});
        ctr_cart->fetch_add(1, std::memory_order_relaxed);
      }
      ca_rep->close();
    });

    spawn(s_repc, [ca_rep, ca_g, ca_t, ca_s, ca_c, ca_v, c = counters_[s_repc].get()] {
      replicate_stream(*ca_rep, {ca_g, ca_t, ca_s, ca_c, ca_v}, c);
    });

    auto* ctr_gauss = counters_[s_gauss].get();
    spawn(s_gauss, [this, ca_g, ev_g, ga_rep, ctr_gauss] {
      while (auto ca = ca_g->pop()) {
        auto ev = ev_g->pop();
        require_tag("gauss", *ca, ev, "elvel");
        ga_rep->push({ca->elem_id, 0, gauss_point_values<double, G>(ev->value, ca->value, quad_, phys_)});
        ctr_gauss->fetch_add(1, std::memory_order_relaxed);
      }
      ga_rep->close();
    });

    spawn(s_repg, [ga_rep, ga_t, ga_s, ga_c, c = counters_[s_repg].get()] {
      replicate_stream(*ga_rep, {ga_t, ga_s, ga_c}, c);
    });

    auto* ctr_tau = counters_[s_tau].get();
    spawn(s_tau, [this, ca_t, ga_t, tt_rep, ctr_tau] {
      while (auto ca = ca_t->pop()) {
        auto ga = ga_t->pop();
        require_tag("tau", *ca, ga, "gauss");
        tt_rep->push({ca->elem_id, 0, tau_and_tim<double, G>(ca->value, ga->value, quad_, phys_)});
        ctr_tau->fetch_add(1, std::memory_order_relaxed);
      }
      tt_rep->close();
    });

    spawn(s_rept, [tt_rep, tt_c, tt_r, c = counters_[s_rept].get()] {
      replicate_stream(*tt_rep, {tt_c, tt_r}, c);
    });

    auto* ctr_stab = counters_[s_stab].get();
    spawn(s_stab, [this, ca_s, ga_s, st_rep, ctr_stab] {
      while (auto ca = ca_s->pop()) {
        auto ga = ga_s->pop();
        require_tag("stab", *ca, ga, "gauss");
        st_rep->push({ca->elem_id, 0, element_matrices<double, G>(ca->value, ga->value, phys_)});
        ctr_stab->fetch_add(1, std::memory_order_relaxed);
      }
      st_rep->close();
    });

    spawn(s_reps, [st_rep, st_c, st_v, c = counters_[s_reps].get()] {
      replicate_stream(*st_rep, {st_c, st_v}, c);
    });

    auto* ctr_conv = counters_[s_conv].get();
    spawn(s_conv, [this, ca_c, ga_c, tt_c, st_c, cp, ctr_conv] {
      while (auto ca = ca_c->pop()) {
        auto ga = ga_c->pop();
        require_tag("conv", *ca, ga, "gauss");
        auto tt = tt_c->pop();
        require_tag("conv", *ca, tt, "tau");
        auto st = st_c->pop();
        require_tag("conv", *ca, st, "stab");
        for (std::uint32_t g = 0; g < G; ++g)
          cp->push({ca->elem_id, g,
                    convective_partial<double, G>(g, ca->value, ga->value, tt->value, st->value,
                                                  quad_, phys_)});
        ctr_conv->fetch_add(1, std::memory_order_relaxed);
      }
      cp->close();
    });

    auto* ctr_visc = counters_[s_visc].get();
    spawn(s_visc, [this, ca_v, st_v, vp, ctr_visc] {
      while (auto ca = ca_v->pop()) {
        auto st = st_v->pop();
        require_tag("visc", *ca, st, "stab");
        for (std::uint32_t g = 0; g < G; ++g)
          vp->push({ca->elem_id, g, viscous_partial<double, G>(g, ca->value, st->value, phys_)});
        ctr_visc->fetch_add(1, std::memory_order_relaxed);
      }
      vp->close();
    });

    spawn(s_acca, [cp, mc, c = counters_[s_acca].get()] {
      accumulate_stage<CPar, MConv>(
          *cp, *mc, G, [](MConv& t, const CPar& p) { add_convective_partial(t, p); }, c);
    });

    spawn(s_accb, [vp, ss, c = counters_[s_accb].get()] {
      accumulate_stage<VPar, VSum>(
          *vp, *ss, G, [](VSum& t, const VPar& p) { add_viscous_partial(t, p); }, c);
    });

    auto* ctr_res = counters_[s_res].get();
    spawn(s_res, [tt_r, mc, ss, ev_r, sink, ctr_res] {
      while (auto tt = tt_r->pop()) {
        auto m = mc->pop();
        require_tag("result", *tt, m, "conv_total");
        auto s = ss->pop();
        require_tag("result", *tt, s, "visc_total");
        auto ev = ev_r->pop();
        require_tag("result", *tt, ev, "elvel");
        MConv em = m->value;
        viscous_apply(em, s->value, ev->value);
        ElementResult r;
        r.elem_id = tt->elem_id;
        r.elrbu = em.elrbu;
        r.eldtrho = tt->value.eldtrho;
        r.elmurho = tt->value.elmurho;
        sink->push(r);
        ctr_res->fetch_add(1, std::memory_order_relaxed);
      }
      sink->close();
    });
  }

  template <class T>
  void spawn_distributor(std::size_t stage_idx, Channel<T>* src, std::vector<Channel<T>*> dests) {
    auto* ctr = counters_[stage_idx].get();
    spawn(stage_idx, [src, dests = std::move(dests), ctr] {
      std::size_t rr = 0;
      while (auto v = src->pop()) {
        dests[rr]->push(*v);
        rr = (rr + 1) % dests.size();
        ctr->fetch_add(1, std::memory_order_relaxed);
      }
      for (auto* d : dests) d->close();
    });
  }

  // Pops engine outputs in the same rotation the distributor used, so the
  // merged order equals the global input order.
  void spawn_collector(std::size_t stage_idx, std::vector<Channel<ElementResult>*> srcs,
                       Channel<ElementResult>* sink) {
    auto* ctr = counters_[stage_idx].get();
    spawn(stage_idx, [srcs = std::move(srcs), sink, ctr] {
      std::size_t rr = 0;
      while (true) {
        auto v = srcs[rr]->pop();
        if (!v) break;
        sink->push(*v);
        rr = (rr + 1) % srcs.size();
        ctr->fetch_add(1, std::memory_order_relaxed);
      }
      sink->close();
    });
  }

  void start_watchdog() {
    if (cfg_.watchdog_timeout.count() <= 0) return;
    wd_thread_ = std::thread([this] {
      const auto timeout = cfg_.watchdog_timeout;
      const auto poll = std::max<std::chrono::milliseconds>(
          std::chrono::milliseconds(1), std::min(std::chrono::milliseconds(100), timeout / 8));
      std::uint64_t last = progress_.load(std::memory_order_relaxed);
      auto last_change = std::chrono::steady_clock::now();
      std::unique_lock<std::mutex> lk(wd_m_);
      while (!wd_stop_) {
        wd_cv_.wait_for(lk, poll);
        if (wd_stop_) return;
        const std::uint64_t cur = progress_.load(std::memory_order_relaxed);
        const auto now = std::chrono::steady_clock::now();
        if (cur != last || in_flight() == 0) {
          last = cur;
          last_change = now;
          continue;
        }
        if (now - last_change >= timeout) {
          fail(std::make_exception_ptr(WatchdogStallError(diagnose())));
          return;
        }
      }
    });
  }

  void stop_watchdog() {
    if (!wd_thread_.joinable()) return;
    {
      std::lock_guard<std::mutex> lk(wd_m_);
      wd_stop_ = true;
    }
    wd_cv_.notify_all();
    wd_thread_.join();
  }

  std::string diagnose() const {
    std::ostringstream os;
    os << "elements in flight: " << in_flight() << "\n";
    for (const auto& c : chans_) {
      const ChannelStats s = c->stats();
      os << "  stream " << s.name << ": " << s.occupancy << "/" << s.capacity;
      if (s.occupancy == s.capacity)
        os << " FULL";
      else if (s.occupancy == 0)
        os << " empty";
      os << ", pushed " << s.pushes << ", popped " << s.pops << ", blocked waits "
         << s.full_waits << "/" << s.empty_waits << "\n";
    }
    for (std::size_t i = 0; i < desc_.stages.size(); ++i)
      os << "  stage " << desc_.stages[i].name << ": "
         << counters_[i]->load(std::memory_order_relaxed) << " elements\n";
    return os.str();
  }

  PipelineConfig cfg_;
  PhysParams phys_;
  const Quadrature<G>& quad_;

  std::atomic<std::uint64_t> progress_{0};
  std::atomic<std::uint64_t> in_pushed_{0};
  std::atomic<std::uint64_t> out_popped_{0};

  GraphDescriptor desc_;
  std::vector<std::shared_ptr<ChannelBase>> chans_;
  std::vector<std::unique_ptr<std::atomic<std::uint64_t>>> counters_;
  std::vector<std::function<void()>> pending_;
  std::vector<std::thread> threads_;
  bool joined_ = false;

  std::mutex err_m_;
  std::exception_ptr error_;

  Channel<ElementInput>* in_raw_ = nullptr;
  Channel<PreparedInput<G>>* in_pre_ = nullptr;
  Channel<ElementResult>* out_ = nullptr;

  std::thread wd_thread_;
  std::mutex wd_m_;
  std::condition_variable wd_cv_;
  bool wd_stop_ = false;
};

template <std::size_t G = kDefaultGauss>
std::unique_ptr<Pipeline<G>> build_pipeline(const PipelineConfig& cfg, const PhysParams& phys = {}) {
  return std::make_unique<Pipeline<G>>(cfg, phys);
}

// Feeds the element sequence through, drains the results, joins, and
// surfaces any stage error. One result per input, in input order.
template <std::size_t G = kDefaultGauss>
std::vector<ElementResult> run_pipeline(Pipeline<G>& p, const std::vector<ElementInput>& elements) {
  std::vector<ElementResult> out;
  out.reserve(elements.size());
  std::thread feeder([&] {
    try {
      for (const auto& e : elements) p.push(e);
      p.close_input();
    } catch (const ChannelAborted&) {
    }
  });
  try {
    while (auto r = p.pop_result()) out.push_back(*r);
  } catch (const ChannelAborted&) {
  }
  feeder.join();
  p.join();
  return out;
}

template <std::size_t G = kDefaultGauss>
std::vector<ElementResult> run_pipeline(const PipelineConfig& cfg, const PhysParams& phys,
                                        const std::vector<ElementInput>& elements) {
  Pipeline<G> p(cfg, phys);
  return run_pipeline(p, elements);
}

// Full-mesh assembly through the staged engine; scatter-add happens in
// arrival order, which the collector guarantees equals element order.
template <std::size_t G = kDefaultGauss>
GlobalOutputs assemble_with_pipeline(const Mesh& mesh, const PipelineConfig& cfg,
                                     const PhysParams& phys) {
  Pipeline<G> p(cfg, phys);
  GlobalOutputs out(mesh.num_points);
  std::thread feeder([&] {
    try {
      for (std::uint64_t e = 0; e < mesh.num_elements; ++e) p.push(gather_element(mesh, e));
      p.close_input();
    } catch (const ChannelAborted&) {
    }
  });
  try {
    while (auto r = p.pop_result()) scatter_add(out, mesh, *r);
  } catch (const ChannelAborted&) {
  }
  feeder.join();
  p.join();
  return out;
}

inline std::vector<ElementInput> demo_element_sequence(std::size_t n, std::uint64_t seed = 7) {
  const Mesh mesh = generate_synthetic_mesh(n, 64, seed);
  std::vector<ElementInput> out;
  out.reserve(n);
  for (std::uint64_t e = 0; e < n; ++e) out.push_back(gather_element(mesh, e));
  return out;
}

struct DepthProbe {
  std::size_t depth = 0;
  bool stalled = false;
  std::string diagnosis;
};

struct StallReport {
  std::vector<DepthProbe> probes;
  std::optional<std::size_t> first_safe_depth;
  bool topology_safe = false;  // no probed depth stalled
};

// Runs the unrouted topology over the element sequence at each candidate
// FIFO depth and records which depths stall.
template <std::size_t G = kDefaultGauss>
StallReport find_stall(const std::vector<ElementInput>& elements, const PhysParams& phys = {},
                       const std::vector<std::size_t>& depths = {1, 2, 3, 4},
                       std::chrono::milliseconds watchdog = std::chrono::milliseconds(500)) {
  StallReport report;
  for (std::size_t d : depths) {
    PipelineConfig cfg;
    cfg.fifo_depth = d;
    cfg.routing_enabled = false;
    cfg.watchdog_timeout = watchdog;
    DepthProbe probe;
    probe.depth = d;
    try {
      Pipeline<G> p(cfg, phys);
      auto out = run_pipeline(p, elements);
      if (out.size() != elements.size())
        throw ProtocolError("pipeline dropped elements at depth " + std::to_string(d));
    } catch (const WatchdogStallError& e) {
      probe.stalled = true;
      probe.diagnosis = e.diagnosis;
    }
    if (!probe.stalled && !report.first_safe_depth) report.first_safe_depth = d;
    report.probes.push_back(std::move(probe));
  }
  report.topology_safe = true;
  for (const auto& p : report.probes)
    if (p.stalled) report.topology_safe = false;
  return report;
}

}  // namespace flowforge
