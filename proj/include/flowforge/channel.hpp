#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "flowforge/core.hpp"

namespace flowforge {

// Thrown inside stage threads when the graph is torn down; never escapes the
// pipeline API.
class ChannelAborted : public Error {
 public:
  ChannelAborted() : Error("channel aborted") {}
};

struct ChannelStats {
  std::string name;
  std::size_t capacity = 0;
  std::uint64_t pushes = 0;
  std::uint64_t pops = 0;
  std::size_t max_occupancy = 0;
  std::size_t occupancy = 0;
  std::uint64_t full_waits = 0;
  std::uint64_t empty_waits = 0;
};

class ChannelBase {
 public:
  virtual ~ChannelBase() = default;
  virtual ChannelStats stats() const = 0;
  virtual void abort() = 0;
};

// Bounded blocking FIFO with one producer and one consumer. Every successful
// push or pop bumps the shared progress counter the watchdog samples.
template <class T>
class Channel final : public ChannelBase {
 public:
  Channel(std::string name, std::size_t capacity, std::atomic<std::uint64_t>* progress)
      : name_(std::move(name)), capacity_(capacity), progress_(progress) {
    if (capacity_ < 1) throw ConfigError("channel capacity must be >= 1");
  }

  void push(T v) {
    std::unique_lock<std::mutex> lk(m_);
    if (q_.size() >= capacity_) {
      ++full_waits_;
      not_full_.wait(lk, [&] { return aborted_ || q_.size() < capacity_; });
    }
    if (aborted_) throw ChannelAborted();
    q_.push_back(std::move(v));
    ++pushes_;
    if (q_.size() > max_occ_) max_occ_ = q_.size();
    if (progress_) progress_->fetch_add(1, std::memory_order_relaxed);
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lk(m_);
    if (q_.empty() && !closed_ && !aborted_) {
      ++empty_waits_;
      not_empty_.wait(lk, [&] { return aborted_ || closed_ || !q_.empty(); });
    }
    if (aborted_) throw ChannelAborted();
    if (q_.empty()) return std::nullopt;  // closed and drained
    T v = std::move(q_.front());
    q_.pop_front();
    ++pops_;
    if (progress_) progress_->fetch_add(1, std::memory_order_relaxed);
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard<std::mutex> lk(m_);
    closed_ = true;
    not_empty_.notify_all();
  }

  void abort() override {
    std::lock_guard<std::mutex> lk(m_);
    aborted_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  ChannelStats stats() const override {
    std::lock_guard<std::mutex> lk(m_);
    return ChannelStats{name_, capacity_, pushes_,      pops_,
                        max_occ_, q_.size(), full_waits_, empty_waits_};
  }

 private:
  std::string name_;
  std::size_t capacity_;
  std::atomic<std::uint64_t>* progress_;
  mutable std::mutex m_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> q_;
  bool closed_ = false;
  bool aborted_ = false;
  std::uint64_t pushes_ = 0, pops_ = 0, full_waits_ = 0, empty_waits_ = 0;
  std::size_t max_occ_ = 0;
};

}  // namespace flowforge
