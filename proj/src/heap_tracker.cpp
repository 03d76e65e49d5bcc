// SPDX-License-Identifier: Apache-2.0
// Replaces the global allocation functions to keep a running byte count.
#include <malloc.h>

#include <atomic>
#include <cstdlib>
#include <new>

#include "smatch/bench.hpp"

namespace {

std::atomic<std::uint64_t> g_in_use{0};
std::atomic<std::uint64_t> g_peak{0};

void* tracked_alloc(std::size_t n) {
  void* p = std::malloc(n ? n : 1);
  if (!p) throw std::bad_alloc();
  const std::uint64_t now = g_in_use.fetch_add(malloc_usable_size(p), std::memory_order_relaxed) +
                            malloc_usable_size(p);
  std::uint64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
  return p;
}

void tracked_free(void* p) noexcept {
  if (!p) return;
  g_in_use.fetch_sub(malloc_usable_size(p), std::memory_order_relaxed);
  std::free(p);
}

}  // namespace

void* operator new(std::size_t n) { return tracked_alloc(n); }
void* operator new[](std::size_t n) { return tracked_alloc(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  try {
    return tracked_alloc(n);
  } catch (...) {
    return nullptr;
  }
}
void* operator new[](std::size_t n, const std::nothrow_t& t) noexcept { return operator new(n, t); }
void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { tracked_free(p); }

namespace smatch {

std::uint64_t heap_bytes_in_use() noexcept { return g_in_use.load(std::memory_order_relaxed); }
std::uint64_t heap_peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }
void reset_heap_peak() noexcept { g_peak.store(g_in_use.load(std::memory_order_relaxed), std::memory_order_relaxed); }

}  // namespace smatch
