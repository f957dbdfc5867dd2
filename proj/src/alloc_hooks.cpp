// Global allocation instrumentation for the benchmark harness. Every
// allocation carries a 16-byte header holding the malloc base pointer and the
// requested size, so deallocation can account bytes without sized-delete
// guarantees. Counters are plain (the benchmark contract is single-threaded
// timed regions).

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <new>

#include "cmml/bench.hpp"

namespace {

std::uint64_t g_allocations = 0;
std::uint64_t g_allocated_bytes = 0;
std::uint64_t g_outstanding = 0;
std::uint64_t g_peak_outstanding = 0;

struct Header {
  void* base;
  std::size_t size;
};

void* instrumented_alloc(std::size_t size, std::size_t alignment) {
  if (alignment < alignof(std::max_align_t)) alignment = alignof(std::max_align_t);
  std::size_t total = size + alignment + sizeof(Header);
  void* base = std::malloc(total);
  if (!base) return nullptr;
  auto addr = reinterpret_cast<std::uintptr_t>(base) + sizeof(Header);
  addr = (addr + alignment - 1) & ~(alignment - 1);
  auto* header = reinterpret_cast<Header*>(addr - sizeof(Header));
  header->base = base;
  header->size = size;
  ++g_allocations;
  g_allocated_bytes += size;
  g_outstanding += size;
  if (g_outstanding > g_peak_outstanding) g_peak_outstanding = g_outstanding;
  return reinterpret_cast<void*>(addr);
}

void instrumented_free(void* p) {
  if (!p) return;
  auto* header = reinterpret_cast<Header*>(reinterpret_cast<std::uintptr_t>(p) - sizeof(Header));
  g_outstanding -= header->size;
  std::free(header->base);
}

}  // namespace

namespace cmml {

AllocSnapshot alloc_snapshot() {
  AllocSnapshot s;
  s.allocations = g_allocations;
  s.allocated_bytes = g_allocated_bytes;
  s.peak_outstanding_bytes = g_peak_outstanding;
  return s;
}

void alloc_reset_peak() { g_peak_outstanding = g_outstanding; }

}  // namespace cmml

void* operator new(std::size_t size) {
  void* p = instrumented_alloc(size, alignof(std::max_align_t));
  if (!p) throw std::bad_alloc();
  return p;
}

void* operator new[](std::size_t size) { return ::operator new(size); }

void* operator new(std::size_t size, std::align_val_t align) {
  void* p = instrumented_alloc(size, static_cast<std::size_t>(align));
  if (!p) throw std::bad_alloc();
  return p;
}

void* operator new[](std::size_t size, std::align_val_t align) {
  return ::operator new(size, align);
}

void* operator new(std::size_t size, const std::nothrow_t&) noexcept {
  return instrumented_alloc(size, alignof(std::max_align_t));
}

void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {
  return instrumented_alloc(size, alignof(std::max_align_t));
}

void operator delete(void* p) noexcept { instrumented_free(p); }
void operator delete[](void* p) noexcept { instrumented_free(p); }
void operator delete(void* p, std::size_t) noexcept { instrumented_free(p); }
void operator delete[](void* p, std::size_t) noexcept { instrumented_free(p); }
void operator delete(void* p, std::align_val_t) noexcept { instrumented_free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { instrumented_free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { instrumented_free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { instrumented_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { instrumented_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { instrumented_free(p); }
