#pragma once

namespace gradia {

// Keeps large tensor buffers on the heap instead of fresh mmap pages, which
// otherwise dominates training time through page faults. No-op off glibc.
void tune_allocator();

}  // namespace gradia
