#pragma once

namespace smesh {

/// Keeps freed heap pages mapped between optimisation steps. The tape
/// allocates and frees many large buffers per step; returning them to the OS
/// each time costs more than the arithmetic. No-op outside glibc.
void tune_allocator();

}  // namespace smesh
