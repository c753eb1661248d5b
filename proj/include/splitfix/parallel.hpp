#pragma once

#include <cstddef>
#include <functional>

namespace splitfix {

// Worker cap read once from SPLITFIX_THREADS (unset or 0 means serial).
std::size_t thread_cap();
void set_thread_cap(std::size_t n);

// Runs fn(i) for i in [0, n). Each index must write only its own output slot, so the
// result does not depend on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace splitfix
