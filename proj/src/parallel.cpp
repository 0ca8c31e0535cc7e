#include "posegauss/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace pg {
namespace {

int default_threads() {
  if (const char* env = std::getenv("POSEGAUSS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> n{default_threads()};
  return n;
}

}  // namespace

int num_threads() { return thread_setting().load(); }
void set_num_threads(int n) { thread_setting().store(std::max(1, n)); }

}  // namespace pg
