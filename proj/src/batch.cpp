#include "riceem/batch.hpp"

#include <cstdlib>

namespace riceem {

unsigned default_worker_count() {
  if (const char* env = std::getenv("RICE_EM_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace riceem
