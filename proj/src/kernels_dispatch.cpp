#include <cstdlib>

#include "genbp/kernels.hpp"

namespace genbp::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(GENBP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Backend* pick_default() {
#ifdef GENBP_HAVE_AVX2
  if (cpu_has_avx2()) {
    if (const char* env = std::getenv("GENBP_KERNELS");
        env != nullptr && std::string_view(env) == "scalar") {
      return &scalar_backend();
    }
    return &avx2_backend();
  }
#endif
  return &scalar_backend();
}

const Backend*& current() {
  static const Backend* backend = pick_default();
  return backend;
}

}  // namespace

const Backend& active() { return *current(); }

bool set_backend(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_backend();
    return true;
  }
#ifdef GENBP_HAVE_AVX2
  if (name == "avx2" && cpu_has_avx2()) {
    current() = &avx2_backend();
    return true;
  }
#endif
  return false;
}

std::string available_backends() {
  std::string out = "scalar";
#ifdef GENBP_HAVE_AVX2
  if (cpu_has_avx2()) out += ",avx2";
#endif
  return out;
}

}  // namespace genbp::kernels
