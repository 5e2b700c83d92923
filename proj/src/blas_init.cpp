#include <cstdio>
#include <cstdlib>
#include <cstring>

// OpenBLAS picks its kernel set from CPUID at load time and on some Xeon
// steppings lands on a generic kernel that is several times slower than the
// AVX-512 one. The corename override must be in the environment before the
// library initializer runs, so this runs at constructor priority 101 (library
// constructors run later) and only touches variables the user left unset.
namespace {

bool cpu_has_avx512f() {
  std::FILE* f = std::fopen("/proc/cpuinfo", "r");
  if (!f) return false;
  char line[4096];
  bool found = false;
  while (std::fgets(line, sizeof(line), f)) {
    if (std::strncmp(line, "flags", 5) == 0 && std::strstr(line, " avx512f")) {
      found = true;
      break;
    }
  }
  std::fclose(f);
  return found;
}

__attribute__((constructor(101))) void pin_blas_runtime() {
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
  if (cpu_has_avx512f()) setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
}

}  // namespace
