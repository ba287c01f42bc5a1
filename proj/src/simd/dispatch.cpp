#include <cstdlib>
#include <string_view>

#include "emrp/simd/kernels.hpp"

namespace emrp::simd {

#if !defined(EMRP_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(EMRP_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif

namespace {

bool cpu_runs(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& choose() {
  const auto tables = available_tables();
  if (const char* forced = std::getenv("EMRP_SIMD")) {
    for (const auto* t : tables) {
      if (std::string_view(forced) == t->name) return *t;
    }
  }
  return *tables.back();
}

}  // namespace

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> out{&scalar_table()};
  for (const auto* t : {avx2_table(), neon_table()}) {
    if (t != nullptr && cpu_runs(t->isa)) out.push_back(t);
  }
  return out;
}

const KernelTable& active() {
  static const KernelTable& table = choose();
  return table;
}

}  // namespace emrp::simd
