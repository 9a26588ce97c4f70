#include "aptest/seed.hpp"

namespace aptest {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stage_tag, std::int64_t a,
                          std::int64_t b) {
  std::uint64_t h = mix64(master_seed);
  for (unsigned char c : stage_tag) h = mix64(h ^ c);
  h = mix64(h ^ static_cast<std::uint64_t>(a));
  h = mix64(h ^ static_cast<std::uint64_t>(b));
  return h;
}

}  // namespace aptest
