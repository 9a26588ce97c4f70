#pragma once

#include <cstdint>
#include <string_view>

namespace aptest {

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Sub-seed for one pipeline stage and (optionally) one module. Independent of
// scheduling order, so parallel and serial runs draw identical streams.
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stage_tag, std::int64_t a = -1,
                          std::int64_t b = -1);

}  // namespace aptest
