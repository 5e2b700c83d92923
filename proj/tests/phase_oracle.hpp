#pragma once

#include <bit>
#include <cstdint>

#include "cardioquant/phase.hpp"

// Reference implementation of the phase projection, kept deliberately apart
// from the library: sequences live in 20-bit masks, agreement and transition
// counts come from popcount, and candidates are enumerated length-major
// instead of start-major. The selection key (agreement desc, transitions asc,
// start asc, length asc) is a strict total order over the 382 candidates, so
// any enumeration order must land on the same winner as the library.
namespace testutil {

constexpr std::uint32_t kPhaseMask = (1u << cq::kPhaseFrames) - 1;

inline std::uint32_t rotl_cycle(std::uint32_t x, int k) {
  k %= cq::kPhaseFrames;
  if (k == 0) return x & kPhaseMask;
  return ((x << k) | (x >> (cq::kPhaseFrames - k))) & kPhaseMask;
}

inline std::uint32_t pack_phase(const cq::PhaseSequence& bits) {
  std::uint32_t m = 0;
  for (int t = 0; t < cq::kPhaseFrames; ++t)
    if (bits[static_cast<std::size_t>(t)]) m |= 1u << t;
  return m;
}

inline cq::PhaseSequence unpack_phase(std::uint32_t m) {
  cq::PhaseSequence bits{};
  for (int t = 0; t < cq::kPhaseFrames; ++t)
    bits[static_cast<std::size_t>(t)] = (m >> t) & 1u;
  return bits;
}

inline int mask_transitions(std::uint32_t m) {
  return std::popcount((m ^ rotl_cycle(m, 1)) & kPhaseMask);
}

// Candidates scored by the most recent oracle_regularize call; the tests pin
// it to 382 (2 constants + 20 starts x 19 lengths).
inline int oracle_candidate_count = 0;

inline cq::PhaseSequence oracle_regularize(const cq::PhaseSequence& raw) {
  const std::uint32_t r = pack_phase(raw);
  std::uint32_t best = 0;
  int best_agree = -1;
  int best_trans = 0;
  int best_start = 0;
  int best_len = 0;
  int candidates = 0;
  auto consider = [&](std::uint32_t m, int start, int len) {
    ++candidates;
    const int agree = cq::kPhaseFrames - std::popcount((m ^ r) & kPhaseMask);
    const int trans = mask_transitions(m);
    const bool better =
        agree != best_agree   ? agree > best_agree
        : trans != best_trans ? trans < best_trans
        : start != best_start ? start < best_start
                              : len < best_len;
    if (better) {
      best = m;
      best_agree = agree;
      best_trans = trans;
      best_start = start;
      best_len = len;
    }
  };
  for (int len = cq::kPhaseFrames; len >= 0; --len) {
    if (len == 0 || len == cq::kPhaseFrames) {
      consider(len == 0 ? 0u : kPhaseMask, 0, len);
      continue;
    }
    const std::uint32_t base = (1u << len) - 1;
    for (int start = cq::kPhaseFrames - 1; start >= 0; --start)
      consider(rotl_cycle(base, start), start, len);
  }
  oracle_candidate_count = candidates;
  return unpack_phase(best);
}

}  // namespace testutil
