#include "cardioquant/phase.hpp"

#include <cmath>
#include <string>

#include "cardioquant/errors.hpp"

namespace cq {

namespace {

// Systolic arc of `len` frames starting at `start`, wrapping around the
// cycle. len 0 and kPhaseFrames yield the two constant sequences.
PhaseSequence arc_candidate(int start, int len) {
  PhaseSequence c{};
  for (int i = 0; i < len; ++i) c[static_cast<std::size_t>((start + i) % kPhaseFrames)] = 1;
  return c;
}

}  // namespace

int cyclic_transitions(const PhaseSequence& bits) {
  int n = 0;
  for (int t = 0; t < kPhaseFrames; ++t)
    n += bits[static_cast<std::size_t>(t)] !=
         bits[static_cast<std::size_t>((t + 1) % kPhaseFrames)];
  return n;
}

PhaseSequence threshold_phase(const std::array<float, kPhaseFrames>& a1_sequence) {
  float lo = a1_sequence[0];
  float hi = a1_sequence[0];
  for (float v : a1_sequence) {
    if (!std::isfinite(v))
      throw ValidationError("phase threshold needs finite cavity areas, got " +
                            std::to_string(v));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi)
    throw DegenerateSequenceError(
        "all cavity areas equal " + std::to_string(lo) +
        ", no threshold separates systole from diastole");
  const float tau = 0.5f * (lo + hi);
  PhaseSequence bits{};
  for (int t = 0; t < kPhaseFrames; ++t)
    bits[static_cast<std::size_t>(t)] = a1_sequence[static_cast<std::size_t>(t)] < tau ? 1 : 0;
  return bits;
}

PhaseSequence regularize_phase(const PhaseSequence& raw) {
  for (std::uint8_t b : raw)
    if (b > 1)
      throw ValidationError("phase bits must be 0 or 1, got " + std::to_string(int(b)));

  PhaseSequence best{};
  int best_agree = -1;
  int best_trans = 0;
  int best_start = 0;
  int best_len = 0;
  auto consider = [&](int start, int len) {
    const PhaseSequence c = arc_candidate(start, len);
    int agree = 0;
    for (int t = 0; t < kPhaseFrames; ++t)
      agree += c[static_cast<std::size_t>(t)] == raw[static_cast<std::size_t>(t)];
    const int trans = cyclic_transitions(c);
    bool better = false;
    if (agree != best_agree)
      better = agree > best_agree;
    else if (trans != best_trans)
      better = trans < best_trans;
    else if (start != best_start)
      better = start < best_start;
    else
      better = len < best_len;
    if (better) {
      best = c;
      best_agree = agree;
      best_trans = trans;
      best_start = start;
      best_len = len;
    }
  };
  consider(0, 0);
  consider(0, kPhaseFrames);
  for (int start = 0; start < kPhaseFrames; ++start)
    for (int len = 1; len < kPhaseFrames; ++len) consider(start, len);
  return best;
}

double phase_accuracy(const std::vector<PhaseSequence>& predicted,
                      const std::vector<PhaseSequence>& truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("phase accuracy needs one prediction per subject, got " +
                          std::to_string(predicted.size()) + " vs " +
                          std::to_string(truth.size()));
  if (predicted.empty()) throw ValidationError("phase accuracy needs at least one subject");
  long agree = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (int t = 0; t < kPhaseFrames; ++t)
      agree += predicted[i][static_cast<std::size_t>(t)] == truth[i][static_cast<std::size_t>(t)];
  return static_cast<double>(agree) /
         (static_cast<double>(predicted.size()) * kPhaseFrames);
}

}  // namespace cq
