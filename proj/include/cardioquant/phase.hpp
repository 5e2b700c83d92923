#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace cq {

// Frames in one cardiac cycle; every phase sequence covers exactly one cycle.
inline constexpr int kPhaseFrames = 20;

// One bit per frame, 1 systolic, 0 diastolic. Raw thresholded bits may flip
// arbitrarily often; regularize_phase projects them onto the physiologically
// valid shapes (at most two transitions around the cyclic sequence).
using PhaseSequence = std::array<std::uint8_t, kPhaseFrames>;

// Number of positions t where bits[t] != bits[(t+1) mod 20].
int cyclic_transitions(const PhaseSequence& bits);

// Thresholds cavity areas at the mid-range value tau = (min + max) / 2 and
// marks frames with a1 < tau as systolic (a contracted ventricle has the
// smaller cavity). The threshold is local to the given sequence, so subjects
// with different heart sizes are each split at their own midpoint.
//
// Throws ValidationError on non-finite areas and DegenerateSequenceError when
// all areas are equal; callers treat the latter as an all-diastolic cycle.
PhaseSequence threshold_phase(const std::array<float, kPhaseFrames>& a1_sequence);

// Returns the sequence with at most two cyclic transitions that agrees with
// the raw bits on the largest number of frames, found by scoring every
// candidate: the two constant sequences plus every systolic arc (20 start
// positions x 19 lengths, 382 total). Ties are broken by fewer transitions,
// then earlier systole start, then shorter arc; the last rule also orders the
// two constants (all-diastolic first), which the first two leave tied.
//
// Input that already satisfies the transition budget is its own best
// candidate and comes back unchanged, which makes the projection idempotent.
// Throws ValidationError if the input holds values other than 0 and 1.
PhaseSequence regularize_phase(const PhaseSequence& raw);

// Mean per-frame agreement between predicted and true sequences, pooled over
// all subjects. Throws ValidationError on mismatched or empty lists.
double phase_accuracy(const std::vector<PhaseSequence>& predicted,
                      const std::vector<PhaseSequence>& truth);

}  // namespace cq
