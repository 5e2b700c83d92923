#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "cardioquant/hash.hpp"
#include "cardioquant/phantom.hpp"
#include "cardioquant/pgm.hpp"

using namespace cq;
namespace fs = std::filesystem;

namespace {

std::size_t count_class(const Tensor& m, int cls) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    if (static_cast<int>(std::lround(m.data()[i])) == cls) ++n;
  }
  return n;
}

int cyclic_transitions(const Subject& s) {
  int n = 0;
  for (int t = 0; t < kFramesPerCycle; ++t) {
    const int next = (t + 1) % kFramesPerCycle;
    if (s.frames[static_cast<std::size_t>(t)].phase !=
        s.frames[static_cast<std::size_t>(next)].phase) {
      ++n;
    }
  }
  return n;
}

// Flood fill from the border over non-myocardium pixels; the cavity must be
// unreachable, which is exactly the nesting invariant.
bool cavity_sealed(const Tensor& labels) {
  const int H = labels.dim(0), W = labels.dim(1);
  std::vector<char> seen(static_cast<std::size_t>(H) * W, 0);
  std::vector<int> stack;
  auto push = [&](int y, int x) {
    const int p = y * W + x;
    if (seen[static_cast<std::size_t>(p)]) return;
    if (static_cast<int>(std::lround(labels.at(y, x))) == kMyocardium) return;
    seen[static_cast<std::size_t>(p)] = 1;
    stack.push_back(p);
  };
  for (int x = 0; x < W; ++x) {
    push(0, x);
    push(H - 1, x);
  }
  for (int y = 0; y < H; ++y) {
    push(y, 0);
    push(y, W - 1);
  }
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    const int y = p / W, x = p % W;
    if (static_cast<int>(std::lround(labels.at(y, x))) == kCavity) return false;
    if (y > 0) push(y - 1, x);
    if (y < H - 1) push(y + 1, x);
    if (x > 0) push(y, x - 1);
    if (x < W - 1) push(y, x + 1);
  }
  return true;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("same rng stream generates bit-identical subjects") {
  PhantomSpec spec;
  Rng r1(mix_seed(7, "phantom/0"));
  Rng r2(mix_seed(7, "phantom/0"));
  const Subject a = generate_subject(spec, r1, "subj_0");
  const Subject b = generate_subject(spec, r2, "subj_0");
  REQUIRE(a.frames.size() == kFramesPerCycle);
  for (int t = 0; t < kFramesPerCycle; ++t) {
    const Frame& fa = a.frames[static_cast<std::size_t>(t)];
    const Frame& fb = b.frames[static_cast<std::size_t>(t)];
    CHECK(fa.image.vec() == fb.image.vec());
    CHECK(fa.labels.vec() == fb.labels.vec());
    CHECK(fa.phase == fb.phase);
    for (int i = 0; i < IndexVector::kCount; ++i) CHECK(fa.truth[i] == fb.truth[i]);
  }
}

TEST_CASE("generated subjects satisfy the mask and truth invariants") {
  PhantomSpec spec;
  for (std::uint64_t k = 0; k < 4; ++k) {
    Rng rng(mix_seed(11, "phantom/" + std::to_string(k)));
    const Subject s = generate_subject(spec, rng, "s");
    std::vector<std::size_t> areas;
    for (const Frame& f : s.frames) {
      CHECK(cavity_sealed(f.labels));
      const std::size_t c2 = count_class(f.labels, kCavity);
      const std::size_t c1 = count_class(f.labels, kMyocardium);
      CHECK(static_cast<double>(f.truth.a1()) == static_cast<double>(c2));
      CHECK(static_cast<double>(f.truth.a2()) == static_cast<double>(c1));
      for (int i = 0; i < IndexVector::kCount; ++i) CHECK(f.truth[i] > 0.0f);
      areas.push_back(c2);
      for (std::size_t i = 0; i < f.image.numel(); ++i) {
        CHECK(f.image.data()[i] >= 0.0f);
        CHECK(f.image.data()[i] <= 1.0f);
      }
    }
    CHECK(cyclic_transitions(s) == 2);

    // Unimodal area valley: constant outside the systole window, single
    // descent and ascent inside it.
    const std::size_t rest = areas[0];
    for (int t = 0; t <= spec.systole_onset; ++t) CHECK(areas[static_cast<std::size_t>(t)] == rest);
    for (int t = spec.systole_offset; t < kFramesPerCycle; ++t) {
      CHECK(areas[static_cast<std::size_t>(t)] == rest);
    }
    const auto mn = std::min_element(areas.begin(), areas.end());
    const int arg = static_cast<int>(std::distance(areas.begin(), mn));
    for (int t = spec.systole_onset; t < arg; ++t) {
      CHECK(areas[static_cast<std::size_t>(t)] >= areas[static_cast<std::size_t>(t + 1)]);
    }
    for (int t = arg; t < spec.systole_offset; ++t) {
      CHECK(areas[static_cast<std::size_t>(t)] <= areas[static_cast<std::size_t>(t + 1)]);
    }

    // Systolic frames are exactly the small-area frames selected by phase.
    for (int t = 0; t < kFramesPerCycle; ++t) {
      if (s.frames[static_cast<std::size_t>(t)].phase == 1) {
        CHECK(areas[static_cast<std::size_t>(t)] < rest);
      }
    }
  }
}

TEST_CASE("invalid specs are rejected with validation errors") {
  PhantomSpec s;
  s.epi_radius = s.endo_radius;
  CHECK_THROWS_AS(validate(s), ValidationError);

  s = PhantomSpec{};
  s.contraction_depth = 0.05;
  CHECK_THROWS_AS(validate(s), ValidationError);

  s = PhantomSpec{};
  s.contraction_depth = 0.6;
  CHECK_THROWS_AS(validate(s), ValidationError);

  s = PhantomSpec{};
  s.systole_offset = s.systole_onset + 1;
  CHECK_THROWS_AS(validate(s), ValidationError);

  s = PhantomSpec{};
  s.endo_radius = 2.2;
  s.contraction_depth = 0.5;  // cavity would dip below 2 px
  CHECK_THROWS_AS(validate(s), ValidationError);

  s = PhantomSpec{};
  s.epi_radius = 40.0;  // leaves the 64 px canvas
  CHECK_THROWS_AS(validate(s), ValidationError);

  s = PhantomSpec{};
  s.perturb_amp2 = 0.3;
  s.perturb_amp3 = 0.25;
  CHECK_THROWS_AS(validate(s), ValidationError);

  CHECK_NOTHROW(validate(PhantomSpec{}));
}

TEST_CASE("dataset round-trips through the on-disk layout") {
  const fs::path dir = fresh_dir("cq_phantom_roundtrip");
  PhantomSpec spec;
  const auto written = generate_dataset(spec, 3, 21, dir.string());
  REQUIRE(written.size() == 3);

  const auto loaded = load_dataset(dir.string());
  REQUIRE(loaded.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(loaded[k].id == written[k].id);
    REQUIRE(loaded[k].frames.size() == kFramesPerCycle);
    for (int t = 0; t < kFramesPerCycle; ++t) {
      const Frame& w = written[k].frames[static_cast<std::size_t>(t)];
      const Frame& l = loaded[k].frames[static_cast<std::size_t>(t)];
      CHECK(w.image.vec() == l.image.vec());
      CHECK(w.labels.vec() == l.labels.vec());
      CHECK(w.phase == l.phase);
      for (int i = 0; i < IndexVector::kCount; ++i) CHECK(w.truth[i] == l.truth[i]);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("regeneration with the same seed is file-for-file identical") {
  const fs::path d1 = fresh_dir("cq_phantom_hash_a");
  const fs::path d2 = fresh_dir("cq_phantom_hash_b");
  PhantomSpec spec;
  generate_dataset(spec, 3, 33, d1.string());
  generate_dataset(spec, 3, 33, d2.string());

  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), d1);
    CHECK(sha256_file(entry.path().string()) == sha256_file((d2 / rel).string()));
    ++files;
  }
  CHECK(files == 1 + 3 * (2 * kFramesPerCycle + 1));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("different seeds give different images") {
  PhantomSpec spec;
  Rng r1(mix_seed(1, "phantom/0"));
  Rng r2(mix_seed(2, "phantom/0"));
  const Subject a = generate_subject(spec, r1, "s");
  const Subject b = generate_subject(spec, r2, "s");
  CHECK(a.frames[0].image.vec() != b.frames[0].image.vec());
}

TEST_CASE("load errors name the offending subject") {
  const fs::path dir = fresh_dir("cq_phantom_badload");
  PhantomSpec spec;
  generate_dataset(spec, 3, 5, dir.string());

  fs::remove(dir / "subj_1" / "frame_19.pgm");
  try {
    load_dataset(dir.string());
    FAIL("expected a load error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("subj_1") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("empty or missing dataset directories are reported") {
  const fs::path dir = fresh_dir("cq_phantom_empty");
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_dataset(dir.string()), InsufficientDataError);
  CHECK_THROWS_AS(load_dataset((dir / "nope").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("dataset generation insists on at least 3 subjects") {
  const fs::path dir = fresh_dir("cq_phantom_toofew");
  CHECK_THROWS_AS(generate_dataset(PhantomSpec{}, 2, 1, dir.string()), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("pgm image and label files round-trip exactly") {
  const fs::path dir = fresh_dir("cq_pgm_roundtrip");
  fs::create_directories(dir);

  Tensor img({5, 7});
  for (std::size_t i = 0; i < img.numel(); ++i) {
    img.data()[i] = static_cast<float>(i) / static_cast<float>(img.numel());
  }
  quantize_to_bytes(img);
  const std::string ipath = (dir / "img.pgm").string();
  write_image_pgm(ipath, img);
  CHECK(read_image_pgm(ipath).vec() == img.vec());

  Tensor lab({4, 3});
  for (std::size_t i = 0; i < lab.numel(); ++i) lab.data()[i] = static_cast<float>(i % 3);
  const std::string lpath = (dir / "lab.pgm").string();
  write_label_pgm(lpath, lab);
  CHECK(read_label_pgm(lpath).vec() == lab.vec());

  CHECK_THROWS_AS(read_image_pgm((dir / "missing.pgm").string()), IoError);
  fs::remove_all(dir);
}
