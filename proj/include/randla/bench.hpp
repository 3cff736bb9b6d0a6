#pragma once

#include "randla/core.hpp"
#include "randla/sampling.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace randla {

struct BenchRow {
  std::string kind;  // sampler name, suffixed with "-cascade" for the five-step runs
  Index n = 0;
  Index m = 0;
  int rep = 0;
  double seconds = 0;
  std::int64_t bytes = 0;
};

struct BenchFailure {
  std::string kind;
  Index n = 0;
  std::string message;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<BenchFailure> failures;
  int repetitions = 0;
  std::uint64_t seed = 0;

  /// Header `kind,n,m,rep,seconds,bytes`, one line per row.
  void write_csv(std::ostream& out) const;

  /// Minimum and median wall time over repetitions for (kind, n).
  double min_seconds(const std::string& kind, Index n) const;
  double median_seconds(const std::string& kind, Index n) const;
};

struct BenchOptions {
  std::vector<Index> scales{1000, 10000, 100000, 1000000};
  double fraction = 0.1;
  std::vector<SamplerKind> kinds{SamplerKind::RS, SamplerKind::FPS, SamplerKind::IDIS, SamplerKind::PDS};
  int repetitions = 5;
  std::uint64_t seed = 0;
  bool single_shot = true;
  bool cascade = true;
  int cascade_steps = 5;
  double cascade_keep = 0.25;
  int idis_t = 16;
  double pds_tolerance = 0.1;
};

/// N points uniform in the unit cube.
Coords uniform_cube(Index n, Rng& rng);

/// Wall time of one sampler call drawing m of the given points. PDS runs at a
/// radius fitted beforehand (the fit is not timed); IDIS includes its index
/// build. Returns the number of points actually drawn through `drawn`.
double time_sampler(SamplerKind kind, const Coords& coords, Index m, Rng& rng, int idis_t, double pds_tolerance,
                    IndexList* drawn = nullptr);

/// Five-step cascade keeping `keep` of the points per step; returns the total
/// time and the final point count.
std::pair<double, Index> time_cascade(SamplerKind kind, const Coords& coords, int steps, double keep, Rng& rng,
                                      int idis_t, double pds_tolerance);

/// Runs every kind at every scale: single-shot `fraction` draws and the
/// cascade. Kinds run sequentially; a failing kind is recorded, not fatal.
BenchReport benchmark_samplers(const BenchOptions& options);

/// Best-effort resident-set peak tracking via /proc (Linux only).
std::int64_t resident_bytes();
void reset_peak_resident();
std::int64_t peak_resident_bytes();

}  // namespace randla
