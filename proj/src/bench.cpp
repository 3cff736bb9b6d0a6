#include "randla/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace randla {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::int64_t read_status_kb(const char* key) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::string prefix = std::string(key) + ":";
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0) {
      std::istringstream fields(line.substr(prefix.size()));
      std::int64_t kb = 0;
      fields >> kb;
      return kb;
    }
  }
  return 0;
}

std::vector<double> times_for(const BenchReport& report, const std::string& kind, Index n) {
  std::vector<double> t;
  for (const auto& row : report.rows)
    if (row.kind == kind && row.n == n) t.push_back(row.seconds);
  std::sort(t.begin(), t.end());
  return t;
}

}  // namespace

std::int64_t resident_bytes() { return read_status_kb("VmRSS") * 1024; }

void reset_peak_resident() {
  std::ofstream clear("/proc/self/clear_refs");
  if (clear) clear << "5";
}

std::int64_t peak_resident_bytes() { return read_status_kb("VmHWM") * 1024; }

void BenchReport::write_csv(std::ostream& out) const {
  out << "kind,n,m,rep,seconds,bytes\n";
  for (const auto& row : rows) {
    char seconds[32];
    std::snprintf(seconds, sizeof seconds, "%.9f", row.seconds);
    out << row.kind << ',' << row.n << ',' << row.m << ',' << row.rep << ',' << seconds << ',' << row.bytes << '\n';
  }
}

double BenchReport::min_seconds(const std::string& kind, Index n) const {
  const auto t = times_for(*this, kind, n);
  return t.empty() ? std::nan("") : t.front();
}

double BenchReport::median_seconds(const std::string& kind, Index n) const {
  const auto t = times_for(*this, kind, n);
  if (t.empty()) return std::nan("");
  const std::size_t mid = t.size() / 2;
  return t.size() % 2 ? t[mid] : 0.5 * (t[mid - 1] + t[mid]);
}

Coords uniform_cube(Index n, Rng& rng) {
  Coords c(n, 3);
  for (Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
  return c;
}

double time_sampler(SamplerKind kind, const Coords& coords, Index m, Rng& rng, int idis_t, double pds_tolerance,
                    IndexList* drawn) {
  const Index n = coords.rows();
  IndexList result;
  double seconds = 0;
  switch (kind) {
    case SamplerKind::RS: {
      const auto start = Clock::now();
      result = random_sample(n, m, rng);
      seconds = elapsed(start);
      break;
    }
    case SamplerKind::FPS: {
      const auto start = Clock::now();
      result = farthest_point_sample(coords, m, 0);
      seconds = elapsed(start);
      break;
    }
    case SamplerKind::IDIS: {
      const int t = std::min<Index>(idis_t, n - 1);
      require(t >= 1, "IDIS needs at least two points");
      const auto start = Clock::now();
      const SpatialIndex index = build_index(coords);
      result = inverse_density_sample(coords, m, t, index);
      seconds = elapsed(start);
      break;
    }
    case SamplerKind::PDS: {
      Rng fit_rng = rng.split();
      const Real radius = pds_fit_radius(coords, std::max<Index>(m, 1), fit_rng, pds_tolerance).radius;
      const auto start = Clock::now();
      result = poisson_disk_sample(coords, radius, rng);
      seconds = elapsed(start);
      break;
    }
    case SamplerKind::CRS:
      throw ValidationError("CRS produces soft feature vectors, not index subsets; it is not benchmarked");
  }
  if (drawn) *drawn = std::move(result);
  return seconds;
}

std::pair<double, Index> time_cascade(SamplerKind kind, const Coords& coords, int steps, double keep, Rng& rng,
                                      int idis_t, double pds_tolerance) {
  Coords current = coords;
  double total = 0;
  for (int step = 0; step < steps && current.rows() > 1; ++step) {
    const auto m = std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(current.rows()) * keep)));
    IndexList kept;
    total += time_sampler(kind, current, m, rng, idis_t, pds_tolerance, &kept);
    Coords next(static_cast<Index>(kept.size()), 3);
    for (Index i = 0; i < next.rows(); ++i) next.row(i) = current.row(kept[i]);
    current = std::move(next);
  }
  return {total, current.rows()};
}

BenchReport benchmark_samplers(const BenchOptions& options) {
  require(options.fraction > 0 && options.fraction <= 1, "benchmark: fraction must lie in (0, 1]");
  require(options.repetitions >= 1, "benchmark: repetitions must be at least 1");
  BenchReport report;
  report.repetitions = options.repetitions;
  report.seed = options.seed;
  Rng data_rng(options.seed);
  for (const Index n : options.scales) {
    require(n >= 1, "benchmark: scales must be positive");
    const Coords coords = uniform_cube(n, data_rng);
    const auto m = std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(n) * options.fraction)));
    for (const auto kind : options.kinds) {
      const std::string name(to_string(kind));
      try {
        for (int rep = 0; rep < options.repetitions; ++rep) {
          Rng rng(options.seed ^ (static_cast<std::uint64_t>(n) * 0x100000001b3ULL) ^ static_cast<std::uint64_t>(rep));
          if (options.single_shot) {
            const std::int64_t before = resident_bytes();
            reset_peak_resident();
            IndexList drawn;
            const double seconds = time_sampler(kind, coords, m, rng, options.idis_t, options.pds_tolerance, &drawn);
            const std::int64_t bytes = std::max<std::int64_t>(0, peak_resident_bytes() - before);
            report.rows.push_back({name, n, static_cast<Index>(drawn.size()), rep, seconds, bytes});
          }
          if (options.cascade) {
            const std::int64_t before = resident_bytes();
            reset_peak_resident();
            const auto [seconds, final_count] = time_cascade(kind, coords, options.cascade_steps, options.cascade_keep,
                                                             rng, options.idis_t, options.pds_tolerance);
            const std::int64_t bytes = std::max<std::int64_t>(0, peak_resident_bytes() - before);
            report.rows.push_back({name + "-cascade", n, final_count, rep, seconds, bytes});
          }
        }
      } catch (const std::exception& e) {
        report.failures.push_back({name, n, e.what()});
      }
    }
  }
  return report;
}

}  // namespace randla
