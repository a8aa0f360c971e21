#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace matten {

enum class ScanMode { Sequential, Parallel };

std::string to_string(ScanMode mode);
/// "seq" or "par"; ParameterError otherwise.
ScanMode parse_scan_mode(const std::string& text);

struct BenchPoint {
  std::size_t length = 0;  // J
  std::size_t channels = 0;
  std::string mode;
  std::uint64_t nanos = 0;  // best of the repeats
  double checksum = 0.0;    // sum of outputs, keeps the work observable
};

struct BenchOptions {
  std::size_t min_length = 256, max_length = 8192;  // powers of two in between
  std::size_t channels = 16;
  std::size_t state = 16;
  std::size_t repeats = 3;
  /// Scan worker cap; 0 follows MATTEN_THREADS.
  std::size_t threads = 0;
  std::uint64_t seed = 0;
};

/// Times one 32-bit scan per length.
std::vector<BenchPoint> bench_scan(ScanMode mode, const BenchOptions& options = {});
/// Times single-head self-attention over [1, J, channels] per length.
std::vector<BenchPoint> bench_attention(const BenchOptions& options = {});

inline constexpr const char* kBenchCsvHeader = "J,channels,mode,nanos,checksum";
void write_bench_csv(std::ostream& out, const std::vector<BenchPoint>& points, bool header = true);

struct GradCase {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords = 0;
  bool passed = false;
};

inline constexpr double kGradTolerance = 1e-4;

/// "small": every primitive, the fused and selective scans, attention and a
/// one-block model per variant. "full" adds every variant in both
/// conditioning modes at L up to 3 and the diffusion losses.
/// ParameterError for any other name.
std::vector<GradCase> gradcheck_suite(const std::string& suite);

}  // namespace matten
