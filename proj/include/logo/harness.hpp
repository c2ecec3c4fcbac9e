#pragma once

#include "logo/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace logo {

/// A pipeline stage needs an artifact that an earlier command produces.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::filesystem::path& path)
      : std::runtime_error("missing prerequisite artifact " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Fixed file names inside <out>/<experiment>/<seed>/.
namespace files {
inline constexpr const char* kResolvedConfig = "resolved.cfg";
inline constexpr const char* kDataset = "dataset.logo";
inline constexpr const char* kWorldModel = "world_model.logo";
inline constexpr const char* kWorldLog = "wm_log.csv";
inline constexpr const char* kSynthetic = "synthetic.logo";
inline constexpr const char* kPolicy = "policy.logo";
inline constexpr const char* kPolicyLog = "policy_log.csv";
inline constexpr const char* kEval = "eval.csv";
inline constexpr const char* kPca = "pca.csv";
inline constexpr const char* kTimings = "timings.csv";  // wall-clock per stage, not aggregated
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kReportText = "report.txt";
}  // namespace files

std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed);

/// One scalar outcome; metrics_*.csv files hold rows of these.
struct MetricRow {
  std::uint64_t seed = 0;
  std::string arm;
  std::string metric;
  double value = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

/// Looks up (arm, metric); throws std::out_of_range when absent.
double metric_value(const std::vector<MetricRow>& rows, const std::string& arm, const std::string& metric);

/// Full per-seed experiment: data, world model and its held-out metrics,
/// direct-state baseline, ensemble timing, PCA export, and the policy arms
/// (macql, logo, logo_rp, logo_h<H>, macql_mpc) with random and expert
/// reference returns. Writes artifacts, metrics_ablation.csv and
/// timings.csv to `dir`.
std::vector<MetricRow> run_ablation_seed(const ExperimentConfig& config, std::uint64_t seed,
                                         const std::filesystem::path& dir, std::ostream* progress = nullptr);

struct ReportEntry {
  std::string arm;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  double mean = 0.0;
  double ci95 = 0.0;
  std::vector<std::uint64_t> missing;
};

/// Aggregates metrics_*.csv over every seed directory under `experiment_dir`.
std::vector<ReportEntry> build_report(const std::filesystem::path& experiment_dir);
std::string report_csv(const std::vector<ReportEntry>& entries);
std::string report_text(const std::vector<ReportEntry>& entries);

/// Command-line entry point. Exit codes: 0 success, 1 runtime failure or
/// failed verification, 2 bad configuration or usage, 3 missing prerequisite.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace logo
