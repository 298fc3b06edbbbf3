#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "podo/image.hpp"
#include "podo/timeutil.hpp"

namespace podo {

using Json = nlohmann::ordered_json;

// Per-channel robust skin statistics over the foreground.
struct SkinModel {
  std::array<double, 3> median{};
  std::array<double, 3> mad{};  // scaled by 1.4826, floored at kMadFloor
};

inline constexpr double kMadScale = 1.4826;
inline constexpr double kMadFloor = 1.0;

SkinModel fit_skin_model(const RasterImage& img, const BinaryMask& mask);

struct ScoreMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

ScoreMap anomaly_score_map(const RasterImage& img, const BinaryMask& mask, const SkinModel& model);

struct AnomalyBlob {
  int id = 0;
  Point centroid;
  Rect bbox;  // integer pixel extent, w/h inclusive of both ends
  double area_px = 0.0;
  double mean_score = 0.0;

  friend bool operator==(const AnomalyBlob&, const AnomalyBlob&) = default;
};

struct BlobOptions {
  double tau = 3.5;
  int min_area_px = 25;
};

// Components of {score > tau}, largest first; ties keep row-major order of
// the first pixel. Ids are positions in the returned list.
std::vector<AnomalyBlob> detect_blobs(const ScoreMap& scores, const BlobOptions& opts = {});

struct AnalyzerContext {
  const RasterImage& image;  // canonical frame
  const BinaryMask& mask;
  const SkinModel& model;
};

struct AnalyzerOutput {
  Json document = Json::object();
  std::vector<AnomalyBlob> blobs;
};

struct AnalyzerDescriptor {
  std::string name;
  std::string version;
  std::function<AnalyzerOutput(const AnalyzerContext&)> run;
};

class AnalyzerRegistry {
 public:
  // Names must be non-empty [a-z0-9_-] and unique; violations throw
  // InvalidArgument and leave the registry unchanged.
  void add(AnalyzerDescriptor desc);
  const std::vector<AnalyzerDescriptor>& analyzers() const noexcept { return items_; }
  bool contains(const std::string& name) const;

  // scar_detect followed by foot_metrics.
  static AnalyzerRegistry with_builtins(const BlobOptions& opts = {});

 private:
  std::vector<AnalyzerDescriptor> items_;
};

AnalyzerDescriptor scar_detect_analyzer(const BlobOptions& opts = {});
AnalyzerDescriptor foot_metrics_analyzer();

struct AnalysisReport {
  std::string scan_id;
  Timestamp produced_at = 0;
  Json analyzers = Json::object();  // name -> output document or {"error": text}
  std::vector<AnomalyBlob> blobs;

  friend bool operator==(const AnalysisReport&, const AnalysisReport&) = default;
};

// Runs analyzers in registration order. A throwing analyzer contributes an
// error entry and the rest still run.
AnalysisReport run_analyzers(const std::string& scan_id, const RasterImage& canonical,
                             const BinaryMask& mask, const AnalyzerRegistry& registry,
                             Timestamp produced_at);

Json to_json(const AnomalyBlob& blob);
AnomalyBlob blob_from_json(const Json& j);
Json to_json(const AnalysisReport& report);
AnalysisReport report_from_json(const Json& j);

}  // namespace podo
