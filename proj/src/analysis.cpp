#include "podo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "podo/error.hpp"
#include "podo/imaging.hpp"

namespace podo {

namespace {

// k-th smallest value (0-based) of a histogram.
int kth(const std::vector<std::size_t>& hist, std::size_t k) {
  std::size_t seen = 0;
  for (std::size_t v = 0; v < hist.size(); ++v) {
    seen += hist[v];
    if (seen > k) return static_cast<int>(v);
  }
  return static_cast<int>(hist.size()) - 1;
}

// Median of a histogram in units of the bin index; even counts average the
// two middle values.
double hist_median(const std::vector<std::size_t>& hist, std::size_t n) {
  return 0.5 * (kth(hist, (n - 1) / 2) + kth(hist, n / 2));
}

bool valid_name(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

}  // namespace

SkinModel fit_skin_model(const RasterImage& img, const BinaryMask& mask) {
  if (mask.width() != img.width() || mask.height() != img.height()) {
    fail(Errc::InvalidArgument, "mask and image dimensions differ");
  }
  if (mask.is_empty()) fail(Errc::EmptyForeground, "skin model needs foreground pixels");
  const std::size_t n = mask.count();
  const auto px = img.data();
  const auto bits = mask.data();
  SkinModel model;
  for (int c = 0; c < 3; ++c) {
    std::vector<std::size_t> hist(256, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) ++hist[px[3 * i + c]];
    }
    const double med = hist_median(hist, n);
    // Deviations are multiples of 0.5, so histogram them doubled.
    std::vector<std::size_t> dev(511, 0);
    for (int v = 0; v < 256; ++v) {
      if (hist[v]) dev[static_cast<std::size_t>(std::abs(2.0 * v - 2.0 * med))] += hist[v];
    }
    const double mad = 0.5 * hist_median(dev, n);
    model.median[c] = med;
    model.mad[c] = std::max(kMadFloor, kMadScale * mad);
  }
  return model;
}

ScoreMap anomaly_score_map(const RasterImage& img, const BinaryMask& mask,
                           const SkinModel& model) {
  if (mask.width() != img.width() || mask.height() != img.height()) {
    fail(Errc::InvalidArgument, "mask and image dimensions differ");
  }
  ScoreMap out{img.width(), img.height(), std::vector<double>(img.pixel_count(), 0.0)};
  const auto px = img.data();
  const auto bits = mask.data();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double z = (px[3 * i + c] - model.median[c]) / model.mad[c];
      acc += z * z;
    }
    out.values[i] = std::sqrt(acc / 3.0);
  }
  return out;
}

std::vector<AnomalyBlob> detect_blobs(const ScoreMap& scores, const BlobOptions& opts) {
  std::vector<std::uint8_t> fg(scores.values.size());
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = scores.values[i] > opts.tau ? 1 : 0;
  const Labeling lab = label_components(scores.width, scores.height, fg);

  std::vector<double> score_sum(lab.components.size(), 0.0);
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    if (lab.labels[i] > 0) score_sum[lab.labels[i] - 1] += scores.values[i];
  }

  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < lab.components.size(); ++k) {
    if (lab.components[k].area >= static_cast<std::size_t>(std::max(0, opts.min_area_px))) keep.push_back(k);
  }
  // Label order is already row-major by first pixel, so a stable sort on
  // area gives the tie-break for free.
  std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
    return lab.components[a].area > lab.components[b].area;
  });

  std::vector<AnomalyBlob> out;
  out.reserve(keep.size());
  for (const std::size_t k : keep) {
    const ComponentStats& st = lab.components[k];
    AnomalyBlob b;
    b.id = static_cast<int>(out.size());
    const double area = static_cast<double>(st.area);
    b.area_px = area;
    b.centroid = {static_cast<double>(st.sum_x) / area, static_cast<double>(st.sum_y) / area};
    b.bbox = {static_cast<double>(st.min_x), static_cast<double>(st.min_y),
              static_cast<double>(st.max_x - st.min_x + 1),
              static_cast<double>(st.max_y - st.min_y + 1)};
    b.mean_score = score_sum[k] / area;
    out.push_back(b);
  }
  return out;
}

void AnalyzerRegistry::add(AnalyzerDescriptor desc) {
  if (!valid_name(desc.name)) {
    fail(Errc::InvalidArgument, "analyzer names must match [a-z0-9_-]+");
  }
  if (contains(desc.name)) fail(Errc::InvalidArgument, "duplicate analyzer name: " + desc.name);
  if (!desc.run) fail(Errc::InvalidArgument, "analyzer has no entry point: " + desc.name);
  items_.push_back(std::move(desc));
}

bool AnalyzerRegistry::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(),
                     [&](const AnalyzerDescriptor& d) { return d.name == name; });
}

AnalyzerRegistry AnalyzerRegistry::with_builtins(const BlobOptions& opts) {
  AnalyzerRegistry r;
  r.add(scar_detect_analyzer(opts));
  r.add(foot_metrics_analyzer());
  return r;
}

AnalyzerDescriptor scar_detect_analyzer(const BlobOptions& opts) {
  return {"scar_detect", "1", [opts](const AnalyzerContext& ctx) {
            const ScoreMap scores = anomaly_score_map(ctx.image, ctx.mask, ctx.model);
            AnalyzerOutput out;
            out.blobs = detect_blobs(scores, opts);
            out.document["tau"] = opts.tau;
            out.document["min_area_px"] = opts.min_area_px;
            out.document["skin_median"] = ctx.model.median;
            out.document["skin_mad"] = ctx.model.mad;
            out.document["blob_count"] = out.blobs.size();
            return out;
          }};
}

AnalyzerDescriptor foot_metrics_analyzer() {
  return {"foot_metrics", "1", [](const AnalyzerContext& ctx) {
            const Pose pose = estimate_pose(ctx.mask);
            const double c = std::cos(pose.axis_angle);
            const double s = std::sin(pose.axis_angle);
            double lo_u = 1e300, hi_u = -1e300, lo_v = 1e300, hi_v = -1e300;
            for (int y = 0; y < ctx.mask.height(); ++y) {
              for (int x = 0; x < ctx.mask.width(); ++x) {
                if (!ctx.mask.at(x, y)) continue;
                const double dx = x - pose.centroid.x;
                const double dy = y - pose.centroid.y;
                const double u = c * dx + s * dy;
                const double v = -s * dx + c * dy;
                lo_u = std::min(lo_u, u);
                hi_u = std::max(hi_u, u);
                lo_v = std::min(lo_v, v);
                hi_v = std::max(hi_v, v);
              }
            }
            const double mm = 25.4 / ctx.image.dpi();
            AnalyzerOutput out;
            out.document["length_mm"] = (hi_u - lo_u + 1.0) * mm;
            out.document["width_mm"] = (hi_v - lo_v + 1.0) * mm;
            out.document["area_mm2"] = pose.area_px * mm * mm;
            out.document["axis_angle_rad"] = pose.axis_angle;
            return out;
          }};
}

AnalysisReport run_analyzers(const std::string& scan_id, const RasterImage& canonical,
                             const BinaryMask& mask, const AnalyzerRegistry& registry,
                             Timestamp produced_at) {
  AnalysisReport report;
  report.scan_id = scan_id;
  report.produced_at = produced_at;

  std::optional<SkinModel> model;
  std::string model_error;
  try {
    model = fit_skin_model(canonical, mask);
  } catch (const std::exception& e) {
    model_error = e.what();
  }

  for (const AnalyzerDescriptor& d : registry.analyzers()) {
    if (!model) {
      report.analyzers[d.name] = Json{{"error", model_error}};
      continue;
    }
    try {
      AnalyzerOutput out = d.run({canonical, mask, *model});
      for (AnomalyBlob b : out.blobs) {
        b.id = static_cast<int>(report.blobs.size());
        report.blobs.push_back(b);
      }
      report.analyzers[d.name] = std::move(out.document);
    } catch (const std::exception& e) {
      report.analyzers[d.name] = Json{{"error", std::string(e.what())}};
    } catch (...) {
      report.analyzers[d.name] = Json{{"error", "unknown failure"}};
    }
  }
  return report;
}

Json to_json(const AnomalyBlob& b) {
  Json j;
  j["id"] = b.id;
  j["centroid"] = {b.centroid.x, b.centroid.y};
  j["bbox"] = {b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h};
  j["area_px"] = b.area_px;
  j["mean_score"] = b.mean_score;
  return j;
}

AnomalyBlob blob_from_json(const Json& j) {
  AnomalyBlob b;
  b.id = j.at("id").get<int>();
  b.centroid = {j.at("centroid").at(0).get<double>(), j.at("centroid").at(1).get<double>()};
  const Json& bb = j.at("bbox");
  b.bbox = {bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
            bb.at(3).get<double>()};
  b.area_px = j.at("area_px").get<double>();
  b.mean_score = j.at("mean_score").get<double>();
  return b;
}

Json to_json(const AnalysisReport& r) {
  Json j;
  j["scan_id"] = r.scan_id;
  j["produced_at"] = format_utc(r.produced_at);
  j["analyzers"] = r.analyzers;
  Json blobs = Json::array();
  for (const AnomalyBlob& b : r.blobs) blobs.push_back(to_json(b));
  j["blobs"] = std::move(blobs);
  return j;
}

AnalysisReport report_from_json(const Json& j) {
  AnalysisReport r;
  r.scan_id = j.at("scan_id").get<std::string>();
  r.produced_at = parse_utc(j.at("produced_at").get<std::string>());
  r.analyzers = j.at("analyzers");
  for (const Json& b : j.at("blobs")) r.blobs.push_back(blob_from_json(b));
  return r;
}

}  // namespace podo
