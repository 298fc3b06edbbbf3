#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "podo/image_io.hpp"
#include "podo/records.hpp"

namespace podo {

enum class RoiEvent { approve, remove };

// proposed -> approved, proposed -> deleted, approved -> deleted.
// Anything else throws IllegalTransition.
RoiStatus roi_transition(RoiStatus from, RoiEvent event);

bool valid_rect(const Rect& r);

// Does any mask pixel centre fall inside the rectangle?
bool rect_intersects(const Rect& r, const BinaryMask& mask);

// Canonical rect corners (TL, TR, BR, BL) mapped into the scan's pixel
// frame. UnregisteredScan unless the registration converged.
std::array<Point, 4> map_roi_to_scan(const Rect& rect, const RegistrationResult& reg);

enum class Direction { forward, backward };
Direction parse_direction(std::string_view s);

struct TimelineOptions {
  Direction direction = Direction::forward;
  // Crop from the raw scan around the mapped quad instead of from the
  // canonical resampling.
  bool raw_frame = false;
  bool render_crops = true;
  std::optional<Timestamp> from;  // inclusive capture_time bounds
  std::optional<Timestamp> to;
};

struct TimelineEntry {
  std::string scan_id;
  Timestamp capture_time = 0;
  Timestamp committed_at = 0;
  std::array<Point, 4> quad;
  std::optional<RasterImage> crop;
  bool registration_converged = true;
};

struct Timeline {
  std::vector<TimelineEntry> entries;
  int skipped = 0;  // non-converged scans of the ROI's foot
};

// Crop magnified 2x: output is round(2w) x round(2h) pixels covering the
// rect, rendered straight from the raw scan through the composed transform.
RasterImage render_crop(const RasterImage& raw, const Rect& rect, const RegistrationResult& reg,
                        bool raw_frame);

using RawLoader = std::function<RasterImage(const ScanRecord&)>;

Timeline build_timeline(const Roi& roi, const std::vector<ScanRecord>& scans,
                        const RawLoader& load_raw, const TimelineOptions& opts = {});

Json to_json(const TimelineEntry& e, bool with_crop_name = false);
std::string crop_file_name(const TimelineEntry& e);

struct ExportInputs {
  Roi roi;
  std::string pseudonym;
  std::string recipient;
  std::vector<TimelineEntry> entries;  // crops required
  std::vector<RoiNote> notes;
};

// Latest event in the exported state; stamped into the manifest so that an
// unchanged ROI re-exports to identical bytes.
Timestamp export_as_of(const ExportInputs& in);

// manifest.json, one {capture_time}_{scan_id}.png per entry in ascending
// capture order, notes.jsonl. EmptyRange without entries.
Bytes build_export_bundle(const ExportInputs& in);

}  // namespace podo
