#include "podo/roi.hpp"

#include <algorithm>
#include <cmath>

#include "podo/error.hpp"
#include "podo/transform.hpp"
#include "podo/zip.hpp"

namespace podo {

RoiStatus roi_transition(RoiStatus from, RoiEvent event) {
  if (from == RoiStatus::proposed && event == RoiEvent::approve) return RoiStatus::approved;
  if (from != RoiStatus::deleted && event == RoiEvent::remove) return RoiStatus::deleted;
  fail(Errc::IllegalTransition, std::string("cannot ") +
                                    (event == RoiEvent::approve ? "approve" : "delete") +
                                    " an ROI that is " + std::string(to_string(from)));
}

bool valid_rect(const Rect& r) {
  return std::isfinite(r.x) && std::isfinite(r.y) && std::isfinite(r.w) && std::isfinite(r.h) &&
         r.w > 0.0 && r.h > 0.0;
}

bool rect_intersects(const Rect& r, const BinaryMask& mask) {
  const int x0 = std::max(0, static_cast<int>(std::ceil(r.x)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(r.y)));
  const double x_end = r.x + r.w;
  const double y_end = r.y + r.h;
  for (int y = y0; y < mask.height() && y < y_end; ++y) {
    for (int x = x0; x < mask.width() && x < x_end; ++x) {
      if (mask.at(x, y)) return true;
    }
  }
  return false;
}

std::array<Point, 4> map_roi_to_scan(const Rect& rect, const RegistrationResult& reg) {
  if (!reg.converged) fail(Errc::UnregisteredScan, "scan has no accepted registration");
  const SimilarityTransform inv = invert(reg.transform);
  std::array<Point, 4> quad = rect_corners(rect);
  for (Point& p : quad) p = apply_point(inv, p);
  return quad;
}

Direction parse_direction(std::string_view s) {
  if (s == "forward") return Direction::forward;
  if (s == "backward") return Direction::backward;
  fail(Errc::InvalidArgument, "direction must be forward or backward");
}

RasterImage render_crop(const RasterImage& raw, const Rect& rect, const RegistrationResult& reg,
                        bool raw_frame) {
  // Output pixel u covers source [x + u/2 - 1/4, x + u/2 + 1/4] with pixel
  // centres on integers, i.e. crop = 2 * (p - origin) + 0.5.
  auto magnify = [](double ox, double oy) {
    return SimilarityTransform{2.0, 0.0, -2.0 * ox + 0.5, -2.0 * oy + 0.5};
  };
  if (raw_frame) {
    const auto quad = map_roi_to_scan(rect, reg);
    double lo_x = quad[0].x, hi_x = quad[0].x, lo_y = quad[0].y, hi_y = quad[0].y;
    for (const Point& p : quad) {
      lo_x = std::min(lo_x, p.x);
      hi_x = std::max(hi_x, p.x);
      lo_y = std::min(lo_y, p.y);
      hi_y = std::max(hi_y, p.y);
    }
    const double bx = std::floor(lo_x), by = std::floor(lo_y);
    const int w = std::max(1, static_cast<int>(std::ceil(hi_x) - bx));
    const int h = std::max(1, static_cast<int>(std::ceil(hi_y) - by));
    return resample(raw, magnify(bx, by), 2 * w, 2 * h, raw.dpi() * 2.0);
  }
  if (!reg.converged) fail(Errc::UnregisteredScan, "scan has no accepted registration");
  const int w = std::max(1, static_cast<int>(std::lround(2.0 * rect.w)));
  const int h = std::max(1, static_cast<int>(std::lround(2.0 * rect.h)));
  // The canonical frame's dpi is the raw dpi divided by the registration scale.
  const double dpi = raw.dpi() / reg.transform.scale * 2.0;
  return resample(raw, compose(magnify(rect.x, rect.y), reg.transform), w, h, dpi);
}

Timeline build_timeline(const Roi& roi, const std::vector<ScanRecord>& scans,
                        const RawLoader& load_raw, const TimelineOptions& opts) {
  std::vector<const ScanRecord*> picked;
  Timeline out;
  for (const ScanRecord& s : scans) {
    if (s.patient_id != roi.patient_id || s.foot != roi.foot) continue;
    if (opts.from && s.capture_time < *opts.from) continue;
    if (opts.to && s.capture_time > *opts.to) continue;
    if (!s.registration.converged) {
      ++out.skipped;
      continue;
    }
    picked.push_back(&s);
  }
  std::sort(picked.begin(), picked.end(), [](const ScanRecord* a, const ScanRecord* b) {
    return std::tie(a->capture_time, a->scan_id) < std::tie(b->capture_time, b->scan_id);
  });
  if (opts.direction == Direction::backward) std::reverse(picked.begin(), picked.end());
  for (const ScanRecord* s : picked) {
    TimelineEntry e;
    e.scan_id = s->scan_id;
    e.capture_time = s->capture_time;
    e.committed_at = s->committed_at;
    e.quad = map_roi_to_scan(roi.rect, s->registration);
    e.registration_converged = true;
    if (opts.render_crops) e.crop = render_crop(load_raw(*s), roi.rect, s->registration, opts.raw_frame);
    out.entries.push_back(std::move(e));
  }
  return out;
}

std::string crop_file_name(const TimelineEntry& e) {
  return format_utc_compact(e.capture_time) + "_" + e.scan_id + ".png";
}

Json to_json(const TimelineEntry& e, bool with_crop_name) {
  Json quad = Json::array();
  for (const Point& p : e.quad) quad.push_back({p.x, p.y});
  Json j{{"scan_id", e.scan_id},
         {"capture_time", format_utc(e.capture_time)},
         {"quad", std::move(quad)},
         {"registration_converged", e.registration_converged}};
  if (with_crop_name) j["file"] = crop_file_name(e);
  return j;
}

Timestamp export_as_of(const ExportInputs& in) {
  Timestamp t = std::max(in.roi.created_at, in.roi.updated_at);
  for (const auto& e : in.entries) t = std::max(t, e.committed_at);
  for (const auto& n : in.notes) t = std::max(t, n.timestamp);
  return t;
}

Bytes build_export_bundle(const ExportInputs& in) {
  if (in.entries.empty()) fail(Errc::EmptyRange, "no registered scans in the requested range");
  std::vector<const TimelineEntry*> order;
  for (const auto& e : in.entries) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const TimelineEntry* a, const TimelineEntry* b) {
    return std::tie(a->capture_time, a->scan_id) < std::tie(b->capture_time, b->scan_id);
  });

  // The recipient should not learn the patient's identifier.
  auto scrub = [&](const std::string& user) {
    return user == in.roi.patient_id ? in.pseudonym : user;
  };
  Json roi = to_json(in.roi);
  roi.erase("patient_id");
  roi["created_by"] = scrub(in.roi.created_by);

  Json manifest;
  manifest["roi"] = std::move(roi);
  manifest["patient"] = in.pseudonym;
  manifest["recipient"] = in.recipient.empty() ? Json(nullptr) : Json(in.recipient);
  manifest["exported_at"] = format_utc(export_as_of(in));
  manifest["entries"] = Json::array();
  for (const TimelineEntry* e : order) manifest["entries"].push_back(to_json(*e, true));

  std::vector<ZipEntry> files;
  const std::string m = manifest.dump(2) + "\n";
  files.push_back({"manifest.json", Bytes(m.begin(), m.end())});
  for (const TimelineEntry* e : order) {
    if (!e->crop) fail(Errc::InvalidArgument, "timeline entry has no rendered crop");
    files.push_back({crop_file_name(*e), encode_png(*e->crop)});
  }
  std::string notes;
  for (const RoiNote& n : in.notes) {
    Json j = to_json(n);
    j["author"] = scrub(n.author);
    notes += j.dump() + "\n";
  }
  files.push_back({"notes.jsonl", Bytes(notes.begin(), notes.end())});
  return write_zip(files);
}

}  // namespace podo
