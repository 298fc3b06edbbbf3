#include "podo/service.hpp"

#include <algorithm>
#include <cmath>

#include "podo/crypto.hpp"
#include "podo/error.hpp"
#include "podo/imaging.hpp"

namespace podo {

namespace {

constexpr std::size_t kMaxLabel = 200;
constexpr std::size_t kMaxNote = 4000;

RegistrationResult identity_result() {
  RegistrationResult r;
  r.final_mse = 0.0;
  r.overlap_fraction = 1.0;
  r.converged = true;
  return r;
}

}  // namespace

ProcessingMode parse_mode(std::string_view s) {
  if (s == "store-and-process") return ProcessingMode::store_and_process;
  if (s == "storage-only") return ProcessingMode::storage_only;
  fail(Errc::InvalidArgument, "mode must be store-and-process or storage-only");
}

std::string_view to_string(ProcessingMode m) {
  return m == ProcessingMode::storage_only ? "storage-only" : "store-and-process";
}

ImageSize parse_image_size(std::string_view s) {
  if (s == "full") return ImageSize::full;
  if (s == "canonical") return ImageSize::canonical;
  if (s == "thumb") return ImageSize::thumb;
  fail(Errc::InvalidArgument, "size must be full, canonical or thumb");
}

Service::Service(Store& store, AnalyzerRegistry registry, ServiceOptions opts)
    : store_(store), registry_(std::move(registry)), opts_(opts) {}

RasterImage Service::load_raw(const ScanRecord& s) const {
  return decode_png(store_.read_scan_file(s.scan_id, "raw.png"), s.dpi);
}

ScanRecord Service::process_scan(const std::string& patient_id, Foot foot, const RasterImage& raw,
                                 Timestamp capture_time) {
  if (!store_.patient_exists(patient_id)) fail(Errc::NotFound, "unknown patient");
  const BinaryMask mask = segment_foot(raw);
  const std::string scan_id = store_.new_id("scan");

  // Registration runs unlocked; if another scan became the baseline in the
  // meantime, redo it against that one.
  for (int attempt = 0; attempt < 4; ++attempt) {
    const std::optional<ScanRecord> base = store_.baseline(patient_id, foot);
    ScanRecord rec;
    rec.scan_id = scan_id;
    rec.patient_id = patient_id;
    rec.foot = foot;
    rec.capture_time = capture_time;
    rec.dpi = raw.dpi();
    rec.width = raw.width();
    rec.height = raw.height();

    std::optional<RasterImage> canonical;
    std::optional<BinaryMask> canonical_mask;
    if (!base) {
      rec.is_baseline = true;
      rec.baseline_id = scan_id;
      rec.registration = identity_result();
      rec.canonical_width = raw.width();
      rec.canonical_height = raw.height();
    } else {
      const RasterImage base_raw = load_raw(*base);
      if (std::abs(base_raw.dpi() - raw.dpi()) > 0.01 * base_raw.dpi()) {
        fail(Errc::InvalidArgument, "scan resolution differs from the baseline scan");
      }
      rec.baseline_id = base->scan_id;
      rec.registration = estimate_registration(raw, base_raw, opts_.registration);
      rec.canonical_width = base_raw.width();
      rec.canonical_height = base_raw.height();
      canonical = resample(raw, rec.registration.transform, rec.canonical_width,
                           rec.canonical_height, base_raw.dpi());
      canonical_mask = resample(mask, rec.registration.transform, rec.canonical_width,
                                rec.canonical_height);
    }
    const RasterImage& canon = canonical ? *canonical : raw;
    const BinaryMask& canon_mask = canonical_mask ? *canonical_mask : mask;

    AnalysisReport report;
    report.scan_id = scan_id;
    report.produced_at = store_.now();
    if (opts_.mode == ProcessingMode::store_and_process && rec.registration.converged) {
      report = run_analyzers(scan_id, canon, canon_mask, registry_, store_.now());
    }

    ScanFiles files;
    files.raw_png = encode_png(raw);
    files.canonical_png = encode_png(canon);
    files.thumb_png = encode_png(thumbnail(raw, opts_.thumbnail_side));
    files.transform = transform_json(rec.registration);
    files.analysis = to_json(report);

    auto lock = store_.lock_patient(patient_id);
    const std::optional<ScanRecord> now_base = store_.baseline(patient_id, foot);
    if (now_base.has_value() != base.has_value() ||
        (now_base && now_base->scan_id != base->scan_id)) {
      continue;
    }
    rec.committed_at = store_.now();
    store_.save_scan(rec, files);
    store_.append_audit({{"event", "scan_saved"},
                         {"scan_id", scan_id},
                         {"patient_id", patient_id},
                         {"converged", rec.registration.converged}});
    if (!rec.registration.converged) {
      fail(Errc::RegistrationRejected,
           "registration did not converge; scan " + scan_id + " kept but excluded from tracking");
    }
    return store_.load_scan(scan_id);
  }
  fail(Errc::Io, "baseline kept changing while the scan was processed");
}

ScanRecord Service::ingest(const Actor& actor, const std::string& patient_id, Foot foot,
                           const RasterImage& raw, Timestamp capture_time) {
  require(store_, actor, patient_id, Action::write);
  return process_scan(patient_id, foot, raw, capture_time);
}

std::string Service::scan_patient(const std::string& scan_id) const {
  const auto owner = store_.scan_owner(scan_id);
  if (!owner) fail(Errc::NotFound, "unknown scan");
  return *owner;
}

RegistrationResult Service::reregister(const Actor& actor, const std::string& scan_id) {
  require(store_, actor, scan_patient(scan_id), Action::read);
  const ScanRecord rec = store_.load_scan(scan_id);
  if (rec.is_baseline) return identity_result();
  const ScanRecord base = store_.load_scan(rec.baseline_id);
  return estimate_registration(load_raw(rec), load_raw(base), opts_.registration);
}

AnalysisReport Service::reanalyze(const Actor& actor, const std::string& scan_id) {
  require(store_, actor, scan_patient(scan_id), Action::read);
  const ScanRecord rec = store_.load_scan(scan_id);
  if (!rec.registration.converged) {
    fail(Errc::UnregisteredScan, "scan has no accepted registration");
  }
  const RasterImage raw = load_raw(rec);
  const BinaryMask mask = segment_foot(raw);
  const double dpi = raw.dpi() / rec.registration.transform.scale;
  const RasterImage canon = resample(raw, rec.registration.transform, rec.canonical_width,
                                     rec.canonical_height, rec.is_baseline ? raw.dpi() : dpi);
  const BinaryMask canon_mask =
      resample(mask, rec.registration.transform, rec.canonical_width, rec.canonical_height);
  return run_analyzers(scan_id, canon, canon_mask, registry_, store_.now());
}

std::vector<ScanRecord> Service::list_scans(const Actor& actor, const std::string& patient_id,
                                            std::optional<Foot> foot) {
  require(store_, actor, patient_id, Action::read);
  if (!store_.patient_exists(patient_id)) fail(Errc::NotFound, "unknown patient");
  return store_.list_scans(patient_id, foot);
}

ScanRecord Service::scan(const Actor& actor, const std::string& scan_id) {
  require(store_, actor, scan_patient(scan_id), Action::read);
  return store_.load_scan(scan_id);
}

Bytes Service::scan_image(const Actor& actor, const std::string& scan_id, ImageSize size) {
  require(store_, actor, scan_patient(scan_id), Action::read);
  switch (size) {
    case ImageSize::full: return store_.read_scan_file(scan_id, "raw.png");
    case ImageSize::canonical: return store_.read_scan_file(scan_id, "canonical.png");
    case ImageSize::thumb: return store_.read_scan_file(scan_id, "thumb.png");
  }
  fail(Errc::InvalidArgument, "unknown image size");
}

Json Service::analysis(const Actor& actor, const std::string& scan_id) {
  require(store_, actor, scan_patient(scan_id), Action::read);
  const Bytes b = store_.read_scan_file(scan_id, "analysis.json");
  return Json::parse(b.begin(), b.end());
}

Json Service::transform(const Actor& actor, const std::string& scan_id) {
  require(store_, actor, scan_patient(scan_id), Action::read);
  const Bytes b = store_.read_scan_file(scan_id, "transform.json");
  return Json::parse(b.begin(), b.end());
}

double Service::measure(const Actor& actor, const std::string& scan_id, Point p1, Point p2) {
  const ScanRecord rec = scan(actor, scan_id);
  return measure_distance(p1, p2, rec.dpi);
}

Roi Service::load_roi(const std::string& roi_id) const {
  const std::optional<Roi> r = store_.find_roi(roi_id);
  if (!r) fail(Errc::NotFound, "unknown roi");
  return *r;
}

Roi Service::create_roi(const Actor& actor, const std::string& patient_id, Foot foot,
                        const Rect& rect, const std::string& label) {
  require(store_, actor, patient_id, Action::write);
  if (!store_.patient_exists(patient_id)) fail(Errc::NotFound, "unknown patient");
  if (!valid_rect(rect)) fail(Errc::InvalidArgument, "rect needs finite x, y and positive w, h");
  if (label.size() > kMaxLabel) fail(Errc::InvalidArgument, "label is too long");
  const std::optional<ScanRecord> base = store_.baseline(patient_id, foot);
  if (!base) fail(Errc::NotFound, "no baseline scan for this foot");
  if (!rect_intersects(rect, segment_foot(load_raw(*base)))) {
    fail(Errc::OutsideFoot, "rectangle does not touch the foot in the baseline scan");
  }
  Roi roi;
  roi.id = store_.new_id("roi");
  roi.patient_id = patient_id;
  roi.foot = foot;
  roi.rect = rect;
  roi.label = label;
  roi.status = RoiStatus::proposed;
  roi.created_by = actor.user_id;
  roi.created_at = roi.updated_at = store_.now();
  auto lock = store_.lock_patient(patient_id);
  store_.put_roi(roi);
  store_.append_audit({{"event", "roi_created"}, {"roi_id", roi.id}, {"by", actor.user_id}});
  return roi;
}

Roi Service::approve_roi(const Actor& actor, const std::string& roi_id) {
  const Roi found = load_roi(roi_id);
  require(store_, actor, found.patient_id, Action::annotate);
  auto lock = store_.lock_patient(found.patient_id);
  Roi roi = load_roi(roi_id);
  roi.status = roi_transition(roi.status, RoiEvent::approve);
  roi.updated_at = std::max(store_.now(), roi.updated_at);
  store_.put_roi(roi);
  store_.append_audit({{"event", "roi_approved"}, {"roi_id", roi.id}, {"by", actor.user_id}});
  return roi;
}

Roi Service::delete_roi(const Actor& actor, const std::string& roi_id) {
  const Roi found = load_roi(roi_id);
  require(store_, actor, found.patient_id, Action::write);
  auto lock = store_.lock_patient(found.patient_id);
  Roi roi = load_roi(roi_id);
  roi.status = roi_transition(roi.status, RoiEvent::remove);
  roi.updated_at = std::max(store_.now(), roi.updated_at);
  store_.put_roi(roi);
  store_.append_audit({{"event", "roi_deleted"}, {"roi_id", roi.id}, {"by", actor.user_id}});
  return roi;
}

std::vector<Roi> Service::list_rois(const Actor& actor, const std::string& patient_id) {
  require(store_, actor, patient_id, Action::read);
  if (!store_.patient_exists(patient_id)) fail(Errc::NotFound, "unknown patient");
  return store_.rois(patient_id);
}

Roi Service::roi(const Actor& actor, const std::string& roi_id) {
  const Roi r = load_roi(roi_id);
  require(store_, actor, r.patient_id, Action::read);
  return r;
}

Timeline Service::timeline(const Actor& actor, const std::string& roi_id,
                           const TimelineOptions& opts) {
  const Roi r = roi(actor, roi_id);
  return build_timeline(r, store_.list_scans(r.patient_id, r.foot),
                        [this](const ScanRecord& s) { return load_raw(s); }, opts);
}

RoiNote Service::add_note(const Actor& actor, const std::string& roi_id, const std::string& text) {
  const Roi found = load_roi(roi_id);
  require(store_, actor, found.patient_id, Action::annotate);
  if (text.empty() || text.size() > kMaxNote) {
    fail(Errc::InvalidArgument, "note text must be 1-4000 bytes");
  }
  auto lock = store_.lock_patient(found.patient_id);
  if (load_roi(roi_id).status == RoiStatus::deleted) {
    fail(Errc::IllegalTransition, "cannot annotate a deleted ROI");
  }
  const std::vector<RoiNote> log = store_.notes(found.patient_id, roi_id);
  RoiNote note{roi_id, actor.user_id, store_.now(), text};
  if (!log.empty()) note.timestamp = std::max(note.timestamp, log.back().timestamp);
  store_.append_note(found.patient_id, note);
  store_.append_audit({{"event", "note_added"}, {"roi_id", roi_id}, {"by", actor.user_id}});
  return note;
}

std::vector<RoiNote> Service::notes(const Actor& actor, const std::string& roi_id) {
  const Roi r = roi(actor, roi_id);
  return store_.notes(r.patient_id, roi_id);
}

ExportResult Service::export_roi(const Actor& actor, const std::string& roi_id,
                                 const ExportRequest& req) {
  const Roi found = load_roi(roi_id);
  require(store_, actor, found.patient_id, Action::share);
  // No recipient means a local copy for the record holder.
  if (!req.recipient.empty()) {
    const std::optional<User> recipient = store_.find_user(req.recipient);
    if (!recipient || recipient->role != Role::clinician ||
        !store_.has_active_grant(found.patient_id, req.recipient)) {
      fail(Errc::InvalidArgument, "recipient must be a clinician with an active grant");
    }
  }
  if (req.from && req.to && *req.from > *req.to) {
    fail(Errc::InvalidArgument, "range start is after its end");
  }
  if (!req.message.empty()) add_note(actor, roi_id, req.message);

  auto lock = store_.lock_patient(found.patient_id);
  ExportInputs in;
  in.roi = load_roi(roi_id);
  in.pseudonym = pseudonym(store_.profile(found.patient_id));
  in.recipient = req.recipient;
  TimelineOptions opts;
  opts.from = req.from;
  opts.to = req.to;
  in.entries = timeline(actor, roi_id, opts).entries;
  in.notes = store_.notes(found.patient_id, roi_id);
  const Bytes zip = build_export_bundle(in);

  ExportResult out;
  out.sha256 = sha256_hex(zip);
  out.export_id = "exp-" + out.sha256.substr(0, 24);
  out.size = zip.size();
  if (!store_.export_exists(out.export_id)) store_.save_export(out.export_id, zip);
  store_.append_audit({{"event", "export"},
                       {"export_id", out.export_id},
                       {"roi_id", roi_id},
                       {"patient_id", found.patient_id},
                       {"recipient", req.recipient},
                       {"sha256", out.sha256},
                       {"by", actor.user_id}});
  return out;
}

Bytes Service::read_export(const Actor& actor, const std::string& export_id) {
  if (!store_.export_exists(export_id)) fail(Errc::NotFound, "unknown export");
  std::string patient;
  for (const Json& e : store_.audit_log()) {
    if (e.value("event", "") == "export" && e.value("export_id", "") == export_id) {
      patient = e.value("patient_id", "");
      break;
    }
  }
  if (patient.empty()) fail(Errc::NotFound, "unknown export");
  require(store_, actor, patient, Action::read);
  return store_.read_export(export_id);
}

AccessGrant Service::grant(const Actor& actor, const std::string& patient_id,
                           const std::string& clinician_id) {
  require(store_, actor, patient_id, Action::write);
  const AccessGrant g = store_.grant(patient_id, clinician_id);
  store_.append_audit({{"event", "grant"},
                       {"patient_id", patient_id},
                       {"clinician_id", clinician_id},
                       {"by", actor.user_id}});
  return g;
}

std::vector<AccessGrant> Service::grants(const Actor& actor, const std::string& patient_id) {
  if (!store_.patient_exists(patient_id)) fail(Errc::NotFound, "unknown patient");
  require(store_, actor, patient_id, Action::read);
  std::vector<AccessGrant> out;
  for (const AccessGrant& g : store_.profile(patient_id).grants) {
    if (g.active()) out.push_back(g);
  }
  return out;
}

std::vector<std::string> Service::patients(const Actor& actor) {
  std::vector<std::string> out;
  for (const std::string& pid : store_.patient_ids()) {
    if (authorize(store_, actor, pid, Action::read)) out.push_back(pid);
  }
  return out;
}

AccessGrant Service::revoke(const Actor& actor, const std::string& patient_id,
                            const std::string& clinician_id) {
  require(store_, actor, patient_id, Action::write);
  const AccessGrant g = store_.revoke(patient_id, clinician_id);
  store_.append_audit({{"event", "revoke"},
                       {"patient_id", patient_id},
                       {"clinician_id", clinician_id},
                       {"by", actor.user_id}});
  return g;
}

User Service::add_user(const Actor& actor, const std::string& user_id,
                       const std::string& display_name, Role role, const std::string& secret) {
  if (!actor.is_operator) fail(Errc::Unauthorized, "not permitted");
  User u = store_.add_user(user_id, display_name, role, secret);
  store_.append_audit({{"event", "user_added"}, {"user_id", user_id}, {"role", to_string(role)}});
  return u;
}

}  // namespace podo
