#pragma once

#include <optional>
#include <string>
#include <vector>

#include "podo/analysis.hpp"
#include "podo/auth.hpp"
#include "podo/registration.hpp"
#include "podo/roi.hpp"
#include "podo/store.hpp"

namespace podo {

// Store-and-process runs the analyzers; storage-only still registers,
// since ROI correspondence depends on it.
enum class ProcessingMode { store_and_process, storage_only };
ProcessingMode parse_mode(std::string_view s);
std::string_view to_string(ProcessingMode m);

struct ServiceOptions {
  ProcessingMode mode = ProcessingMode::store_and_process;
  int thumbnail_side = 512;
  RegistrationConfig registration;
};

enum class ImageSize { full, canonical, thumb };
ImageSize parse_image_size(std::string_view s);

struct ExportResult {
  std::string export_id;
  std::string sha256;
  std::size_t size = 0;
};

struct ExportRequest {
  std::string recipient;
  std::optional<Timestamp> from;
  std::optional<Timestamp> to;
  std::string message;  // stored as a note before the bundle is built
};

// Every entry point shared by the CLI and the HTTP API. Each public call
// checks authorization for `actor` first.
class Service {
 public:
  Service(Store& store, AnalyzerRegistry registry, ServiceOptions opts = {});

  Store& store() noexcept { return store_; }
  const AnalyzerRegistry& registry() const noexcept { return registry_; }
  const ServiceOptions& options() const noexcept { return opts_; }

  // segment -> register against the foot's baseline (or become it) ->
  // analyze -> commit. A non-converged scan is still stored, flagged, and
  // then reported as RegistrationRejected.
  ScanRecord process_scan(const std::string& patient_id, Foot foot, const RasterImage& raw,
                          Timestamp capture_time);

  ScanRecord ingest(const Actor& actor, const std::string& patient_id, Foot foot,
                    const RasterImage& raw, Timestamp capture_time);
  // Recomputes registration for a stored scan against its baseline without
  // changing the store.
  RegistrationResult reregister(const Actor& actor, const std::string& scan_id);
  AnalysisReport reanalyze(const Actor& actor, const std::string& scan_id);

  std::vector<ScanRecord> list_scans(const Actor& actor, const std::string& patient_id,
                                     std::optional<Foot> foot);
  ScanRecord scan(const Actor& actor, const std::string& scan_id);
  Bytes scan_image(const Actor& actor, const std::string& scan_id, ImageSize size);
  Json analysis(const Actor& actor, const std::string& scan_id);
  Json transform(const Actor& actor, const std::string& scan_id);
  double measure(const Actor& actor, const std::string& scan_id, Point p1, Point p2);

  Roi create_roi(const Actor& actor, const std::string& patient_id, Foot foot, const Rect& rect,
                 const std::string& label);
  Roi approve_roi(const Actor& actor, const std::string& roi_id);
  Roi delete_roi(const Actor& actor, const std::string& roi_id);
  std::vector<Roi> list_rois(const Actor& actor, const std::string& patient_id);
  Roi roi(const Actor& actor, const std::string& roi_id);
  Timeline timeline(const Actor& actor, const std::string& roi_id, const TimelineOptions& opts);
  RoiNote add_note(const Actor& actor, const std::string& roi_id, const std::string& text);
  std::vector<RoiNote> notes(const Actor& actor, const std::string& roi_id);
  ExportResult export_roi(const Actor& actor, const std::string& roi_id, const ExportRequest& req);
  Bytes read_export(const Actor& actor, const std::string& export_id);

  AccessGrant grant(const Actor& actor, const std::string& patient_id,
                    const std::string& clinician_id);
  AccessGrant revoke(const Actor& actor, const std::string& patient_id,
                     const std::string& clinician_id);
  // Active grants on the patient's record.
  std::vector<AccessGrant> grants(const Actor& actor, const std::string& patient_id);
  // Patients the actor may read.
  std::vector<std::string> patients(const Actor& actor);
  // Operator only.
  User add_user(const Actor& actor, const std::string& user_id, const std::string& display_name,
                Role role, const std::string& secret);

  // Raw image of a stored scan.
  RasterImage load_raw(const ScanRecord& s) const;

 private:
  Roi load_roi(const std::string& roi_id) const;
  std::string scan_patient(const std::string& scan_id) const;

  Store& store_;
  AnalyzerRegistry registry_;
  ServiceOptions opts_;
};

}  // namespace podo
