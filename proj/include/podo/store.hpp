#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "podo/image_io.hpp"
#include "podo/records.hpp"

namespace podo {

// Every durable mutation passes through one of these points.
struct WritePoint {
  enum class Kind { replace, append };
  std::filesystem::path path;
  Kind kind = Kind::replace;
};

enum class FaultAction { proceed, crash_before, crash_partial };
using FaultHook = std::function<FaultAction(const WritePoint&)>;

// Thrown by the store when a fault hook asks it to stop mid-write. Not a
// podo::Error on purpose: nothing should catch and recover from it.
struct InjectedCrash : std::exception {
  const char* what() const noexcept override { return "injected crash"; }
};

struct StoreOptions {
  Clock clock = system_clock();
  // Source for salts and generated identifiers (tokens always use the
  // system generator).
  std::function<Bytes(std::size_t)> random;
  FaultHook fault_hook;
  int pbkdf2_iterations = 200000;
};

struct ScanFiles {
  Bytes raw_png;
  Bytes canonical_png;
  Bytes thumb_png;
  Json transform;
  Json analysis;
};

inline constexpr const char* kScanFileNames[] = {"raw.png", "canonical.png", "thumb.png",
                                                 "transform.json", "analysis.json"};

// Directory-per-patient repository:
//   users.json, audit.log, exports/{id}.zip, jobs/{id}.json,
//   patients/{pid}/profile.json, rois.json, notes/{roi}.jsonl,
//   patients/{pid}/scans/{sid}/{raw.png, canonical.png, thumb.png,
//                              transform.json, analysis.json, meta.json}
// Files are replaced by write-to-staging then rename; meta.json is the
// commit record of a scan and is written last.
class Store {
 public:
  explicit Store(std::filesystem::path root, StoreOptions opts = {});
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& root() const noexcept { return root_; }
  Timestamp now() const { return opts_.clock(); }
  std::string new_id(std::string_view prefix);
  int pbkdf2_iterations() const noexcept { return opts_.pbkdf2_iterations; }

  // Serializes all writers touching one patient directory. Recursive so a
  // caller can hold it across several store calls.
  std::unique_lock<std::recursive_mutex> lock_patient(const std::string& patient_id);

  // Users. A patient user also gets a profile with patient_id == user_id.
  User add_user(const std::string& user_id, const std::string& display_name, Role role,
                const std::string& secret);
  std::optional<User> find_user(const std::string& user_id) const;
  std::vector<User> users() const;
  // Throws BadCredentials for unknown users and wrong secrets alike, after
  // doing the same amount of hashing work.
  User verify_credentials(const std::string& user_id, const std::string& secret) const;

  bool patient_exists(const std::string& patient_id) const;
  PatientProfile profile(const std::string& patient_id) const;
  std::vector<std::string> patient_ids() const;
  AccessGrant grant(const std::string& patient_id, const std::string& clinician_id);
  AccessGrant revoke(const std::string& patient_id, const std::string& clinician_id);
  bool has_active_grant(const std::string& patient_id, const std::string& clinician_id) const;

  void save_scan(const ScanRecord& record, const ScanFiles& files);
  // Verifies every file checksum; CorruptRecord on mismatch.
  ScanRecord load_scan(const std::string& scan_id) const;
  Bytes read_scan_file(const std::string& scan_id, const std::string& name) const;
  // Patient owning a committed scan, without verifying its files.
  std::optional<std::string> scan_owner(const std::string& scan_id) const;
  // Ascending by capture_time, then scan_id.
  std::vector<ScanRecord> list_scans(const std::string& patient_id,
                                     std::optional<Foot> foot = std::nullopt) const;
  std::optional<ScanRecord> baseline(const std::string& patient_id, Foot foot) const;

  std::vector<Roi> rois(const std::string& patient_id) const;
  std::optional<Roi> find_roi(const std::string& roi_id) const;
  // Inserts or replaces by id.
  void put_roi(const Roi& roi);

  void append_note(const std::string& patient_id, const RoiNote& note);
  std::vector<RoiNote> notes(const std::string& patient_id, const std::string& roi_id) const;

  void save_export(const std::string& export_id, std::span<const std::uint8_t> zip);
  Bytes read_export(const std::string& export_id) const;
  bool export_exists(const std::string& export_id) const;

  void append_audit(Json event);
  std::vector<Json> audit_log() const;

  void save_job(const Job& job);
  std::vector<Job> jobs() const;
  std::optional<Job> load_job(const std::string& job_id) const;

  std::filesystem::path patient_dir(const std::string& patient_id) const;
  std::filesystem::path scan_dir(const std::string& patient_id, const std::string& scan_id) const;

 private:
  void recover();
  void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
  void write_atomic(const std::filesystem::path& path, const Json& doc);
  void append_line(const std::filesystem::path& path, const std::string& line);
  std::vector<User> read_users() const;
  void write_profile(const PatientProfile& p);

  std::filesystem::path root_;
  StoreOptions opts_;
  mutable std::mutex users_mu_;
  mutable std::mutex audit_mu_;
  mutable std::mutex index_mu_;
  std::map<std::string, std::unique_ptr<std::recursive_mutex>> patient_mu_;
  mutable std::map<std::string, std::string> scan_index_;  // scan id -> patient id
  std::uint64_t staging_seq_ = 0;
  std::mutex seq_mu_;
};

std::string pseudonym(const PatientProfile& p);

}  // namespace podo
