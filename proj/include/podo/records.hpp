#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "podo/analysis.hpp"
#include "podo/image.hpp"
#include "podo/registration.hpp"
#include "podo/timeutil.hpp"

namespace podo {

enum class Role { patient, clinician };
enum class Foot { left, right };
enum class RoiStatus { proposed, approved, deleted };
enum class JobState { pending, capturing, processing, done, failed };

std::string_view to_string(Role r);
std::string_view to_string(Foot f);
std::string_view to_string(RoiStatus s);
std::string_view to_string(JobState s);
Role parse_role(std::string_view s);
Foot parse_foot(std::string_view s);
RoiStatus parse_roi_status(std::string_view s);
JobState parse_job_state(std::string_view s);

// Identifiers end up in file paths, so they are restricted to
// [A-Za-z0-9_-] and at most 64 characters.
bool valid_id(std::string_view id);
void require_valid_id(std::string_view id, std::string_view what);

struct Credential {
  std::string algorithm = "pbkdf2-sha256";
  int iterations = 0;
  std::string salt_hex;
  std::string hash_hex;

  friend bool operator==(const Credential&, const Credential&) = default;
};

struct User {
  std::string user_id;
  std::string display_name;
  Role role = Role::patient;
  std::string patient_id;  // patients only; equals user_id
  Credential credential;

  friend bool operator==(const User&, const User&) = default;
};

struct AccessGrant {
  std::string patient_id;
  std::string clinician_id;
  Timestamp granted_at = 0;
  std::optional<Timestamp> revoked_at;

  bool active() const noexcept { return !revoked_at.has_value(); }
  friend bool operator==(const AccessGrant&, const AccessGrant&) = default;
};

struct PatientProfile {
  std::string patient_id;
  std::string display_name;
  std::string pseudonym_salt;  // hex
  Timestamp created_at = 0;
  std::vector<AccessGrant> grants;  // full history, oldest first

  friend bool operator==(const PatientProfile&, const PatientProfile&) = default;
};

struct ScanRecord {
  std::string scan_id;
  std::string patient_id;
  Foot foot = Foot::left;
  Timestamp capture_time = 0;
  Timestamp committed_at = 0;
  double dpi = kDefaultDpi;
  int width = 0;
  int height = 0;
  bool is_baseline = false;
  std::string baseline_id;  // scan whose frame is canonical for this foot
  int canonical_width = 0;
  int canonical_height = 0;
  RegistrationResult registration;
  std::map<std::string, std::string> checksums;  // file name -> sha256 hex

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

struct Roi {
  std::string id;
  std::string patient_id;
  Foot foot = Foot::left;
  Rect rect;
  std::string label;
  RoiStatus status = RoiStatus::proposed;
  std::string created_by;
  Timestamp created_at = 0;
  Timestamp updated_at = 0;

  friend bool operator==(const Roi&, const Roi&) = default;
};

struct RoiNote {
  std::string roi_id;
  std::string author;
  Timestamp timestamp = 0;
  std::string text;

  friend bool operator==(const RoiNote&, const RoiNote&) = default;
};

struct JobTimes {
  std::map<std::string, Timestamp> at;  // state name -> entry time
  friend bool operator==(const JobTimes&, const JobTimes&) = default;
};

struct Job {
  std::string job_id;
  std::string patient_id;
  Foot foot = Foot::left;
  std::string device_id;
  std::string requested_by;
  JobState state = JobState::pending;
  std::string scan_id;
  std::string error;
  JobTimes times;

  friend bool operator==(const Job&, const Job&) = default;
};

Json to_json(const Credential& c);
Json to_json(const User& u);
Json to_json(const AccessGrant& g);
Json to_json(const PatientProfile& p);
Json to_json(const ScanRecord& s);  // meta.json
Json to_json(const Roi& r);
Json to_json(const RoiNote& n);
Json to_json(const Job& j);
// transform.json: scale, theta_rad, tx_px, ty_px, final_mse, overlap, converged
Json transform_json(const RegistrationResult& r);

User user_from_json(const Json& j);
AccessGrant grant_from_json(const Json& j);
PatientProfile profile_from_json(const Json& j);
// meta.json plus transform.json
ScanRecord scan_from_json(const Json& meta, const Json& transform);
Roi roi_from_json(const Json& j);
RoiNote note_from_json(const Json& j);
Job job_from_json(const Json& j);
RegistrationResult registration_from_json(const Json& transform, int iterations);

}  // namespace podo
