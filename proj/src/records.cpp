#include "podo/records.hpp"

#include <cmath>
#include <limits>

#include "podo/error.hpp"

namespace podo {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  fail(Errc::InvalidArgument, std::string("unknown ") + what + ": " + std::string(s));
}

constexpr std::array<std::string_view, 2> kRoles = {"patient", "clinician"};
constexpr std::array<std::string_view, 2> kFeet = {"left", "right"};
constexpr std::array<std::string_view, 3> kRoiStatus = {"proposed", "approved", "deleted"};
constexpr std::array<std::string_view, 5> kJobStates = {"pending", "capturing", "processing",
                                                        "done", "failed"};

// JSON has no infinity; an undefined error metric is written as null.
Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_inf(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

Json rect_json(const Rect& r) { return Json::array({r.x, r.y, r.w, r.h}); }

Rect rect_from(const Json& j) {
  if (!j.is_array() || j.size() != 4) fail(Errc::InvalidArgument, "rect must be [x, y, w, h]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::string_view to_string(Role r) { return kRoles[static_cast<int>(r)]; }
std::string_view to_string(Foot f) { return kFeet[static_cast<int>(f)]; }
std::string_view to_string(RoiStatus s) { return kRoiStatus[static_cast<int>(s)]; }
std::string_view to_string(JobState s) { return kJobStates[static_cast<int>(s)]; }
Role parse_role(std::string_view s) { return parse_enum<Role>(s, kRoles, "role"); }
Foot parse_foot(std::string_view s) { return parse_enum<Foot>(s, kFeet, "foot"); }
RoiStatus parse_roi_status(std::string_view s) {
  return parse_enum<RoiStatus>(s, kRoiStatus, "roi status");
}
JobState parse_job_state(std::string_view s) {
  return parse_enum<JobState>(s, kJobStates, "job state");
}

bool valid_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  for (const char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

void require_valid_id(std::string_view id, std::string_view what) {
  if (!valid_id(id)) {
    fail(Errc::InvalidArgument,
         std::string(what) + " must be 1-64 characters from [A-Za-z0-9_-]");
  }
}

Json to_json(const Credential& c) {
  return Json{{"algorithm", c.algorithm},
              {"iterations", c.iterations},
              {"salt", c.salt_hex},
              {"hash", c.hash_hex}};
}

Json to_json(const User& u) {
  Json j{{"user_id", u.user_id}, {"display_name", u.display_name}, {"role", to_string(u.role)}};
  if (u.role == Role::patient) j["patient_id"] = u.patient_id;
  j["credential"] = to_json(u.credential);
  return j;
}

User user_from_json(const Json& j) {
  User u;
  u.user_id = j.at("user_id").get<std::string>();
  u.display_name = j.at("display_name").get<std::string>();
  u.role = parse_role(j.at("role").get<std::string>());
  if (u.role == Role::patient) u.patient_id = j.at("patient_id").get<std::string>();
  const Json& c = j.at("credential");
  u.credential.algorithm = c.at("algorithm").get<std::string>();
  u.credential.iterations = c.at("iterations").get<int>();
  u.credential.salt_hex = c.at("salt").get<std::string>();
  u.credential.hash_hex = c.at("hash").get<std::string>();
  return u;
}

Json to_json(const AccessGrant& g) {
  Json j{{"patient_id", g.patient_id},
         {"clinician_id", g.clinician_id},
         {"granted_at", format_utc(g.granted_at)}};
  j["revoked_at"] = g.revoked_at ? Json(format_utc(*g.revoked_at)) : Json(nullptr);
  return j;
}

AccessGrant grant_from_json(const Json& j) {
  AccessGrant g;
  g.patient_id = j.at("patient_id").get<std::string>();
  g.clinician_id = j.at("clinician_id").get<std::string>();
  g.granted_at = parse_utc(j.at("granted_at").get<std::string>());
  if (!j.at("revoked_at").is_null()) g.revoked_at = parse_utc(j["revoked_at"].get<std::string>());
  return g;
}

Json to_json(const PatientProfile& p) {
  Json grants = Json::array();
  for (const auto& g : p.grants) grants.push_back(to_json(g));
  return Json{{"patient_id", p.patient_id},
              {"display_name", p.display_name},
              {"pseudonym_salt", p.pseudonym_salt},
              {"created_at", format_utc(p.created_at)},
              {"grants", std::move(grants)}};
}

PatientProfile profile_from_json(const Json& j) {
  PatientProfile p;
  p.patient_id = j.at("patient_id").get<std::string>();
  p.display_name = j.at("display_name").get<std::string>();
  p.pseudonym_salt = j.at("pseudonym_salt").get<std::string>();
  p.created_at = parse_utc(j.at("created_at").get<std::string>());
  for (const Json& g : j.at("grants")) p.grants.push_back(grant_from_json(g));
  return p;
}

Json transform_json(const RegistrationResult& r) {
  return Json{{"scale", r.transform.scale},
              {"theta_rad", r.transform.theta},
              {"tx_px", r.transform.tx},
              {"ty_px", r.transform.ty},
              {"final_mse", finite_or_null(r.final_mse)},
              {"overlap", r.overlap_fraction},
              {"converged", r.converged}};
}

RegistrationResult registration_from_json(const Json& t, int iterations) {
  RegistrationResult r;
  r.transform = {t.at("scale").get<double>(), t.at("theta_rad").get<double>(),
                 t.at("tx_px").get<double>(), t.at("ty_px").get<double>()};
  r.final_mse = number_or_inf(t.at("final_mse"));
  r.overlap_fraction = t.at("overlap").get<double>();
  r.converged = t.at("converged").get<bool>();
  r.iterations = iterations;
  return r;
}

Json to_json(const ScanRecord& s) {
  Json files = Json::object();
  for (const auto& [name, sum] : s.checksums) files[name] = sum;
  return Json{{"scan_id", s.scan_id},
              {"patient_id", s.patient_id},
              {"foot", to_string(s.foot)},
              {"capture_time", format_utc(s.capture_time)},
              {"committed_at", format_utc(s.committed_at)},
              {"dpi", s.dpi},
              {"width", s.width},
              {"height", s.height},
              {"is_baseline", s.is_baseline},
              {"baseline_id", s.baseline_id},
              {"canonical_width", s.canonical_width},
              {"canonical_height", s.canonical_height},
              {"converged", s.registration.converged},
              {"iterations", s.registration.iterations},
              {"files", std::move(files)}};
}

ScanRecord scan_from_json(const Json& m, const Json& transform) {
  ScanRecord s;
  s.scan_id = m.at("scan_id").get<std::string>();
  s.patient_id = m.at("patient_id").get<std::string>();
  s.foot = parse_foot(m.at("foot").get<std::string>());
  s.capture_time = parse_utc(m.at("capture_time").get<std::string>());
  s.committed_at = parse_utc(m.at("committed_at").get<std::string>());
  s.dpi = m.at("dpi").get<double>();
  s.width = m.at("width").get<int>();
  s.height = m.at("height").get<int>();
  s.is_baseline = m.at("is_baseline").get<bool>();
  s.baseline_id = m.at("baseline_id").get<std::string>();
  s.canonical_width = m.at("canonical_width").get<int>();
  s.canonical_height = m.at("canonical_height").get<int>();
  s.registration = registration_from_json(transform, m.at("iterations").get<int>());
  for (const auto& [name, sum] : m.at("files").items()) s.checksums[name] = sum.get<std::string>();
  return s;
}

Json to_json(const Roi& r) {
  return Json{{"id", r.id},
              {"patient_id", r.patient_id},
              {"foot", to_string(r.foot)},
              {"rect", rect_json(r.rect)},
              {"label", r.label},
              {"status", to_string(r.status)},
              {"created_by", r.created_by},
              {"created_at", format_utc(r.created_at)},
              {"updated_at", format_utc(r.updated_at)}};
}

Roi roi_from_json(const Json& j) {
  Roi r;
  r.id = j.at("id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.foot = parse_foot(j.at("foot").get<std::string>());
  r.rect = rect_from(j.at("rect"));
  r.label = j.at("label").get<std::string>();
  r.status = parse_roi_status(j.at("status").get<std::string>());
  r.created_by = j.at("created_by").get<std::string>();
  r.created_at = parse_utc(j.at("created_at").get<std::string>());
  r.updated_at = parse_utc(j.at("updated_at").get<std::string>());
  return r;
}

Json to_json(const RoiNote& n) {
  return Json{{"roi_id", n.roi_id},
              {"author", n.author},
              {"timestamp", format_utc(n.timestamp)},
              {"text", n.text}};
}

RoiNote note_from_json(const Json& j) {
  RoiNote n;
  n.roi_id = j.at("roi_id").get<std::string>();
  n.author = j.at("author").get<std::string>();
  n.timestamp = parse_utc(j.at("timestamp").get<std::string>());
  n.text = j.at("text").get<std::string>();
  return n;
}

Json to_json(const Job& job) {
  Json times = Json::object();
  // Fixed state order keeps the document stable.
  for (const auto name : kJobStates) {
    const auto it = job.times.at.find(std::string(name));
    if (it != job.times.at.end()) times[std::string(name)] = format_utc(it->second);
  }
  Json j{{"job_id", job.job_id},
         {"patient_id", job.patient_id},
         {"foot", to_string(job.foot)},
         {"device_id", job.device_id},
         {"requested_by", job.requested_by},
         {"state", to_string(job.state)}};
  j["scan_id"] = job.scan_id.empty() ? Json(nullptr) : Json(job.scan_id);
  j["error"] = job.error.empty() ? Json(nullptr) : Json(job.error);
  j["times"] = std::move(times);
  return j;
}

Job job_from_json(const Json& j) {
  Job job;
  job.job_id = j.at("job_id").get<std::string>();
  job.patient_id = j.at("patient_id").get<std::string>();
  job.foot = parse_foot(j.at("foot").get<std::string>());
  job.device_id = j.at("device_id").get<std::string>();
  job.requested_by = j.at("requested_by").get<std::string>();
  job.state = parse_job_state(j.at("state").get<std::string>());
  if (!j.at("scan_id").is_null()) job.scan_id = j["scan_id"].get<std::string>();
  if (!j.at("error").is_null()) job.error = j["error"].get<std::string>();
  for (const auto& [k, v] : j.at("times").items()) {
    parse_job_state(k);
    job.times.at[k] = parse_utc(v.get<std::string>());
  }
  return job;
}

}  // namespace podo
