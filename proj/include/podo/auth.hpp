#pragma once

#include <map>
#include <mutex>
#include <string>

#include "podo/records.hpp"
#include "podo/store.hpp"

namespace podo {

// read: scans, images, analysis, ROIs, timelines, notes, measurements.
// annotate: attach notes, approve ROIs.
// write: create/delete ROIs, request scans, manage grants.
// share: export bundles.
enum class Action { read, annotate, write, share };

std::string_view to_string(Action a);

struct Actor {
  std::string user_id;
  Role role = Role::patient;
  std::string patient_id;
  // Local operator (CLI without --as): has filesystem access to the store
  // anyway, so authorization is not applied.
  bool is_operator = false;

  static Actor local_operator() { return {"operator", Role::clinician, "", true}; }
  static Actor from_user(const User& u) { return {u.user_id, u.role, u.patient_id, false}; }
};

// Patients may do anything on their own record and nothing elsewhere.
// Clinicians need an active grant and never get `write`.
bool authorize(const Store& store, const Actor& actor, const std::string& patient_id,
               Action action);
// Throws Unauthorized on deny.
void require(const Store& store, const Actor& actor, const std::string& patient_id, Action action);

// Opaque bearer tokens held in memory only.
class Sessions {
 public:
  Sessions(Store& store, Clock clock, std::int64_t ttl_seconds = 12 * 3600);

  // BadCredentials for unknown user or wrong secret.
  std::string login(const std::string& user_id, const std::string& secret);
  // Unauthenticated for unknown or expired tokens.
  Actor resolve(const std::string& token);
  void logout(const std::string& token);

 private:
  struct Session {
    std::string user_id;
    Timestamp expires_at;
  };
  Store& store_;
  Clock clock_;
  std::int64_t ttl_;
  std::mutex mu_;
  std::map<std::string, Session> sessions_;
};

}  // namespace podo
