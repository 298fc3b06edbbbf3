#include "podo/auth.hpp"

#include "podo/crypto.hpp"
#include "podo/error.hpp"

namespace podo {

std::string_view to_string(Action a) {
  switch (a) {
    case Action::read: return "read";
    case Action::annotate: return "annotate";
    case Action::write: return "write";
    case Action::share: return "share";
  }
  return "unknown";
}

bool authorize(const Store& store, const Actor& actor, const std::string& patient_id,
               Action action) {
  if (actor.is_operator) return true;
  if (actor.role == Role::patient) return !patient_id.empty() && actor.patient_id == patient_id;
  if (action == Action::write) return false;
  return store.has_active_grant(patient_id, actor.user_id);
}

void require(const Store& store, const Actor& actor, const std::string& patient_id,
             Action action) {
  if (!authorize(store, actor, patient_id, action)) {
    fail(Errc::Unauthorized, "not permitted");
  }
}

Sessions::Sessions(Store& store, Clock clock, std::int64_t ttl_seconds)
    : store_(store), clock_(std::move(clock)), ttl_(ttl_seconds) {
  if (!clock_) clock_ = system_clock();
}

std::string Sessions::login(const std::string& user_id, const std::string& secret) {
  const User u = store_.verify_credentials(user_id, secret);
  const std::string token = to_hex(random_bytes(32));
  std::lock_guard g(mu_);
  const Timestamp t = clock_();
  // Drop expired sessions opportunistically.
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    it = it->second.expires_at <= t ? sessions_.erase(it) : std::next(it);
  }
  sessions_[token] = {u.user_id, t + ttl_};
  return token;
}

Actor Sessions::resolve(const std::string& token) {
  std::string user_id;
  {
    std::lock_guard g(mu_);
    const auto it = sessions_.find(token);
    if (it == sessions_.end()) fail(Errc::Unauthenticated, "missing or invalid token");
    if (clock_() >= it->second.expires_at) {
      sessions_.erase(it);
      fail(Errc::Unauthenticated, "token expired");
    }
    user_id = it->second.user_id;
  }
  const std::optional<User> u = store_.find_user(user_id);
  if (!u) fail(Errc::Unauthenticated, "missing or invalid token");
  return Actor::from_user(*u);
}

void Sessions::logout(const std::string& token) {
  std::lock_guard g(mu_);
  sessions_.erase(token);
}

}  // namespace podo
