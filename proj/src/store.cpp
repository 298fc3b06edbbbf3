#include "podo/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "podo/crypto.hpp"
#include "podo/error.hpp"

namespace fs = std::filesystem;

namespace podo {

namespace {

constexpr std::string_view kStagingMarker = ".staging-";

[[noreturn]] void fail_errno(const fs::path& path, const char* op) {
  const int err = errno;
  if (err == ENOSPC || err == EDQUOT) fail(Errc::StorageFull, "no space left writing " + path.string());
  fail(Errc::Io, std::string(op) + " " + path.string() + ": " + std::strerror(err));
}

void write_all(int fd, const std::uint8_t* data, std::size_t n, const fs::path& path) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      fail_errno(path, "write");
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::NotFound, "cannot open " + path.filename().string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Json parse_doc(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable record " + path.filename().string());
  }
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// Complete lines only; a torn tail left by a crash is ignored.
std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  if (!fs::exists(path)) return out;
  const std::string text = read_text(path);
  std::size_t start = 0;
  for (std::size_t nl; (nl = text.find('\n', start)) != std::string::npos; start = nl + 1) {
    if (nl > start) out.push_back(text.substr(start, nl - start));
  }
  return out;
}

void truncate_torn_tail(const fs::path& path) {
  const std::string text = read_text(path);
  if (text.empty() || text.back() == '\n') return;
  const std::size_t keep = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
  fs::resize_file(path, keep);
}

Credential dummy_credential(int iterations) {
  Credential d;
  d.iterations = iterations;
  d.salt_hex = std::string(32, '0');
  d.hash_hex = std::string(64, '0');
  return d;
}

}  // namespace

Store::Store(fs::path root, StoreOptions opts) : root_(std::move(root)), opts_(std::move(opts)) {
  if (!opts_.clock) opts_.clock = system_clock();
  if (!opts_.random) opts_.random = random_bytes;
  std::error_code ec;
  fs::create_directories(root_ / "patients", ec);
  fs::create_directories(root_ / "exports", ec);
  fs::create_directories(root_ / "jobs", ec);
  if (ec || !fs::is_directory(root_)) fail(Errc::Io, "cannot create store at " + root_.string());
  recover();
}

Store::~Store() = default;

void Store::recover() {
  std::vector<fs::path> staging;
  for (const auto& e : fs::recursive_directory_iterator(root_)) {
    if (e.is_regular_file() &&
        e.path().filename().string().find(kStagingMarker) != std::string::npos) {
      staging.push_back(e.path());
    }
  }
  for (const auto& p : staging) fs::remove(p);

  if (fs::exists(root_ / "audit.log")) truncate_torn_tail(root_ / "audit.log");

  std::vector<std::string> patient_users;
  for (const User& u : read_users()) {
    if (u.role == Role::patient) patient_users.push_back(u.patient_id);
  }
  for (const auto& pe : fs::directory_iterator(root_ / "patients")) {
    if (!pe.is_directory()) continue;
    const fs::path scans = pe.path() / "scans";
    if (fs::exists(scans)) {
      for (const auto& se : fs::directory_iterator(scans)) {
        // A scan without its commit record never happened.
        if (se.is_directory() && !fs::exists(se.path() / "meta.json")) fs::remove_all(se.path());
      }
    }
    const fs::path notes = pe.path() / "notes";
    if (fs::exists(notes)) {
      for (const auto& ne : fs::directory_iterator(notes)) {
        if (ne.is_regular_file()) truncate_torn_tail(ne.path());
      }
    }
    // A profile is written before its user; if the user never landed the
    // patient was never created.
    const std::string pid = pe.path().filename().string();
    const bool has_user =
        std::find(patient_users.begin(), patient_users.end(), pid) != patient_users.end();
    const bool has_data = (fs::exists(scans) && !fs::is_empty(scans)) ||
                          fs::exists(pe.path() / "rois.json") || fs::exists(notes);
    if (!has_user && !has_data) fs::remove_all(pe.path());
  }
}

std::string Store::new_id(std::string_view prefix) {
  return std::string(prefix) + "-" + to_hex(opts_.random(8));
}

std::unique_lock<std::recursive_mutex> Store::lock_patient(const std::string& patient_id) {
  std::recursive_mutex* mu = nullptr;
  {
    std::lock_guard g(index_mu_);
    auto& slot = patient_mu_[patient_id];
    if (!slot) slot = std::make_unique<std::recursive_mutex>();
    mu = slot.get();
  }
  return std::unique_lock(*mu);
}

void Store::write_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const FaultAction act =
      opts_.fault_hook ? opts_.fault_hook({path, WritePoint::Kind::replace}) : FaultAction::proceed;
  if (act == FaultAction::crash_before) throw InjectedCrash{};

  std::uint64_t seq;
  {
    std::lock_guard g(seq_mu_);
    seq = ++staging_seq_;
  }
  fs::path staging = path;
  staging += std::string(kStagingMarker) + std::to_string(::getpid()) + "-" + std::to_string(seq);
  const int fd = ::open(staging.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail_errno(path, "open");
  try {
    if (act == FaultAction::crash_partial) {
      write_all(fd, bytes.data(), bytes.size() / 2, path);
      ::close(fd);
      throw InjectedCrash{};
    }
    write_all(fd, bytes.data(), bytes.size(), path);
    if (::fsync(fd) != 0) fail_errno(path, "fsync");
  } catch (const Error&) {
    ::close(fd);
    fs::remove(staging);
    throw;
  }
  ::close(fd);
  if (::rename(staging.c_str(), path.c_str()) != 0) {
    fs::remove(staging);
    fail_errno(path, "rename");
  }
  fsync_dir(path.parent_path());
}

void Store::write_atomic(const fs::path& path, const Json& doc) {
  const std::string text = doc.dump(2) + "\n";
  write_atomic(path, as_bytes(text));
}

void Store::append_line(const fs::path& path, const std::string& line) {
  const FaultAction act =
      opts_.fault_hook ? opts_.fault_hook({path, WritePoint::Kind::append}) : FaultAction::proceed;
  if (act == FaultAction::crash_before) throw InjectedCrash{};
  const std::string text = line + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) fail_errno(path, "open");
  try {
    if (act == FaultAction::crash_partial) {
      write_all(fd, as_bytes(text).data(), text.size() / 2, path);
      ::close(fd);
      throw InjectedCrash{};
    }
    write_all(fd, as_bytes(text).data(), text.size(), path);
    if (::fsync(fd) != 0) fail_errno(path, "fsync");
  } catch (const Error&) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

std::vector<User> Store::read_users() const {
  const fs::path p = root_ / "users.json";
  std::vector<User> out;
  if (!fs::exists(p)) return out;
  const Json doc = parse_doc(p);
  try {
    for (const Json& j : doc.at("users")) out.push_back(user_from_json(j));
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable users.json");
  }
  return out;
}

User Store::add_user(const std::string& user_id, const std::string& display_name, Role role,
                     const std::string& secret) {
  require_valid_id(user_id, "user id");
  if (secret.empty()) fail(Errc::InvalidArgument, "secret must not be empty");
  std::lock_guard g(users_mu_);
  std::vector<User> all = read_users();
  for (const User& u : all) {
    if (u.user_id == user_id) fail(Errc::AlreadyExists, "user already exists");
  }
  User u;
  u.user_id = user_id;
  u.display_name = display_name;
  u.role = role;
  const Bytes salt = opts_.random(16);
  u.credential.iterations = opts_.pbkdf2_iterations;
  u.credential.salt_hex = to_hex(salt);
  u.credential.hash_hex = to_hex(pbkdf2_sha256(secret, salt, opts_.pbkdf2_iterations));
  if (role == Role::patient) {
    u.patient_id = user_id;
    auto lock = lock_patient(user_id);
    PatientProfile p;
    p.patient_id = user_id;
    p.display_name = display_name;
    p.pseudonym_salt = to_hex(opts_.random(16));
    p.created_at = now();
    fs::create_directories(patient_dir(user_id));
    write_profile(p);
  }
  all.push_back(u);
  Json doc{{"users", Json::array()}};
  for (const User& x : all) doc["users"].push_back(to_json(x));
  write_atomic(root_ / "users.json", doc);
  return u;
}

std::optional<User> Store::find_user(const std::string& user_id) const {
  std::lock_guard g(users_mu_);
  for (User& u : read_users()) {
    if (u.user_id == user_id) return u;
  }
  return std::nullopt;
}

std::vector<User> Store::users() const {
  std::lock_guard g(users_mu_);
  return read_users();
}

User Store::verify_credentials(const std::string& user_id, const std::string& secret) const {
  const std::optional<User> u = find_user(user_id);
  const Credential cred = u ? u->credential : dummy_credential(opts_.pbkdf2_iterations);
  const Bytes salt = from_hex(cred.salt_hex);
  const Bytes expect = from_hex(cred.hash_hex);
  const Bytes got = pbkdf2_sha256(secret, salt, cred.iterations, expect.size());
  const bool match = constant_time_equal(got, expect);
  if (!u || !match) fail(Errc::BadCredentials, "invalid user id or secret");
  return *u;
}

fs::path Store::patient_dir(const std::string& patient_id) const {
  require_valid_id(patient_id, "patient id");
  return root_ / "patients" / patient_id;
}

fs::path Store::scan_dir(const std::string& patient_id, const std::string& scan_id) const {
  require_valid_id(scan_id, "scan id");
  return patient_dir(patient_id) / "scans" / scan_id;
}

bool Store::patient_exists(const std::string& patient_id) const {
  return valid_id(patient_id) && fs::exists(patient_dir(patient_id) / "profile.json");
}

PatientProfile Store::profile(const std::string& patient_id) const {
  if (!patient_exists(patient_id)) fail(Errc::NotFound, "unknown patient");
  try {
    return profile_from_json(parse_doc(patient_dir(patient_id) / "profile.json"));
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable profile");
  }
}

std::vector<std::string> Store::patient_ids() const {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root_ / "patients")) {
    const std::string id = e.path().filename().string();
    if (e.is_directory() && patient_exists(id)) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Store::write_profile(const PatientProfile& p) {
  write_atomic(patient_dir(p.patient_id) / "profile.json", to_json(p));
}

AccessGrant Store::grant(const std::string& patient_id, const std::string& clinician_id) {
  const std::optional<User> c = find_user(clinician_id);
  if (!c || c->role != Role::clinician) fail(Errc::NotFound, "unknown clinician");
  auto lock = lock_patient(patient_id);
  PatientProfile p = profile(patient_id);
  for (const AccessGrant& g : p.grants) {
    if (g.clinician_id == clinician_id && g.active()) return g;
  }
  AccessGrant g{patient_id, clinician_id, now(), std::nullopt};
  p.grants.push_back(g);
  write_profile(p);
  return g;
}

AccessGrant Store::revoke(const std::string& patient_id, const std::string& clinician_id) {
  auto lock = lock_patient(patient_id);
  PatientProfile p = profile(patient_id);
  for (AccessGrant& g : p.grants) {
    if (g.clinician_id == clinician_id && g.active()) {
      g.revoked_at = std::max(now(), g.granted_at);
      const AccessGrant out = g;
      write_profile(p);
      return out;
    }
  }
  fail(Errc::NotFound, "no active grant");
}

bool Store::has_active_grant(const std::string& patient_id, const std::string& clinician_id) const {
  if (!patient_exists(patient_id)) return false;
  const PatientProfile p = profile(patient_id);
  return std::any_of(p.grants.begin(), p.grants.end(), [&](const AccessGrant& g) {
    return g.clinician_id == clinician_id && g.active();
  });
}

void Store::save_scan(const ScanRecord& record, const ScanFiles& files) {
  if (!patient_exists(record.patient_id)) fail(Errc::NotFound, "unknown patient");
  auto lock = lock_patient(record.patient_id);
  const fs::path dir = scan_dir(record.patient_id, record.scan_id);
  if (fs::exists(dir / "meta.json")) fail(Errc::AlreadyExists, "scan already exists");
  fs::create_directories(dir);

  ScanRecord meta = record;
  meta.checksums.clear();
  const std::string transform = files.transform.dump(2) + "\n";
  const std::string analysis = files.analysis.dump(2) + "\n";
  const std::pair<const char*, std::span<const std::uint8_t>> parts[] = {
      {"raw.png", files.raw_png},           {"canonical.png", files.canonical_png},
      {"thumb.png", files.thumb_png},       {"transform.json", as_bytes(transform)},
      {"analysis.json", as_bytes(analysis)}};
  for (const auto& [name, bytes] : parts) {
    write_atomic(dir / name, bytes);
    meta.checksums[name] = sha256_hex(bytes);
  }
  write_atomic(dir / "meta.json", to_json(meta));
  std::lock_guard g(index_mu_);
  scan_index_[record.scan_id] = record.patient_id;
}

std::optional<std::string> Store::scan_owner(const std::string& scan_id) const {
  if (!valid_id(scan_id)) return std::nullopt;
  {
    std::lock_guard g(index_mu_);
    const auto it = scan_index_.find(scan_id);
    if (it != scan_index_.end()) return it->second;
  }
  for (const auto& e : fs::directory_iterator(root_ / "patients")) {
    if (fs::exists(e.path() / "scans" / scan_id / "meta.json")) {
      const std::string pid = e.path().filename().string();
      std::lock_guard g(index_mu_);
      scan_index_[scan_id] = pid;
      return pid;
    }
  }
  return std::nullopt;
}

ScanRecord Store::load_scan(const std::string& scan_id) const {
  const auto owner = scan_owner(scan_id);
  if (!owner) fail(Errc::NotFound, "unknown scan");
  const fs::path dir = scan_dir(*owner, scan_id);
  const Json meta = parse_doc(dir / "meta.json");
  try {
    for (const auto& [name, sum] : meta.at("files").items()) {
      if (!fs::exists(dir / name) || sha256_hex(read_file(dir / name)) != sum.get<std::string>()) {
        fail(Errc::CorruptRecord, "checksum mismatch in scan file " + name);
      }
    }
    return scan_from_json(meta, parse_doc(dir / "transform.json"));
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable scan metadata");
  }
}

Bytes Store::read_scan_file(const std::string& scan_id, const std::string& name) const {
  const auto owner = scan_owner(scan_id);
  if (!owner) fail(Errc::NotFound, "unknown scan");
  const fs::path dir = scan_dir(*owner, scan_id);
  const Json meta = parse_doc(dir / "meta.json");
  if (!meta.contains("files") || !meta["files"].contains(name)) {
    fail(Errc::NotFound, "unknown scan file");
  }
  Bytes bytes = read_file(dir / name);
  if (sha256_hex(bytes) != meta["files"][name].get<std::string>()) {
    fail(Errc::CorruptRecord, "checksum mismatch in scan file " + name);
  }
  return bytes;
}

std::vector<ScanRecord> Store::list_scans(const std::string& patient_id,
                                          std::optional<Foot> foot) const {
  std::vector<ScanRecord> out;
  const fs::path scans = patient_dir(patient_id) / "scans";
  if (!fs::exists(scans)) return out;
  for (const auto& e : fs::directory_iterator(scans)) {
    const fs::path meta = e.path() / "meta.json";
    if (!e.is_directory() || !fs::exists(meta)) continue;
    try {
      ScanRecord r = scan_from_json(parse_doc(meta), parse_doc(e.path() / "transform.json"));
      if (!foot || r.foot == *foot) out.push_back(std::move(r));
    } catch (const Json::exception&) {
      fail(Errc::CorruptRecord, "unreadable scan metadata");
    }
  }
  std::sort(out.begin(), out.end(), [](const ScanRecord& a, const ScanRecord& b) {
    return std::tie(a.capture_time, a.scan_id) < std::tie(b.capture_time, b.scan_id);
  });
  return out;
}

std::optional<ScanRecord> Store::baseline(const std::string& patient_id, Foot foot) const {
  std::optional<ScanRecord> best;
  for (ScanRecord& r : list_scans(patient_id, foot)) {
    if (!r.is_baseline) continue;
    if (!best || std::tie(r.committed_at, r.scan_id) < std::tie(best->committed_at, best->scan_id)) {
      best = std::move(r);
    }
  }
  return best;
}

std::vector<Roi> Store::rois(const std::string& patient_id) const {
  const fs::path p = patient_dir(patient_id) / "rois.json";
  std::vector<Roi> out;
  if (!fs::exists(p)) return out;
  try {
    for (const Json& j : parse_doc(p)) out.push_back(roi_from_json(j));
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable rois.json");
  }
  return out;
}

std::optional<Roi> Store::find_roi(const std::string& roi_id) const {
  if (!valid_id(roi_id)) return std::nullopt;
  for (const std::string& pid : patient_ids()) {
    for (Roi& r : rois(pid)) {
      if (r.id == roi_id) return r;
    }
  }
  return std::nullopt;
}

void Store::put_roi(const Roi& roi) {
  require_valid_id(roi.id, "roi id");
  if (!patient_exists(roi.patient_id)) fail(Errc::NotFound, "unknown patient");
  auto lock = lock_patient(roi.patient_id);
  std::vector<Roi> all = rois(roi.patient_id);
  const auto it = std::find_if(all.begin(), all.end(), [&](const Roi& r) { return r.id == roi.id; });
  if (it != all.end()) {
    *it = roi;
  } else {
    all.push_back(roi);
  }
  Json doc = Json::array();
  for (const Roi& r : all) doc.push_back(to_json(r));
  write_atomic(patient_dir(roi.patient_id) / "rois.json", doc);
}

void Store::append_note(const std::string& patient_id, const RoiNote& note) {
  require_valid_id(note.roi_id, "roi id");
  auto lock = lock_patient(patient_id);
  const fs::path dir = patient_dir(patient_id) / "notes";
  fs::create_directories(dir);
  append_line(dir / (note.roi_id + ".jsonl"), to_json(note).dump());
}

std::vector<RoiNote> Store::notes(const std::string& patient_id, const std::string& roi_id) const {
  require_valid_id(roi_id, "roi id");
  std::vector<RoiNote> out;
  try {
    for (const std::string& line :
         read_lines(patient_dir(patient_id) / "notes" / (roi_id + ".jsonl"))) {
      out.push_back(note_from_json(Json::parse(line)));
    }
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable note log");
  }
  return out;
}

void Store::save_export(const std::string& export_id, std::span<const std::uint8_t> zip) {
  require_valid_id(export_id, "export id");
  write_atomic(root_ / "exports" / (export_id + ".zip"), zip);
}

Bytes Store::read_export(const std::string& export_id) const {
  if (!export_exists(export_id)) fail(Errc::NotFound, "unknown export");
  return read_file(root_ / "exports" / (export_id + ".zip"));
}

bool Store::export_exists(const std::string& export_id) const {
  return valid_id(export_id) && fs::exists(root_ / "exports" / (export_id + ".zip"));
}

void Store::append_audit(Json event) {
  std::lock_guard g(audit_mu_);
  Json line{{"at", format_utc(now())}};
  for (auto& [k, v] : event.items()) line[k] = v;
  append_line(root_ / "audit.log", line.dump());
}

std::vector<Json> Store::audit_log() const {
  std::lock_guard g(audit_mu_);
  std::vector<Json> out;
  for (const std::string& line : read_lines(root_ / "audit.log")) out.push_back(Json::parse(line));
  return out;
}

void Store::save_job(const Job& job) {
  require_valid_id(job.job_id, "job id");
  write_atomic(root_ / "jobs" / (job.job_id + ".json"), to_json(job));
}

std::vector<Job> Store::jobs() const {
  std::vector<Job> out;
  for (const auto& e : fs::directory_iterator(root_ / "jobs")) {
    if (e.path().extension() != ".json") continue;
    try {
      out.push_back(job_from_json(parse_doc(e.path())));
    } catch (const Json::exception&) {
      fail(Errc::CorruptRecord, "unreadable job record");
    }
  }
  std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) {
    const auto ta = a.times.at.count("pending") ? a.times.at.at("pending") : 0;
    const auto tb = b.times.at.count("pending") ? b.times.at.at("pending") : 0;
    return std::tie(ta, a.job_id) < std::tie(tb, b.job_id);
  });
  return out;
}

std::optional<Job> Store::load_job(const std::string& job_id) const {
  if (!valid_id(job_id)) return std::nullopt;
  const fs::path p = root_ / "jobs" / (job_id + ".json");
  if (!fs::exists(p)) return std::nullopt;
  try {
    return job_from_json(parse_doc(p));
  } catch (const Json::exception&) {
    fail(Errc::CorruptRecord, "unreadable job record");
  }
}

std::string pseudonym(const PatientProfile& p) {
  return "anon-" + sha256_hex(p.pseudonym_salt + ":" + p.patient_id).substr(0, 16);
}

}  // namespace podo
