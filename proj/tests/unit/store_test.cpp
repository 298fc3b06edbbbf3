#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "podo/error.hpp"
#include "podo/store.hpp"
#include "support/workspace.hpp"

namespace podo {
namespace {

using testing::FakeClock;
using testing::TempDir;
namespace fs = std::filesystem;

Bytes bytes_of(std::string_view s) { return Bytes(s.begin(), s.end()); }

ScanFiles tiny_files(const std::string& tag) {
  ScanFiles f;
  f.raw_png = bytes_of("raw-" + tag);
  f.canonical_png = bytes_of("canonical-" + tag);
  f.thumb_png = bytes_of("thumb-" + tag);
  f.transform = transform_json(RegistrationResult{});
  f.analysis = Json{{"scan_id", tag}};
  return f;
}

ScanRecord scan_record(const std::string& id, const std::string& pid, Timestamp t, Foot foot) {
  ScanRecord s;
  s.scan_id = id;
  s.patient_id = pid;
  s.foot = foot;
  s.capture_time = t;
  s.committed_at = t + 5;
  s.width = 10;
  s.height = 8;
  s.canonical_width = 10;
  s.canonical_height = 8;
  s.baseline_id = id;
  s.is_baseline = true;
  s.registration.converged = true;
  s.registration.overlap_fraction = 1.0;
  return s;
}

class StoreTest : public ::testing::Test {
 protected:
  TempDir dir;
  FakeClock clock;
  std::unique_ptr<Store> store = std::make_unique<Store>(dir.path(), testing::fast_store_options(clock));

  void reopen() {
    store.reset();
    store = std::make_unique<Store>(dir.path(), testing::fast_store_options(clock));
  }
};

TEST(Records, IdAlphabet) {
  EXPECT_TRUE(valid_id("scan-0a_B"));
  EXPECT_FALSE(valid_id(""));
  EXPECT_FALSE(valid_id("../x"));
  EXPECT_FALSE(valid_id("a b"));
  EXPECT_FALSE(valid_id(std::string(65, 'a')));
  EXPECT_TRUE(valid_id(std::string(64, 'a')));
}

TEST(Records, JsonRoundTripProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1000.0, 1000.0);
  std::uniform_int_distribution<Timestamp> t(0, 4000000000);
  for (int i = 0; i < 200; ++i) {
    Roi r{"roi-" + std::to_string(i), "p" + std::to_string(i), i % 2 ? Foot::left : Foot::right,
          {u(rng), u(rng), std::abs(u(rng)) + 1, std::abs(u(rng)) + 1}, "label \"quoted\" ü",
          static_cast<RoiStatus>(i % 3), "creator", t(rng), t(rng)};
    ASSERT_EQ(roi_from_json(Json::parse(to_json(r).dump())), r);

    RoiNote n{r.id, "author", t(rng), "note\nwith newline"};
    ASSERT_EQ(note_from_json(Json::parse(to_json(n).dump())), n);

    ScanRecord s = scan_record("scan-" + std::to_string(i), "p", t(rng), Foot::right);
    s.dpi = 100 + std::abs(u(rng));
    s.registration.transform = {1.0 + u(rng) * 1e-4, u(rng) * 1e-3, u(rng), u(rng)};
    s.registration.final_mse = std::abs(u(rng));
    s.registration.overlap_fraction = std::abs(u(rng)) / 1000.0;
    s.registration.iterations = i;
    s.checksums = {{"raw.png", "ab"}, {"thumb.png", "cd"}};
    const Json meta = Json::parse(to_json(s).dump());
    const Json tr = Json::parse(transform_json(s.registration).dump());
    ASSERT_EQ(scan_from_json(meta, tr), s);

    Job j{"job-" + std::to_string(i), "p", Foot::left, "dev", "p", static_cast<JobState>(i % 5),
          i % 2 ? "scan-1" : "", i % 3 ? "" : "DeviceTimeout: late", {}};
    j.times.at["pending"] = t(rng);
    ASSERT_EQ(job_from_json(Json::parse(to_json(j).dump())), j);

    AccessGrant g{"p", "c", t(rng), i % 2 ? std::optional<Timestamp>(t(rng)) : std::nullopt};
    ASSERT_EQ(grant_from_json(Json::parse(to_json(g).dump())), g);
  }
}

TEST(Records, TransformJsonFieldsAndNonFiniteMse) {
  RegistrationResult r;
  r.transform = {1.25, -0.5, 3.0, 4.0};
  r.final_mse = std::numeric_limits<double>::infinity();
  const Json j = transform_json(r);
  EXPECT_EQ(j["scale"], 1.25);
  EXPECT_EQ(j["theta_rad"], -0.5);
  EXPECT_EQ(j["tx_px"], 3.0);
  EXPECT_EQ(j["ty_px"], 4.0);
  EXPECT_TRUE(j["final_mse"].is_null());
  EXPECT_EQ(j["converged"], false);
}

TEST_F(StoreTest, PatientUserGetsProfile) {
  const User u = store->add_user("alice", "Alice", Role::patient, "s3cret");
  EXPECT_EQ(u.patient_id, "alice");
  EXPECT_TRUE(store->patient_exists("alice"));
  EXPECT_EQ(store->profile("alice").display_name, "Alice");
  EXPECT_THROW(store->add_user("alice", "Again", Role::clinician, "x"), Error);
  EXPECT_THROW(store->add_user("../bad", "Bad", Role::patient, "x"), Error);
  store->add_user("drc", "Dr C", Role::clinician, "pw");
  EXPECT_FALSE(store->patient_exists("drc"));
}

TEST_F(StoreTest, CredentialsVerifyAndFailUniformly) {
  store->add_user("alice", "Alice", Role::patient, "s3cret");
  EXPECT_EQ(store->verify_credentials("alice", "s3cret").user_id, "alice");
  try {
    store->verify_credentials("alice", "wrong");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadCredentials);
  }
  try {
    store->verify_credentials("nobody", "s3cret");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadCredentials);
  }
  // The secret itself never reaches disk.
  const Bytes users = read_file(dir / "users.json");
  EXPECT_EQ(std::string(users.begin(), users.end()).find("s3cret"), std::string::npos);
}

TEST_F(StoreTest, GrantLifecycle) {
  store->add_user("alice", "Alice", Role::patient, "a");
  store->add_user("drc", "Dr C", Role::clinician, "c");
  EXPECT_FALSE(store->has_active_grant("alice", "drc"));
  const AccessGrant g1 = store->grant("alice", "drc");
  clock.advance(10);
  EXPECT_EQ(store->grant("alice", "drc"), g1);  // at most one active grant
  EXPECT_TRUE(store->has_active_grant("alice", "drc"));
  const AccessGrant r = store->revoke("alice", "drc");
  EXPECT_TRUE(r.revoked_at.has_value());
  EXPECT_FALSE(store->has_active_grant("alice", "drc"));
  EXPECT_THROW(store->revoke("alice", "drc"), Error);
  store->grant("alice", "drc");
  EXPECT_EQ(store->profile("alice").grants.size(), 2u);
  EXPECT_THROW(store->grant("alice", "ghost"), Error);
  EXPECT_THROW(store->grant("alice", "alice"), Error);
}

TEST_F(StoreTest, ScanRoundTripAndOrdering) {
  store->add_user("p", "P", Role::patient, "x");
  store->save_scan(scan_record("s-b", "p", 200, Foot::left), tiny_files("b"));
  store->save_scan(scan_record("s-a", "p", 200, Foot::left), tiny_files("a"));
  store->save_scan(scan_record("s-c", "p", 100, Foot::left), tiny_files("c"));
  store->save_scan(scan_record("s-r", "p", 50, Foot::right), tiny_files("r"));
  EXPECT_THROW(store->save_scan(scan_record("s-a", "p", 1, Foot::left), tiny_files("a")), Error);

  std::vector<std::string> ids;
  for (const auto& s : store->list_scans("p", Foot::left)) ids.push_back(s.scan_id);
  EXPECT_EQ(ids, (std::vector<std::string>{"s-c", "s-a", "s-b"}));
  EXPECT_EQ(store->list_scans("p").size(), 4u);

  const ScanRecord loaded = store->load_scan("s-a");
  EXPECT_EQ(loaded.capture_time, 200);
  EXPECT_EQ(loaded.checksums.size(), 5u);
  EXPECT_EQ(store->read_scan_file("s-a", "raw.png"), bytes_of("raw-a"));
  EXPECT_EQ(store->scan_owner("s-r"), "p");
  EXPECT_FALSE(store->scan_owner("s-zz").has_value());
  EXPECT_THROW(store->load_scan("s-zz"), Error);

  reopen();
  EXPECT_EQ(store->load_scan("s-b").scan_id, "s-b");
}

TEST_F(StoreTest, TamperedFileIsCorruptRecord) {
  store->add_user("p", "P", Role::patient, "x");
  store->save_scan(scan_record("s1", "p", 1, Foot::left), tiny_files("1"));
  {
    std::ofstream f(store->scan_dir("p", "s1") / "raw.png", std::ios::binary | std::ios::trunc);
    f << "tampered";
  }
  try {
    store->load_scan("s1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptRecord);
  }
  EXPECT_THROW(store->read_scan_file("s1", "raw.png"), Error);
}

TEST_F(StoreTest, RoisNotesJobsExports) {
  store->add_user("p", "P", Role::patient, "x");
  Roi r{"roi-1", "p", Foot::left, {1, 2, 3, 4}, "l", RoiStatus::proposed, "p", 5, 5};
  store->put_roi(r);
  r.status = RoiStatus::approved;
  store->put_roi(r);
  ASSERT_EQ(store->rois("p").size(), 1u);
  EXPECT_EQ(store->find_roi("roi-1")->status, RoiStatus::approved);

  store->append_note("p", {"roi-1", "p", 7, "first"});
  store->append_note("p", {"roi-1", "p", 8, "second"});
  const auto notes = store->notes("p", "roi-1");
  ASSERT_EQ(notes.size(), 2u);
  EXPECT_EQ(notes[1].text, "second");

  Job j;
  j.job_id = "job-1";
  j.patient_id = "p";
  j.device_id = "d";
  j.requested_by = "p";
  j.times.at["pending"] = 3;
  store->save_job(j);
  EXPECT_EQ(store->load_job("job-1"), j);
  EXPECT_EQ(store->jobs().size(), 1u);

  store->save_export("exp-1", bytes_of("zipbytes"));
  EXPECT_TRUE(store->export_exists("exp-1"));
  EXPECT_EQ(store->read_export("exp-1"), bytes_of("zipbytes"));

  store->append_audit({{"event", "x"}});
  ASSERT_EQ(store->audit_log().size(), 1u);
  EXPECT_TRUE(store->audit_log()[0].contains("at"));
}

TEST_F(StoreTest, RecoveryDropsUncommittedState) {
  store->add_user("p", "P", Role::patient, "x");
  store->append_note("p", {"roi-1", "p", 7, "kept"});
  const fs::path notes = store->patient_dir("p") / "notes" / "roi-1.jsonl";
  {
    std::ofstream f(notes, std::ios::app | std::ios::binary);
    f << "{\"roi_id\":\"roi-1\",\"auth";  // torn append
  }
  const fs::path half = store->patient_dir("p") / "scans" / "s-half";
  fs::create_directories(half);
  std::ofstream(half / "raw.png") << "x";
  std::ofstream(dir / "users.json.staging-1-1") << "partial";
  fs::create_directories(dir / "patients" / "ghost");
  std::ofstream(dir / "patients" / "ghost" / "profile.json") << "{}";

  reopen();
  EXPECT_EQ(store->notes("p", "roi-1").size(), 1u);
  EXPECT_FALSE(fs::exists(half));
  EXPECT_FALSE(fs::exists(dir / "users.json.staging-1-1"));
  EXPECT_FALSE(fs::exists(dir / "patients" / "ghost"));
  store->append_note("p", {"roi-1", "p", 9, "after"});
  EXPECT_EQ(store->notes("p", "roi-1").size(), 2u);
}

TEST_F(StoreTest, FaultHookSeesEveryWriteAndCrashesCleanly) {
  std::vector<WritePoint> seen;
  StoreOptions o = testing::fast_store_options(clock);
  bool crash_meta = false;
  o.fault_hook = [&](const WritePoint& w) {
    seen.push_back(w);
    if (crash_meta && w.path.filename() == "meta.json") return FaultAction::crash_partial;
    return FaultAction::proceed;
  };
  store.reset();
  store = std::make_unique<Store>(dir.path(), o);
  store->add_user("p", "P", Role::patient, "x");
  EXPECT_EQ(seen.size(), 2u);  // profile, then users.json
  EXPECT_EQ(seen[0].path.filename(), "profile.json");
  EXPECT_EQ(seen[1].path.filename(), "users.json");

  seen.clear();
  store->save_scan(scan_record("s1", "p", 1, Foot::left), tiny_files("1"));
  ASSERT_EQ(seen.size(), 6u);
  EXPECT_EQ(seen.back().path.filename(), "meta.json");

  crash_meta = true;
  EXPECT_THROW(store->save_scan(scan_record("s2", "p", 2, Foot::left), tiny_files("2")),
               InjectedCrash);
  reopen();
  EXPECT_EQ(store->list_scans("p").size(), 1u);
  EXPECT_FALSE(store->scan_owner("s2").has_value());
}

TEST_F(StoreTest, PseudonymIsStableAndHidesId) {
  store->add_user("alice", "Alice", Role::patient, "a");
  const std::string a = pseudonym(store->profile("alice"));
  EXPECT_EQ(a.rfind("anon-", 0), 0u);
  EXPECT_EQ(a.find("alice"), std::string::npos);
  reopen();
  EXPECT_EQ(pseudonym(store->profile("alice")), a);
}

}  // namespace
}  // namespace podo
