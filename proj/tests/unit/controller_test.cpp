#include <gtest/gtest.h>

#include <fstream>

#include "podo/controller.hpp"
#include "podo/error.hpp"
#include "podo/image_io.hpp"
#include "support/workspace.hpp"

namespace podo {
namespace {

using namespace std::chrono_literals;
using testing::FakeClock;
using testing::TempDir;
namespace fs = std::filesystem;

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

DeviceDescriptor simulated(const std::string& id, const fs::path& dir) {
  fs::create_directories(dir);
  DeviceDescriptor d;
  d.device_id = id;
  d.dir = dir;
  return d;
}

DeviceDescriptor command(const std::string& id, const std::string& cmd) {
  DeviceDescriptor d;
  d.device_id = id;
  d.kind = DeviceDescriptor::Kind::external_command;
  d.command = cmd;
  return d;
}

TEST(JobStateMachine, TransitionTable) {
  using S = JobState;
  using E = JobEvent;
  EXPECT_EQ(next_job_state(std::nullopt, E::enqueue), S::pending);
  for (E e : {E::start, E::finish, E::fail}) EXPECT_FALSE(next_job_state(std::nullopt, e));
  EXPECT_EQ(next_job_state(S::pending, E::start), S::capturing);
  EXPECT_EQ(next_job_state(S::capturing, E::finish), S::processing);
  EXPECT_EQ(next_job_state(S::processing, E::finish), S::done);
  for (S s : {S::pending, S::capturing, S::processing}) {
    EXPECT_EQ(next_job_state(s, E::fail), S::failed);
    EXPECT_FALSE(next_job_state(s, E::enqueue));
  }
  EXPECT_FALSE(next_job_state(S::pending, E::finish));
  EXPECT_FALSE(next_job_state(S::capturing, E::start));
  for (S s : {S::done, S::failed}) {
    EXPECT_TRUE(is_terminal(s));
    for (E e : {E::enqueue, E::start, E::finish, E::fail}) EXPECT_FALSE(next_job_state(s, e));
  }
}

TEST(Devices, ParseAndValidate) {
  TempDir dir;
  fs::create_directories(dir / "cam");
  const Json doc = Json::parse(R"([
    {"device_id": "cam", "kind": "simulated", "dir": "cam", "dpi": 300},
    {"device_id": "ext", "kind": "external_command", "command": "scanimage > {OUT}"}
  ])");
  const auto devs = parse_devices(doc, dir.path());
  ASSERT_EQ(devs.size(), 2u);
  EXPECT_EQ(devs[0].dir, dir / "cam");
  EXPECT_EQ(devs[0].dpi, 300);
  EXPECT_EQ(devs[1].dpi, kDefaultDpi);

  auto bad = [&](const char* text) {
    return code_of([&] { parse_devices(Json::parse(text), dir.path()); });
  };
  EXPECT_EQ(bad(R"([{"device_id": "x", "kind": "simulated", "dir": "missing"}])"),
            Errc::InvalidArgument);
  EXPECT_EQ(bad(R"([{"device_id": "x", "kind": "laser"}])"), Errc::InvalidArgument);
  EXPECT_EQ(bad(R"([{"device_id": "x", "kind": "external_command", "command": "true"}])"),
            Errc::InvalidArgument);
  EXPECT_EQ(bad(R"([{"device_id": "cam", "kind": "simulated", "dir": "cam"},
                    {"device_id": "cam", "kind": "simulated", "dir": "cam"}])"),
            Errc::InvalidArgument);
  EXPECT_EQ(bad(R"({"device_id": "cam"})"), Errc::InvalidArgument);
}

TEST(Capture, SimulatedConsumesSmallestNameAndReadsSidecar) {
  TempDir dir;
  const DeviceDescriptor d = simulated("cam", dir / "cam");
  const RasterImage b = testing::solid_image(6, 6, {4, 5, 6});
  write_image(dir / "cam" / "b.png", b);
  // No embedded resolution, so the sidecar decides.
  std::string ppm = "P3\n8 4\n255\n";
  for (int i = 0; i < 32; ++i) ppm += "1 2 3\n";
  std::ofstream(dir / "cam" / "a.ppm") << ppm;
  std::ofstream(dir / "cam" / "a.ppm.dpi") << "300";
  const RasterImage got = capture(d, 1000ms);
  EXPECT_EQ(got.width(), 8);
  EXPECT_EQ(got.dpi(), 300);
  EXPECT_TRUE(fs::exists(dir / "cam" / "a.ppm.consumed"));
  EXPECT_EQ(capture(d, 1000ms).width(), 6);

  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { capture(d, 150ms); }), Errc::DeviceTimeout);
  EXPECT_GE(std::chrono::steady_clock::now() - t0, 150ms);

  std::ofstream(dir / "cam" / "c.png") << "not a png";
  EXPECT_EQ(code_of([&] { capture(d, 500ms); }), Errc::DecodeError);
}

TEST(Capture, ExternalCommand) {
  TempDir dir;
  const RasterImage img = testing::solid_image(5, 7, {10, 20, 30}, 200);
  write_image(dir / "src image.png", img);
  const std::string src = (dir / "src image.png").string();

  const RasterImage got = capture(command("ext", "cp '" + src + "' {OUT}"), 5000ms);
  EXPECT_EQ(got, img);

  try {
    capture(command("ext", "echo lamp failure >&2; exit 3 # {OUT}"), 5000ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DeviceTimeout);
    EXPECT_NE(std::string(e.what()).find("lamp failure"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { capture(command("ext", "true {OUT}"), 5000ms); }), Errc::DeviceTimeout);

  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { capture(command("ext", "sleep 10; cp x {OUT}"), 200ms); }),
            Errc::DeviceTimeout);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 3s);
}

class ControllerTest : public ::testing::Test {
 protected:
  TempDir dir;
  FakeClock clock;
  Store store{dir / "store", testing::fast_store_options(clock)};
  Service service{store, AnalyzerRegistry::with_builtins()};
  Actor pat;
  RasterImage foot = testing::synthetic_foot(testing::small_foot());

  void SetUp() override {
    fs::create_directories(dir / "cam");
    pat = Actor::from_user(
        service.add_user(Actor::local_operator(), "pat", "Pat", Role::patient, "pw"));
    service.add_user(Actor::local_operator(), "doc", "Doc", Role::clinician, "pw");
  }

  std::vector<DeviceDescriptor> devices() { return {simulated("cam", dir / "cam")}; }
};

TEST_F(ControllerTest, JobRunsToDoneAndObserverSeesLegalOrder) {
  std::mutex mu;
  std::map<std::string, std::vector<JobState>> seen;
  ControllerOptions o;
  o.observer = [&](const Job& j) {
    std::lock_guard g(mu);
    seen[j.job_id].push_back(j.state);
  };
  write_image(dir / "cam" / "0001.png", foot);
  Controller c(service, devices(), o);
  const std::string id = c.enqueue(pat, {"pat", Foot::left, "cam"});
  ASSERT_TRUE(c.wait_idle(20s));
  const Job j = c.poll(pat, id);
  EXPECT_EQ(j.state, JobState::done) << j.error;
  EXPECT_FALSE(j.scan_id.empty());
  EXPECT_EQ(store.load_scan(j.scan_id).patient_id, "pat");
  EXPECT_EQ(seen[id], (std::vector<JobState>{JobState::pending, JobState::capturing,
                                             JobState::processing, JobState::done}));
  EXPECT_EQ(store.load_job(id)->state, JobState::done);
}

TEST_F(ControllerTest, FailuresCarryErrorText) {
  ControllerOptions o;
  o.capture_timeout = 100ms;
  Controller c(service, devices(), o);
  const std::string id = c.enqueue(pat, {"pat", Foot::left, "cam"});
  ASSERT_TRUE(c.wait_idle(10s));
  const Job j = c.job(id);
  EXPECT_EQ(j.state, JobState::failed);
  EXPECT_EQ(j.error.rfind("DeviceTimeout:", 0), 0u) << j.error;

  write_image(dir / "cam" / "blank.png", testing::solid_image(64, 64, {80, 80, 80}));
  const std::string id2 = c.enqueue(pat, {"pat", Foot::left, "cam"});
  ASSERT_TRUE(c.wait_idle(10s));
  EXPECT_EQ(c.job(id2).error.rfind("EmptyForeground:", 0), 0u) << c.job(id2).error;
}

TEST_F(ControllerTest, EnqueueAndPollChecks) {
  Controller c(service, devices());
  const Actor doc = Actor::from_user(*store.find_user("doc"));
  EXPECT_EQ(code_of([&] { c.enqueue(pat, {"pat", Foot::left, "nope"}); }), Errc::UnknownDevice);
  EXPECT_EQ(code_of([&] { c.enqueue(doc, {"pat", Foot::left, "cam"}); }), Errc::Unauthorized);
  EXPECT_EQ(code_of([&] { c.enqueue(pat, {"doc", Foot::left, "cam"}); }), Errc::Unauthorized);
  EXPECT_EQ(code_of([&] { c.poll(pat, "job-missing"); }), Errc::UnknownJob);
  const std::string id = c.enqueue(pat, {"pat", Foot::left, "cam"});
  EXPECT_EQ(code_of([&] { c.poll(doc, id); }), Errc::Unauthorized);
  service.grant(pat, "pat", "doc");
  EXPECT_EQ(c.poll(doc, id).job_id, id);
  c.shutdown();
}

TEST_F(ControllerTest, RecoveryFailsInterruptedAndRequeuesPending) {
  auto job = [&](const std::string& id, JobState s, const std::string& dev) {
    Job j;
    j.job_id = id;
    j.patient_id = "pat";
    j.device_id = dev;
    j.requested_by = "pat";
    j.state = s;
    j.times.at["pending"] = 100;
    if (s != JobState::pending) j.times.at["capturing"] = 101;
    if (s == JobState::processing) j.times.at["processing"] = 102;
    store.save_job(j);
  };
  job("job-a", JobState::capturing, "cam");
  job("job-b", JobState::processing, "cam");
  job("job-c", JobState::pending, "cam");
  job("job-d", JobState::pending, "gone");
  job("job-e", JobState::done, "cam");
  write_image(dir / "cam" / "x.png", foot);

  Controller c(service, devices());
  ASSERT_TRUE(c.wait_idle(20s));
  EXPECT_EQ(c.job("job-a").state, JobState::failed);
  EXPECT_EQ(c.job("job-a").error, "interrupted");
  EXPECT_EQ(c.job("job-b").error, "interrupted");
  EXPECT_EQ(c.job("job-c").state, JobState::done) << c.job("job-c").error;
  EXPECT_EQ(c.job("job-d").state, JobState::failed);
  EXPECT_EQ(c.job("job-e").state, JobState::done);
  EXPECT_EQ(store.load_job("job-a")->state, JobState::failed);
}

TEST_F(ControllerTest, ShutdownLeavesInFlightJobsForRecovery) {
  std::string id;
  {
    Controller c(service, devices());
    id = c.enqueue(pat, {"pat", Foot::left, "cam"});
    std::this_thread::sleep_for(100ms);  // worker is now waiting on the empty device
    c.shutdown();
    EXPECT_EQ(c.job(id).state, JobState::capturing);
  }
  Controller again(service, devices());
  EXPECT_EQ(again.job(id).state, JobState::failed);
  EXPECT_EQ(again.job(id).error, "interrupted");
}

TEST(ControllerCrash, PersistenceFailureHaltsAndRecoveryMarksInterrupted) {
  TempDir dir;
  FakeClock clock;
  fs::create_directories(dir / "cam");
  write_image(dir / "cam" / "a.png", testing::synthetic_foot(testing::small_foot()));
  std::atomic<bool> armed{false};
  StoreOptions opts = testing::fast_store_options(clock);
  // Dies on the first scan file, after the job reached processing.
  opts.fault_hook = [&](const WritePoint& w) {
    if (armed && w.path.string().find("/scans/") != std::string::npos) {
      return FaultAction::crash_before;
    }
    return FaultAction::proceed;
  };
  std::string id;
  {
    Store store(dir / "store", opts);
    Service service(store, AnalyzerRegistry::with_builtins());
    const Actor pat = Actor::from_user(
        service.add_user(Actor::local_operator(), "pat", "Pat", Role::patient, "pw"));
    armed = true;
    Controller c(service, {simulated("cam", dir / "cam")});
    id = c.enqueue(pat, {"pat", Foot::left, "cam"});
    ASSERT_TRUE(c.wait_idle(20s));
    EXPECT_TRUE(c.halted());
    EXPECT_EQ(c.job(id).state, JobState::processing);
    EXPECT_THROW(c.enqueue(pat, {"pat", Foot::left, "cam"}), Error);
  }
  Store store(dir / "store", testing::fast_store_options(clock));
  Service service(store, AnalyzerRegistry::with_builtins());
  Controller again(service, {simulated("cam", dir / "cam")});
  EXPECT_EQ(again.job(id).state, JobState::failed);
  EXPECT_EQ(again.job(id).error, "interrupted");
  EXPECT_TRUE(store.list_scans("pat").empty());
}

}  // namespace
}  // namespace podo
