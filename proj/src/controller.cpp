#include "podo/controller.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>

#include "podo/crypto.hpp"
#include "podo/error.hpp"

namespace fs = std::filesystem;

namespace podo {

namespace {

constexpr auto kPollInterval = std::chrono::milliseconds(20);

// Thrown out of capture() when the controller is shutting down; the job is
// left in capturing and recovered as interrupted on the next start.
struct Cancelled {};

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_image_name(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

double sidecar_dpi(const fs::path& image, double fallback) {
  fs::path side = image;
  side += ".dpi";
  std::error_code ec;
  if (!fs::exists(side, ec)) return fallback;
  const Bytes b = read_file(side);
  try {
    const double v = std::stod(std::string(b.begin(), b.end()));
    return v > 0.0 ? v : fallback;
  } catch (const std::exception&) {
    return fallback;
  }
}

RasterImage decode_or_fail(const Bytes& bytes, double dpi) {
  try {
    return decode_image(bytes, dpi);
  } catch (const Error& e) {
    fail(Errc::DecodeError, std::string("captured file could not be decoded: ") + e.what());
  }
}

RasterImage capture_simulated(const DeviceDescriptor& d, std::chrono::milliseconds timeout,
                              const std::atomic<bool>* cancel) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    std::vector<fs::path> candidates;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(d.dir, ec)) {
      if (e.is_regular_file() && is_image_name(e.path())) candidates.push_back(e.path());
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    for (const fs::path& p : candidates) {
      fs::path consumed = p;
      consumed += ".consumed";
      // Another worker may race us for the same file; the rename decides.
      if (::rename(p.c_str(), consumed.c_str()) != 0) continue;
      const Bytes bytes = read_file(consumed);
      return decode_or_fail(bytes, sidecar_dpi(p, d.dpi));
    }
    if (cancel && cancel->load()) throw Cancelled{};
    if (std::chrono::steady_clock::now() >= deadline) {
      fail(Errc::DeviceTimeout, "no image appeared on device " + d.device_id);
    }
    std::this_thread::sleep_for(kPollInterval);
  }
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (const char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

RasterImage capture_command(const DeviceDescriptor& d, std::chrono::milliseconds timeout,
                            const std::atomic<bool>* cancel) {
  const fs::path out = fs::temp_directory_path() / ("podo-capture-" + to_hex(random_bytes(8)));
  std::string cmd = d.command;
  const std::string token = "{OUT}";
  for (std::size_t at; (at = cmd.find(token)) != std::string::npos;) {
    cmd.replace(at, token.size(), shell_quote(out.string()));
  }

  int err_pipe[2];
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) fail(Errc::Io, "cannot create pipe");
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(err_pipe[0]);
    ::close(err_pipe[1]);
    fail(Errc::Io, "cannot start capture command");
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(err_pipe[1], STDERR_FILENO);
    const int devnull = ::open("/dev/null", O_RDWR);
    if (devnull >= 0) {
      ::dup2(devnull, STDIN_FILENO);
      ::dup2(devnull, STDOUT_FILENO);
    }
    ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(err_pipe[1]);
  ::fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);

  std::string stderr_text;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  bool exited = false;
  bool timed_out = false;
  while (!exited) {
    pollfd pfd{err_pipe[0], POLLIN, 0};
    ::poll(&pfd, 1, static_cast<int>(kPollInterval.count()));
    char buf[4096];
    for (ssize_t n; (n = ::read(err_pipe[0], buf, sizeof buf)) > 0;) {
      if (stderr_text.size() < 16384) stderr_text.append(buf, static_cast<std::size_t>(n));
    }
    if (::waitpid(pid, &status, WNOHANG) == pid) {
      exited = true;
    } else if (std::chrono::steady_clock::now() >= deadline || (cancel && cancel->load())) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      timed_out = true;
      exited = true;
    }
  }
  char buf[4096];
  for (ssize_t n; (n = ::read(err_pipe[0], buf, sizeof buf)) > 0;) {
    if (stderr_text.size() < 16384) stderr_text.append(buf, static_cast<std::size_t>(n));
  }
  ::close(err_pipe[0]);
  while (!stderr_text.empty() && std::isspace(static_cast<unsigned char>(stderr_text.back()))) {
    stderr_text.pop_back();
  }

  std::error_code ec;
  if (timed_out) {
    fs::remove(out, ec);
    if (cancel && cancel->load()) throw Cancelled{};
    fail(Errc::DeviceTimeout, "capture command on device " + d.device_id + " timed out");
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    fs::remove(out, ec);
    fail(Errc::DeviceTimeout, "capture command on device " + d.device_id + " failed: " +
                                  (stderr_text.empty() ? "exit status " +
                                                             std::to_string(WEXITSTATUS(status))
                                                       : stderr_text));
  }
  if (!fs::exists(out)) {
    fail(Errc::DeviceTimeout, "capture command on device " + d.device_id + " produced no file");
  }
  const Bytes bytes = read_file(out);
  fs::remove(out, ec);
  return decode_or_fail(bytes, d.dpi);
}

}  // namespace

std::string_view to_string(JobEvent e) {
  switch (e) {
    case JobEvent::enqueue: return "enqueue";
    case JobEvent::start: return "start";
    case JobEvent::finish: return "finish";
    case JobEvent::fail: return "fail";
  }
  return "unknown";
}

std::optional<JobState> next_job_state(std::optional<JobState> current, JobEvent event) {
  if (!current) {
    if (event == JobEvent::enqueue) return JobState::pending;
    return std::nullopt;
  }
  switch (event) {
    case JobEvent::enqueue: return std::nullopt;
    case JobEvent::start:
      if (*current == JobState::pending) return JobState::capturing;
      return std::nullopt;
    case JobEvent::finish:
      if (*current == JobState::capturing) return JobState::processing;
      if (*current == JobState::processing) return JobState::done;
      return std::nullopt;
    case JobEvent::fail:
      if (is_terminal(*current)) return std::nullopt;
      return JobState::failed;
  }
  return std::nullopt;
}

bool is_terminal(JobState s) { return s == JobState::done || s == JobState::failed; }

std::vector<DeviceDescriptor> parse_devices(const Json& doc, const fs::path& base) {
  if (!doc.is_array()) fail(Errc::InvalidArgument, "devices file must hold a JSON array");
  std::vector<DeviceDescriptor> out;
  for (const Json& j : doc) {
    DeviceDescriptor d;
    try {
      d.device_id = j.at("device_id").get<std::string>();
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "simulated") {
        d.kind = DeviceDescriptor::Kind::simulated;
        d.dir = j.at("dir").get<std::string>();
        if (d.dir.is_relative() && !base.empty()) d.dir = base / d.dir;
      } else if (kind == "external_command") {
        d.kind = DeviceDescriptor::Kind::external_command;
        d.command = j.at("command").get<std::string>();
        if (d.command.find("{OUT}") == std::string::npos) {
          fail(Errc::InvalidArgument, "device " + d.device_id + ": command lacks {OUT}");
        }
      } else {
        fail(Errc::InvalidArgument, "unknown device kind: " + kind);
      }
      if (j.contains("dpi")) d.dpi = j["dpi"].get<double>();
    } catch (const Json::exception& e) {
      fail(Errc::InvalidArgument, std::string("malformed device entry: ") + e.what());
    }
    require_valid_id(d.device_id, "device id");
    if (!(d.dpi > 0.0)) fail(Errc::InvalidArgument, "device dpi must be positive");
    if (d.kind == DeviceDescriptor::Kind::simulated && !fs::is_directory(d.dir)) {
      fail(Errc::InvalidArgument, "device " + d.device_id + ": directory does not exist");
    }
    for (const auto& prev : out) {
      if (prev.device_id == d.device_id) {
        fail(Errc::InvalidArgument, "duplicate device id: " + d.device_id);
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<DeviceDescriptor> load_devices(const fs::path& path) {
  const Bytes b = read_file(path);
  Json doc;
  try {
    doc = Json::parse(b.begin(), b.end());
  } catch (const Json::exception&) {
    fail(Errc::InvalidArgument, "devices file is not valid JSON");
  }
  return parse_devices(doc, path.parent_path());
}

RasterImage capture(const DeviceDescriptor& device, std::chrono::milliseconds timeout,
                    const std::atomic<bool>* cancel) {
  if (device.kind == DeviceDescriptor::Kind::simulated) {
    return capture_simulated(device, timeout, cancel);
  }
  return capture_command(device, timeout, cancel);
}

Controller::Controller(Service& service, std::vector<DeviceDescriptor> devices,
                       ControllerOptions opts)
    : service_(service), devices_(std::move(devices)), opts_(std::move(opts)) {
  for (const auto& d : devices_) device_queues_[d.device_id];
  for (Job& job : service_.store().jobs()) jobs_[job.job_id] = job;

  for (auto& [id, job] : jobs_) {
    if (job.state == JobState::capturing || job.state == JobState::processing) {
      transition(id, JobEvent::fail, [](Job& j) { j.error = "interrupted"; });
    } else if (job.state == JobState::pending) {
      if (device_queues_.count(job.device_id)) {
        device_queues_[job.device_id].push_back(id);
      } else {
        transition(id, JobEvent::fail, [](Job& j) { j.error = "UnknownDevice: device removed"; });
      }
    }
  }
  // Recovered pending jobs keep their original FIFO order.
  for (auto& [dev, q] : device_queues_) {
    std::stable_sort(q.begin(), q.end(), [this](const std::string& a, const std::string& b) {
      return jobs_.at(a).times.at.at("pending") < jobs_.at(b).times.at.at("pending");
    });
  }

  for (const auto& d : devices_) {
    threads_.emplace_back([this, id = d.device_id] { guarded([&] { device_loop(id); }); });
  }
  for (int i = 0; i < std::max(1, opts_.processing_workers); ++i) {
    threads_.emplace_back([this] { guarded([&] { processing_loop(); }); });
  }
}

Controller::~Controller() { shutdown(); }

void Controller::shutdown() {
  {
    std::lock_guard g(mu_);
    if (stop_.exchange(true)) {
      // Already stopping; fall through to join any remaining threads.
    }
  }
  cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

// A job state that cannot be persisted stops every worker, as a crash
// would. Whatever is in flight is settled by recovery on the next start.
void Controller::guarded(const std::function<void()>& loop) {
  try {
    loop();
  } catch (...) {
    {
      std::lock_guard g(mu_);
      stop_ = true;
      halted_ = true;
    }
    cv_.notify_all();
    idle_cv_.notify_all();
  }
}

const DeviceDescriptor& Controller::device(const std::string& id) const {
  for (const auto& d : devices_) {
    if (d.device_id == id) return d;
  }
  fail(Errc::UnknownDevice, "unknown device");
}

Job Controller::transition(const std::string& job_id, JobEvent event,
                           const std::function<void(Job&)>& edit) {
  // Caller holds mu_ except during construction, where no threads exist yet.
  Job& job = jobs_.at(job_id);
  const auto next = next_job_state(job.state, event);
  if (!next) {
    fail(Errc::IllegalTransition, "job " + job_id + " cannot " + std::string(to_string(event)) +
                                      " from " + std::string(to_string(job.state)));
  }
  Job updated = job;
  updated.state = *next;
  Timestamp t = service_.store().now();
  for (const auto& [_, at] : updated.times.at) t = std::max(t, at);
  updated.times.at[std::string(to_string(*next))] = t;
  if (edit) edit(updated);
  service_.store().save_job(updated);
  job = updated;
  if (opts_.observer) opts_.observer(job);
  if (is_terminal(job.state)) idle_cv_.notify_all();
  return job;
}

std::string Controller::enqueue(const Actor& actor, const CaptureRequest& req) {
  require(service_.store(), actor, req.patient_id, Action::write);
  if (!service_.store().patient_exists(req.patient_id)) fail(Errc::NotFound, "unknown patient");
  device(req.device_id);
  Job job;
  job.job_id = service_.store().new_id("job");
  job.patient_id = req.patient_id;
  job.foot = req.foot;
  job.device_id = req.device_id;
  job.requested_by = actor.user_id;
  {
    std::lock_guard g(mu_);
    if (stop_) fail(Errc::Io, "controller is shutting down");
    const auto state = next_job_state(std::nullopt, JobEvent::enqueue);
    job.state = *state;
    job.times.at["pending"] = service_.store().now();
    service_.store().save_job(job);
    jobs_[job.job_id] = job;
    if (opts_.observer) opts_.observer(job);
    device_queues_[req.device_id].push_back(job.job_id);
  }
  cv_.notify_all();
  return job.job_id;
}

Job Controller::job(const std::string& job_id) const {
  std::lock_guard g(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) fail(Errc::UnknownJob, "unknown job");
  return it->second;
}

Job Controller::poll(const Actor& actor, const std::string& job_id) {
  const Job j = job(job_id);
  require(service_.store(), actor, j.patient_id, Action::read);
  return j;
}

bool Controller::halted() const {
  std::lock_guard g(mu_);
  return halted_;
}

bool Controller::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  return idle_cv_.wait_for(lk, timeout, [this] {
    if (halted_) return true;
    return std::all_of(jobs_.begin(), jobs_.end(),
                       [](const auto& kv) { return is_terminal(kv.second.state); });
  });
}

void Controller::device_loop(const std::string& device_id) {
  const DeviceDescriptor dev = device(device_id);
  for (;;) {
    std::string job_id;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return stop_ || !device_queues_[device_id].empty(); });
      if (stop_) return;
      job_id = device_queues_[device_id].front();
      device_queues_[device_id].pop_front();
      transition(job_id, JobEvent::start);
    }
    try {
      RasterImage img = capture(dev, opts_.capture_timeout, &stop_);
      {
        std::lock_guard g(mu_);
        transition(job_id, JobEvent::finish);
        processing_queue_.push_back({job_id, std::move(img)});
      }
      cv_.notify_all();
    } catch (const Cancelled&) {
      return;
    } catch (const InjectedCrash&) {
      throw;
    } catch (const Error& e) {
      std::lock_guard g(mu_);
      const std::string text = std::string(errc_name(e.code())) + ": " + e.what();
      transition(job_id, JobEvent::fail, [&](Job& j) { j.error = text; });
    } catch (const std::exception& e) {
      std::lock_guard g(mu_);
      const std::string text = std::string("Io: ") + e.what();
      transition(job_id, JobEvent::fail, [&](Job& j) { j.error = text; });
    }
  }
}

void Controller::processing_loop() {
  for (;;) {
    std::optional<Captured> item;
    Job job;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return stop_ || !processing_queue_.empty(); });
      if (stop_) return;
      item.emplace(std::move(processing_queue_.front()));
      processing_queue_.pop_front();
      job = jobs_.at(item->job_id);
    }
    std::string scan_id;
    std::string error;
    try {
      const ScanRecord rec = service_.process_scan(job.patient_id, job.foot, item->image,
                                                   service_.store().now());
      scan_id = rec.scan_id;
    } catch (const InjectedCrash&) {
      throw;
    } catch (const Error& e) {
      error = std::string(errc_name(e.code())) + ": " + e.what();
    } catch (const std::exception& e) {
      error = std::string("Io: ") + e.what();
    }
    std::lock_guard g(mu_);
    if (error.empty()) {
      transition(item->job_id, JobEvent::finish, [&](Job& j) { j.scan_id = scan_id; });
    } else {
      transition(item->job_id, JobEvent::fail, [&](Job& j) { j.error = error; });
    }
  }
}

}  // namespace podo
