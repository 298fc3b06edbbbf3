#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "podo/service.hpp"

namespace podo {

enum class JobEvent { enqueue, start, finish, fail };
std::string_view to_string(JobEvent e);

// enqueue creates a pending job; start begins capture; finish completes the
// current stage (capturing -> processing -> done); fail aborts any active
// job. Returns nullopt for every other combination.
std::optional<JobState> next_job_state(std::optional<JobState> current, JobEvent event);

bool is_terminal(JobState s);

struct DeviceDescriptor {
  enum class Kind { simulated, external_command };
  std::string device_id;
  Kind kind = Kind::simulated;
  std::filesystem::path dir;  // simulated
  std::string command;        // external_command, with the {OUT} token
  double dpi = kDefaultDpi;
};

// devices.json: [{"device_id", "kind", "dir" | "command", "dpi"}]. Relative
// directories resolve against `base`.
std::vector<DeviceDescriptor> parse_devices(const Json& doc, const std::filesystem::path& base = {});
std::vector<DeviceDescriptor> load_devices(const std::filesystem::path& path);

// Simulated: consumes the lexicographically smallest .png/.ppm/.pgm in the
// directory (renamed to *.consumed), polling until one appears.
// External command: runs the template through /bin/sh with {OUT} replaced
// by a fresh path, then decodes that file. Nonzero exit, a missing file or
// the deadline all raise DeviceTimeout; undecodable output raises
// DecodeError.
RasterImage capture(const DeviceDescriptor& device, std::chrono::milliseconds timeout,
                    const std::atomic<bool>* cancel = nullptr);

struct CaptureRequest {
  std::string patient_id;
  Foot foot = Foot::left;
  std::string device_id;
};

struct ControllerOptions {
  std::chrono::milliseconds capture_timeout{60000};
  int processing_workers = 2;
  // Called after every state change while the job table is locked, so
  // observers see transitions in their true order.
  std::function<void(const Job&)> observer;
};

class Controller {
 public:
  // Recovers persisted jobs: capturing/processing become failed
  // ("interrupted"), pending ones are queued again.
  Controller(Service& service, std::vector<DeviceDescriptor> devices, ControllerOptions opts = {});
  ~Controller();
  Controller(const Controller&) = delete;
  Controller& operator=(const Controller&) = delete;

  std::string enqueue(const Actor& actor, const CaptureRequest& req);
  Job poll(const Actor& actor, const std::string& job_id);
  Job job(const std::string& job_id) const;
  std::vector<DeviceDescriptor> devices() const { return devices_; }

  // Blocks until no job is pending, capturing or processing, or the timeout
  // passes. Returns true when idle or halted.
  bool wait_idle(std::chrono::milliseconds timeout);
  void shutdown();
  // True once a worker failed to persist a job state and stopped the others.
  bool halted() const;

 private:
  struct Captured {
    std::string job_id;
    RasterImage image;
  };

  Job transition(const std::string& job_id, JobEvent event,
                 const std::function<void(Job&)>& edit = {});
  void device_loop(const std::string& device_id);
  void processing_loop();
  void guarded(const std::function<void()>& loop);
  const DeviceDescriptor& device(const std::string& id) const;

  Service& service_;
  std::vector<DeviceDescriptor> devices_;
  ControllerOptions opts_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, std::deque<std::string>> device_queues_;
  std::deque<Captured> processing_queue_;
  std::atomic<bool> stop_{false};
  bool halted_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace podo
