#include "cli.hpp"

#include <CLI11.hpp>
#include <signal.h>

#include <algorithm>
#include <iostream>
#include <optional>
#include <thread>

#include "podo/controller.hpp"
#include "podo/crypto.hpp"
#include "podo/error.hpp"
#include "podo/server.hpp"

namespace fs = std::filesystem;

namespace podo::cli {

namespace {

struct Common {
  std::string store;
  std::string as;
};

Actor actor_for(Store& store, const std::string& as) {
  if (as.empty()) return Actor::local_operator();
  const std::optional<User> u = store.find_user(as);
  if (!u) fail(Errc::NotFound, "unknown user: " + as);
  return Actor::from_user(*u);
}

Rect parse_rect(const std::string& s) {
  double v[4];
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const std::size_t end = i < 3 ? s.find(',', pos) : s.size();
    if (end == std::string::npos) fail(Errc::InvalidArgument, "rect is x,y,w,h");
    try {
      std::size_t used = 0;
      const std::string part = s.substr(pos, end - pos);
      v[i] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(Errc::InvalidArgument, "rect is x,y,w,h");
    }
    pos = end + 1;
  }
  return {v[0], v[1], v[2], v[3]};
}

std::optional<Timestamp> opt_time(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_utc(s);
}

Json user_summary(const User& u) {
  Json j = to_json(u);
  j.erase("credential");
  return j;
}

// Blocks until SIGINT or SIGTERM.
void wait_for_signal() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
}

int serve(const ServerConfig& cfg, std::ostream& out) {
  if (cfg.store.empty()) fail(Errc::InvalidArgument, "a store directory is required");
  std::vector<DeviceDescriptor> devices;
  if (!cfg.devices.empty()) devices = load_devices(cfg.devices);

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  fs::create_directories(cfg.store);
  Store store(cfg.store);
  ServiceOptions sopts;
  sopts.mode = cfg.mode;
  Service service(store, AnalyzerRegistry::with_builtins(), sopts);
  ControllerOptions copts;
  copts.capture_timeout = std::chrono::seconds(cfg.capture_timeout_s);
  copts.processing_workers = cfg.processing_workers;
  Controller controller(service, devices, copts);
  Sessions sessions(store, system_clock(), cfg.token_ttl_s);
  Api api(service, controller, sessions);
  HttpServer http(api, cfg.static_dir);
  const int port = http.bind(cfg.bind, cfg.port);
  out << Json{{"listening", cfg.bind}, {"port", port}}.dump() << std::endl;

  std::thread server([&] { http.listen(); });
  wait_for_signal();
  http.stop();
  server.join();
  controller.shutdown();
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"podo: capture, register, analyze and share foot scans"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common c;
  auto add_store = [&](CLI::App* sub, bool with_as = true) {
    sub->add_option("--store", c.store, "store directory")->required();
    if (with_as) sub->add_option("--as", c.as, "act as this user instead of the operator");
  };
  const std::vector<std::string> feet = {"left", "right"};

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP API");
  std::string config_path, bind, store_flag, devices_flag, mode_flag, static_dir;
  int port = -1, workers = -1;
  std::int64_t ttl = -1, capture_timeout = -1;
  serve_cmd->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);
  serve_cmd->add_option("--bind", bind);
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--store", store_flag);
  serve_cmd->add_option("--devices", devices_flag);
  serve_cmd->add_option("--token-ttl", ttl)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--mode", mode_flag)
      ->check(CLI::IsMember({"store-and-process", "storage-only"}));
  serve_cmd->add_option("--capture-timeout", capture_timeout)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--workers", workers)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--static-dir", static_dir);

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "run the full pipeline on an image file");
  add_store(ingest_cmd);
  std::string patient, foot, image, time_text, mode_text = "store-and-process";
  double dpi = 0.0;
  ingest_cmd->add_option("--patient", patient)->required();
  ingest_cmd->add_option("--foot", foot)->required()->check(CLI::IsMember(feet));
  ingest_cmd->add_option("--time", time_text, "capture time, YYYY-MM-DDTHH:MM:SSZ");
  ingest_cmd->add_option("--dpi", dpi, "override the image resolution")
      ->check(CLI::PositiveNumber);
  ingest_cmd->add_option("--mode", mode_text)
      ->check(CLI::IsMember({"store-and-process", "storage-only"}));
  ingest_cmd->add_option("image", image)->required()->check(CLI::ExistingFile);

  // register / analyze
  std::string scan_id;
  auto* register_cmd = app.add_subcommand("register", "re-run registration of a stored scan");
  add_store(register_cmd);
  register_cmd->add_option("--scan", scan_id)->required();
  auto* analyze_cmd = app.add_subcommand("analyze", "re-run the analyzers on a stored scan");
  add_store(analyze_cmd);
  analyze_cmd->add_option("--scan", scan_id)->required();

  auto* scans_cmd = app.add_subcommand("scans", "list a patient's scans");
  add_store(scans_cmd);
  std::string foot_filter;
  scans_cmd->add_option("--patient", patient)->required();
  scans_cmd->add_option("--foot", foot_filter)->check(CLI::IsMember(feet));

  // roi
  auto* roi_cmd = app.add_subcommand("roi", "regions of interest");
  roi_cmd->require_subcommand(1);
  std::string roi_id, rect_text, label, direction = "forward", frame = "canonical", from, to,
                                        crops_dir, text;
  auto* roi_list = roi_cmd->add_subcommand("list", "list a patient's ROIs");
  add_store(roi_list);
  roi_list->add_option("--patient", patient)->required();
  auto* roi_add = roi_cmd->add_subcommand("add", "create a proposed ROI in the canonical frame");
  add_store(roi_add);
  roi_add->add_option("--patient", patient)->required();
  roi_add->add_option("--foot", foot)->required()->check(CLI::IsMember(feet));
  roi_add->add_option("--rect", rect_text, "x,y,w,h")->required();
  roi_add->add_option("--label", label);
  auto* roi_approve = roi_cmd->add_subcommand("approve", "approve a proposed ROI");
  add_store(roi_approve);
  roi_approve->add_option("--roi", roi_id)->required();
  auto* roi_delete = roi_cmd->add_subcommand("delete", "delete an ROI");
  add_store(roi_delete);
  roi_delete->add_option("--roi", roi_id)->required();
  auto* roi_timeline = roi_cmd->add_subcommand("timeline", "ROI across registered scans");
  add_store(roi_timeline);
  roi_timeline->add_option("--roi", roi_id)->required();
  roi_timeline->add_option("--direction", direction)
      ->check(CLI::IsMember({"forward", "backward"}));
  roi_timeline->add_option("--frame", frame)->check(CLI::IsMember({"canonical", "raw"}));
  roi_timeline->add_option("--from", from);
  roi_timeline->add_option("--to", to);
  roi_timeline->add_option("--crops-dir", crops_dir, "write crop PNGs here");
  auto* roi_note = roi_cmd->add_subcommand("note", "append a note to an ROI");
  add_store(roi_note);
  roi_note->add_option("--roi", roi_id)->required();
  roi_note->add_option("--text", text)->required();
  auto* roi_notes = roi_cmd->add_subcommand("notes", "list an ROI's notes");
  add_store(roi_notes);
  roi_notes->add_option("--roi", roi_id)->required();

  // export
  auto* export_cmd = app.add_subcommand("export", "write an ROI export bundle");
  add_store(export_cmd);
  std::string out_path, recipient, message;
  export_cmd->add_option("--roi", roi_id)->required();
  export_cmd->add_option("--out", out_path)->required();
  export_cmd->add_option("--recipient", recipient, "granted clinician");
  export_cmd->add_option("--message", message, "stored as an ROI note first");
  export_cmd->add_option("--from", from);
  export_cmd->add_option("--to", to);

  // user
  auto* user_cmd = app.add_subcommand("user", "accounts and access grants");
  user_cmd->require_subcommand(1);
  std::string user_id, name, role, secret, clinician;
  int iterations = 0;
  auto* user_add = user_cmd->add_subcommand("add", "create a user");
  add_store(user_add, false);
  user_add->add_option("--id", user_id)->required();
  user_add->add_option("--name", name);
  user_add->add_option("--role", role)->required()->check(CLI::IsMember({"patient", "clinician"}));
  user_add->add_option("--secret", secret, "read from stdin when omitted");
  user_add->add_option("--iterations", iterations, "PBKDF2 iterations")
      ->check(CLI::Range(1000, 10000000));
  auto* user_grant = user_cmd->add_subcommand("grant", "grant a clinician access");
  add_store(user_grant);
  user_grant->add_option("--patient", patient)->required();
  user_grant->add_option("--clinician", clinician)->required();
  auto* user_revoke = user_cmd->add_subcommand("revoke", "revoke a clinician's access");
  add_store(user_revoke);
  user_revoke->add_option("--patient", patient)->required();
  user_revoke->add_option("--clinician", clinician)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "podo: " << e.what() << "\n";
    return 2;
  }

  try {
    if (serve_cmd->parsed()) {
      ServerConfig cfg;
      if (!config_path.empty()) cfg = load_server_config(config_path);
      if (!bind.empty()) cfg.bind = bind;
      if (port >= 0) cfg.port = port;
      if (!store_flag.empty()) cfg.store = store_flag;
      if (!devices_flag.empty()) cfg.devices = devices_flag;
      if (ttl > 0) cfg.token_ttl_s = ttl;
      if (!mode_flag.empty()) cfg.mode = parse_mode(mode_flag);
      if (capture_timeout > 0) cfg.capture_timeout_s = capture_timeout;
      if (workers > 0) cfg.processing_workers = workers;
      if (!static_dir.empty()) cfg.static_dir = static_dir;
      if (cfg.store.empty()) {
        err << "podo: serve needs --store or a config file naming one\n";
        return 2;
      }
      return serve(cfg, out);
    }

    StoreOptions sopts;
    if (iterations > 0) sopts.pbkdf2_iterations = iterations;
    fs::create_directories(c.store);
    Store store(c.store, sopts);
    ServiceOptions svc_opts;
    if (ingest_cmd->parsed()) svc_opts.mode = parse_mode(mode_text);
    Service service(store, AnalyzerRegistry::with_builtins(), svc_opts);
    const Actor actor = actor_for(store, c.as);

    if (ingest_cmd->parsed()) {
      RasterImage raw = read_image(image);
      if (dpi > 0.0) {
        raw = RasterImage(raw.width(), raw.height(), dpi,
                          std::vector<std::uint8_t>(raw.data().begin(), raw.data().end()));
      }
      const Timestamp t = time_text.empty() ? store.now() : parse_utc(time_text);
      const ScanRecord rec = service.ingest(actor, patient, parse_foot(foot), raw, t);
      out << to_json(rec).dump(2) << "\n";
    } else if (register_cmd->parsed()) {
      out << transform_json(service.reregister(actor, scan_id)).dump(2) << "\n";
    } else if (analyze_cmd->parsed()) {
      out << to_json(service.reanalyze(actor, scan_id)).dump(2) << "\n";
    } else if (scans_cmd->parsed()) {
      std::optional<Foot> f;
      if (!foot_filter.empty()) f = parse_foot(foot_filter);
      Json arr = Json::array();
      for (const ScanRecord& s : service.list_scans(actor, patient, f)) arr.push_back(to_json(s));
      out << Json{{"scans", std::move(arr)}}.dump(2) << "\n";
    } else if (roi_list->parsed()) {
      Json arr = Json::array();
      for (const Roi& r : service.list_rois(actor, patient)) arr.push_back(to_json(r));
      out << Json{{"rois", std::move(arr)}}.dump(2) << "\n";
    } else if (roi_add->parsed()) {
      const Roi r =
          service.create_roi(actor, patient, parse_foot(foot), parse_rect(rect_text), label);
      out << to_json(r).dump(2) << "\n";
    } else if (roi_approve->parsed()) {
      out << to_json(service.approve_roi(actor, roi_id)).dump(2) << "\n";
    } else if (roi_delete->parsed()) {
      out << to_json(service.delete_roi(actor, roi_id)).dump(2) << "\n";
    } else if (roi_timeline->parsed()) {
      TimelineOptions opts;
      opts.direction = parse_direction(direction);
      opts.raw_frame = frame == "raw";
      opts.render_crops = !crops_dir.empty();
      opts.from = opt_time(from);
      opts.to = opt_time(to);
      const Timeline tl = service.timeline(actor, roi_id, opts);
      Json entries = Json::array();
      for (const TimelineEntry& e : tl.entries) {
        Json j = to_json(e, !crops_dir.empty());
        if (e.crop) {
          fs::create_directories(crops_dir);
          write_file(fs::path(crops_dir) / crop_file_name(e), encode_png(*e.crop));
        }
        entries.push_back(std::move(j));
      }
      out << Json{{"roi_id", roi_id},
                  {"direction", direction},
                  {"skipped", tl.skipped},
                  {"entries", std::move(entries)}}
                 .dump(2)
          << "\n";
    } else if (roi_note->parsed()) {
      out << to_json(service.add_note(actor, roi_id, text)).dump(2) << "\n";
    } else if (roi_notes->parsed()) {
      Json arr = Json::array();
      for (const RoiNote& n : service.notes(actor, roi_id)) arr.push_back(to_json(n));
      out << Json{{"notes", std::move(arr)}}.dump(2) << "\n";
    } else if (export_cmd->parsed()) {
      ExportRequest req;
      req.recipient = recipient;
      req.message = message;
      req.from = opt_time(from);
      req.to = opt_time(to);
      const ExportResult r = service.export_roi(actor, roi_id, req);
      write_file(out_path, service.read_export(actor, r.export_id));
      out << Json{{"export_id", r.export_id},
                  {"sha256", r.sha256},
                  {"size", r.size},
                  {"path", out_path}}
                 .dump(2)
          << "\n";
    } else if (user_add->parsed()) {
      if (secret.empty() && !std::getline(std::cin, secret)) {
        err << "podo: no secret given\n";
        return 2;
      }
      const User u = service.add_user(actor, user_id, name.empty() ? user_id : name,
                                      parse_role(role), secret);
      out << user_summary(u).dump(2) << "\n";
    } else if (user_grant->parsed()) {
      out << to_json(service.grant(actor, patient, clinician)).dump(2) << "\n";
    } else if (user_revoke->parsed()) {
      out << to_json(service.revoke(actor, patient, clinician)).dump(2) << "\n";
    }
    return 0;
  } catch (const Error& e) {
    err << "podo: " << errc_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "podo: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace podo::cli
