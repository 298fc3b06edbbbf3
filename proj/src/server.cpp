#include "podo/server.hpp"

#include <httplib.h>

#include <charconv>
#include <initializer_list>
#include <set>

#include "podo/crypto.hpp"
#include "podo/error.hpp"
#include "podo/image_io.hpp"

namespace fs = std::filesystem;

namespace podo {

namespace {

const std::set<std::string> kConfigKeys = {"bind",  "port",
                                           "store", "devices",
                                           "token_ttl_s", "mode",
                                           "capture_timeout_s", "processing_workers",
                                           "static_dir"};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

ApiResponse json_response(int status, const Json& doc) {
  ApiResponse r;
  r.status = status;
  r.body = doc.dump();
  return r;
}

ApiResponse png_response(Bytes bytes) {
  ApiResponse r;
  r.content_type = "image/png";
  r.body.assign(bytes.begin(), bytes.end());
  return r;
}

// Strict body: an object holding every required key, no unknown keys.
Json parse_body(const std::string& body, std::initializer_list<const char*> required,
                std::initializer_list<const char*> optional = {}) {
  Json doc = Json::object();
  if (!body.empty()) {
    try {
      doc = Json::parse(body);
    } catch (const Json::exception&) {
      fail(Errc::InvalidArgument, "request body is not valid JSON");
    }
  }
  if (!doc.is_object()) fail(Errc::InvalidArgument, "request body must be a JSON object");
  std::set<std::string> known;
  for (const char* k : required) {
    known.insert(k);
    if (!doc.contains(k)) fail(Errc::InvalidArgument, std::string("missing field: ") + k);
  }
  for (const char* k : optional) known.insert(k);
  for (const auto& [k, _] : doc.items()) {
    if (!known.count(k)) fail(Errc::InvalidArgument, "unknown field: " + k);
  }
  return doc;
}

std::string str_field(const Json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end()) return {};
  if (!it->is_string()) fail(Errc::InvalidArgument, std::string(key) + " must be a string");
  return it->get<std::string>();
}

double num_field(const Json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_number()) {
    fail(Errc::InvalidArgument, std::string(key) + " must be a number");
  }
  return it->get<double>();
}

std::optional<Timestamp> time_field(const Json& doc, const char* key) {
  const std::string s = str_field(doc, key);
  if (s.empty()) return std::nullopt;
  return parse_utc(s);
}

std::optional<std::string> query(const ApiRequest& req, const std::string& key) {
  const auto it = req.query.find(key);
  if (it == req.query.end()) return std::nullopt;
  return it->second;
}

double parse_number(std::string_view s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    fail(Errc::InvalidArgument, "malformed number");
  }
  return v;
}

Point parse_point(const std::optional<std::string>& s) {
  if (!s) fail(Errc::InvalidArgument, "point parameters p1 and p2 are required");
  const auto comma = s->find(',');
  if (comma == std::string::npos) fail(Errc::InvalidArgument, "points are written x,y");
  return {parse_number(std::string_view(*s).substr(0, comma)),
          parse_number(std::string_view(*s).substr(comma + 1))};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string::npos ? path.size() : j;
    if (end > i) parts.push_back(path.substr(i, end - i));
    i = end + 1;
  }
  return parts;
}

std::string bearer(const std::string& header) {
  const std::string prefix = "Bearer ";
  if (header.size() <= prefix.size() || header.compare(0, prefix.size(), prefix) != 0) {
    fail(Errc::Unauthenticated, "missing bearer token");
  }
  return header.substr(prefix.size());
}

// Ids only ever use the id alphabet; anything else cannot exist.
const std::string& path_id(const std::string& s) {
  if (!valid_id(s)) fail(Errc::NotFound, "not found");
  return s;
}

Json job_json(const Job& j) {
  Json doc = to_json(j);
  if (j.state == JobState::done && !j.scan_id.empty()) {
    doc["thumbnail"] = "/api/v1/scans/" + j.scan_id + "/image?size=thumb";
    doc["analysis"] = "/api/v1/scans/" + j.scan_id + "/analysis";
  }
  return doc;
}

Json rois_json(const std::vector<Roi>& rois) {
  Json arr = Json::array();
  for (const Roi& r : rois) arr.push_back(to_json(r));
  return Json{{"rois", std::move(arr)}};
}

bool flag(const std::optional<std::string>& v, bool fallback) {
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  fail(Errc::InvalidArgument, "boolean parameters take true or false");
}

}  // namespace

ServerConfig parse_server_config(const Json& doc, const fs::path& base) {
  if (!doc.is_object()) fail(Errc::InvalidArgument, "config must be a JSON object");
  for (const auto& [k, _] : doc.items()) {
    if (!kConfigKeys.count(k)) fail(Errc::InvalidArgument, "unknown config key: " + k);
  }
  ServerConfig c;
  try {
    if (doc.contains("bind")) c.bind = doc["bind"].get<std::string>();
    if (doc.contains("port")) c.port = doc["port"].get<int>();
    if (doc.contains("store")) c.store = resolve(doc["store"].get<std::string>(), base);
    if (doc.contains("devices")) c.devices = resolve(doc["devices"].get<std::string>(), base);
    if (doc.contains("token_ttl_s")) c.token_ttl_s = doc["token_ttl_s"].get<std::int64_t>();
    if (doc.contains("mode")) c.mode = parse_mode(doc["mode"].get<std::string>());
    if (doc.contains("capture_timeout_s")) {
      c.capture_timeout_s = doc["capture_timeout_s"].get<std::int64_t>();
    }
    if (doc.contains("processing_workers")) {
      c.processing_workers = doc["processing_workers"].get<int>();
    }
    if (doc.contains("static_dir")) {
      c.static_dir = resolve(doc["static_dir"].get<std::string>(), base);
    }
  } catch (const Json::exception& e) {
    fail(Errc::InvalidArgument, std::string("malformed config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) fail(Errc::InvalidArgument, "port out of range");
  if (c.token_ttl_s <= 0) fail(Errc::InvalidArgument, "token_ttl_s must be positive");
  if (c.capture_timeout_s <= 0) fail(Errc::InvalidArgument, "capture_timeout_s must be positive");
  if (c.processing_workers < 1) fail(Errc::InvalidArgument, "processing_workers must be >= 1");
  return c;
}

ServerConfig load_server_config(const fs::path& path) {
  const Bytes b = read_file(path);
  Json doc;
  try {
    doc = Json::parse(b.begin(), b.end());
  } catch (const Json::exception&) {
    fail(Errc::InvalidArgument, "config file is not valid JSON");
  }
  return parse_server_config(doc, path.parent_path());
}

int http_status(Errc code) {
  switch (code) {
    case Errc::Unauthenticated:
    case Errc::BadCredentials:
      return 401;
    case Errc::Unauthorized:
      return 403;
    case Errc::NotFound:
    case Errc::UnknownJob:
    case Errc::UnknownDevice:
      return 404;
    case Errc::IllegalTransition:
    case Errc::AlreadyExists:
    case Errc::UnregisteredScan:
      return 409;
    case Errc::DeviceTimeout:
      return 504;
    case Errc::StorageFull:
      return 507;
    case Errc::CorruptRecord:
    case Errc::Io:
      return 500;
    default:
      return 400;
  }
}

ApiResponse error_response(Errc code, const std::string& message) {
  // Denials and lookups never echo server-side detail, which could name
  // another patient's records.
  std::string text = message;
  switch (http_status(code)) {
    case 401: text = code == Errc::BadCredentials ? "invalid credentials" : "authentication required"; break;
    case 403: text = "not permitted"; break;
    case 404: text = "not found"; break;
    case 500: text = "internal error"; break;
    default: break;
  }
  return json_response(http_status(code),
                       Json{{"error", {{"code", errc_name(code)}, {"message", text}}}});
}

Api::Api(Service& service, Controller& controller, Sessions& sessions)
    : service_(service), controller_(controller), sessions_(sessions) {}

ApiResponse Api::handle(const ApiRequest& req) {
  try {
    return dispatch(req);
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_response(Errc::Io, e.what());
  }
}

ApiResponse Api::dispatch(const ApiRequest& req) {
  const std::vector<std::string> p = split_path(req.path);
  if (p.size() < 3 || p[0] != "api" || p[1] != "v1") fail(Errc::NotFound, "no such endpoint");
  const std::string& m = req.method;
  const std::size_t n = p.size();
  auto is = [&](std::initializer_list<const char*> shape) {
    if (shape.size() != n - 2) return false;
    std::size_t i = 2;
    for (const char* s : shape) {
      if (std::string_view(s) != "*" && p[i] != s) return false;
      ++i;
    }
    return true;
  };

  if (m == "POST" && is({"auth", "login"})) {
    const Json b = parse_body(req.body, {"user_id", "secret"});
    const std::string token = sessions_.login(str_field(b, "user_id"), str_field(b, "secret"));
    const Actor a = sessions_.resolve(token);
    Json out{{"token", token}, {"user_id", a.user_id}, {"role", to_string(a.role)}};
    out["patient_id"] = a.patient_id.empty() ? Json(nullptr) : Json(a.patient_id);
    return json_response(200, out);
  }

  const std::string token = bearer(req.authorization);
  const Actor actor = sessions_.resolve(token);

  if (m == "POST" && is({"auth", "logout"})) {
    parse_body(req.body, {});
    sessions_.logout(token);
    return json_response(200, Json::object());
  }
  if (m == "GET" && is({"analyzers"})) {
    Json arr = Json::array();
    for (const auto& a : service_.registry().analyzers()) {
      arr.push_back({{"name", a.name}, {"version", a.version}});
    }
    return json_response(200, Json{{"analyzers", std::move(arr)}});
  }
  if (m == "GET" && is({"devices"})) {
    Json arr = Json::array();
    for (const auto& d : controller_.devices()) {
      arr.push_back({{"device_id", d.device_id},
                     {"kind", d.kind == DeviceDescriptor::Kind::simulated ? "simulated"
                                                                          : "external_command"},
                     {"dpi", d.dpi}});
    }
    return json_response(200, Json{{"devices", std::move(arr)}});
  }
  if (m == "POST" && is({"scan"})) {
    const Json b = parse_body(req.body, {"patient_id", "foot", "device_id"});
    CaptureRequest cr;
    cr.patient_id = str_field(b, "patient_id");
    cr.foot = parse_foot(str_field(b, "foot"));
    cr.device_id = str_field(b, "device_id");
    if (!valid_id(cr.patient_id)) fail(Errc::NotFound, "unknown patient");
    return json_response(202, Json{{"job_id", controller_.enqueue(actor, cr)}});
  }
  if (m == "GET" && is({"jobs", "*"})) {
    return json_response(200, job_json(controller_.poll(actor, path_id(p[3]))));
  }
  if (m == "GET" && is({"patients"})) {
    return json_response(200, Json{{"patients", service_.patients(actor)}});
  }
  if (m == "GET" && is({"patients", "*", "scans"})) {
    std::optional<Foot> foot;
    if (const auto f = query(req, "foot"); f && !f->empty()) foot = parse_foot(*f);
    Json arr = Json::array();
    for (const ScanRecord& s : service_.list_scans(actor, path_id(p[3]), foot)) {
      arr.push_back(to_json(s));
    }
    return json_response(200, Json{{"scans", std::move(arr)}});
  }
  if (m == "GET" && is({"scans", "*"})) {
    return json_response(200, to_json(service_.scan(actor, path_id(p[3]))));
  }
  if (m == "GET" && is({"scans", "*", "image"})) {
    const ImageSize size = parse_image_size(query(req, "size").value_or("full"));
    return png_response(service_.scan_image(actor, path_id(p[3]), size));
  }
  if (m == "GET" && is({"scans", "*", "analysis"})) {
    return json_response(200, service_.analysis(actor, path_id(p[3])));
  }
  if (m == "GET" && is({"scans", "*", "transform"})) {
    return json_response(200, service_.transform(actor, path_id(p[3])));
  }
  if (m == "GET" && is({"measure"})) {
    const auto scan = query(req, "scan");
    if (!scan) fail(Errc::InvalidArgument, "scan parameter is required");
    const Point p1 = parse_point(query(req, "p1"));
    const Point p2 = parse_point(query(req, "p2"));
    return json_response(200, Json{{"mm", service_.measure(actor, path_id(*scan), p1, p2)}});
  }
  if (is({"patients", "*", "rois"})) {
    const std::string& pid = path_id(p[3]);
    if (m == "GET") return json_response(200, rois_json(service_.list_rois(actor, pid)));
    if (m == "POST") {
      const Json b = parse_body(req.body, {"foot", "rect"}, {"label"});
      const Json& r = b["rect"];
      if (!r.is_object() || r.size() != 4) {
        fail(Errc::InvalidArgument, "rect must be {x, y, w, h}");
      }
      const Rect rect{num_field(r, "x"), num_field(r, "y"), num_field(r, "w"), num_field(r, "h")};
      const Roi roi = service_.create_roi(actor, pid, parse_foot(str_field(b, "foot")), rect,
                                          str_field(b, "label"));
      return json_response(201, to_json(roi));
    }
  }
  if (is({"patients", "*", "grants"}) && m == "GET") {
    Json arr = Json::array();
    for (const AccessGrant& g : service_.grants(actor, path_id(p[3]))) arr.push_back(to_json(g));
    return json_response(200, Json{{"grants", std::move(arr)}});
  }
  if (is({"patients", "*", "grants", "*"})) {
    const std::string& pid = path_id(p[3]);
    const std::string& cid = path_id(p[5]);
    if (m == "POST") {
      parse_body(req.body, {});
      return json_response(200, to_json(service_.grant(actor, pid, cid)));
    }
    if (m == "DELETE") return json_response(200, to_json(service_.revoke(actor, pid, cid)));
  }
  if (m == "GET" && is({"rois", "*"})) {
    return json_response(200, to_json(service_.roi(actor, path_id(p[3]))));
  }
  if (m == "POST" && is({"rois", "*", "approve"})) {
    parse_body(req.body, {});
    return json_response(200, to_json(service_.approve_roi(actor, path_id(p[3]))));
  }
  if (m == "POST" && is({"rois", "*", "delete"})) {
    parse_body(req.body, {});
    return json_response(200, to_json(service_.delete_roi(actor, path_id(p[3]))));
  }
  if (m == "GET" && is({"rois", "*", "timeline"})) {
    const std::string& rid = path_id(p[3]);
    TimelineOptions opts;
    opts.direction = parse_direction(query(req, "direction").value_or("forward"));
    if (const auto f = query(req, "from")) opts.from = parse_utc(*f);
    if (const auto t = query(req, "to")) opts.to = parse_utc(*t);
    const std::string frame = query(req, "frame").value_or("canonical");
    if (frame != "canonical" && frame != "raw") {
      fail(Errc::InvalidArgument, "frame must be canonical or raw");
    }
    opts.raw_frame = frame == "raw";
    opts.render_crops = flag(query(req, "crops"), true);
    const Timeline tl = service_.timeline(actor, rid, opts);
    Json entries = Json::array();
    for (const TimelineEntry& e : tl.entries) {
      Json j = to_json(e);
      if (e.crop) j["crop_png_base64"] = base64_encode(encode_png(*e.crop));
      entries.push_back(std::move(j));
    }
    return json_response(200, Json{{"roi_id", rid},
                                   {"direction", query(req, "direction").value_or("forward")},
                                   {"skipped", tl.skipped},
                                   {"entries", std::move(entries)}});
  }
  if (is({"rois", "*", "notes"})) {
    const std::string& rid = path_id(p[3]);
    if (m == "GET") {
      Json arr = Json::array();
      for (const RoiNote& note : service_.notes(actor, rid)) arr.push_back(to_json(note));
      return json_response(200, Json{{"notes", std::move(arr)}});
    }
    if (m == "POST") {
      const Json b = parse_body(req.body, {"text"});
      return json_response(201, to_json(service_.add_note(actor, rid, str_field(b, "text"))));
    }
  }
  if (m == "POST" && is({"rois", "*", "export"})) {
    const Json b = parse_body(req.body, {"recipient"}, {"message", "from", "to"});
    ExportRequest er;
    er.recipient = str_field(b, "recipient");
    er.message = str_field(b, "message");
    er.from = time_field(b, "from");
    er.to = time_field(b, "to");
    const ExportResult r = service_.export_roi(actor, path_id(p[3]), er);
    return json_response(201, Json{{"export_id", r.export_id},
                                   {"sha256", r.sha256},
                                   {"size", r.size},
                                   {"download", "/api/v1/exports/" + r.export_id}});
  }
  if (m == "GET" && is({"exports", "*"})) {
    const std::string& id = path_id(p[3]);
    const Bytes zip = service_.read_export(actor, id);
    ApiResponse r;
    r.content_type = "application/zip";
    r.content_disposition = "attachment; filename=\"" + id + ".zip\"";
    r.body.assign(zip.begin(), zip.end());
    return r;
  }
  fail(Errc::NotFound, "no such endpoint");
}

struct HttpServer::Impl {
  Api& api;
  httplib::Server server;
  int port = -1;
};

HttpServer::HttpServer(Api& api, fs::path static_dir) : impl_(new Impl{api, {}, -1}) {
  auto handler = [this](const httplib::Request& hreq, httplib::Response& hres) {
    ApiRequest req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    req.authorization = hreq.get_header_value("Authorization");
    req.body = hreq.body;
    const ApiResponse r = impl_->api.handle(req);
    hres.status = r.status;
    if (!r.content_disposition.empty()) {
      hres.set_header("Content-Disposition", r.content_disposition);
    }
    hres.set_content(r.body, r.content_type);
  };
  auto& s = impl_->server;
  s.set_payload_max_length(64u << 20);
  if (!static_dir.empty()) s.set_mount_point("/", static_dir.string());
  s.Get(".*", handler);
  s.Post(".*", handler);
  s.Delete(".*", handler);
  s.Put(".*", handler);
  s.Patch(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    impl_->port = s.bind_to_any_port(host);
  } else {
    impl_->port = s.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->port < 0) fail(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
  return impl_->port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace podo
