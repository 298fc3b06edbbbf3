#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "podo/controller.hpp"
#include "podo/error.hpp"

namespace podo {

struct ServerConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store;
  std::filesystem::path devices;
  std::int64_t token_ttl_s = 12 * 3600;
  ProcessingMode mode = ProcessingMode::store_and_process;
  std::int64_t capture_timeout_s = 60;
  int processing_workers = 2;
  std::filesystem::path static_dir;  // optional web client mount
};

// Unknown keys are rejected. Relative paths resolve against `base`.
ServerConfig parse_server_config(const Json& doc, const std::filesystem::path& base = {});
ServerConfig load_server_config(const std::filesystem::path& path);

struct ApiRequest {
  std::string method;
  std::string path;
  std::multimap<std::string, std::string> query;
  std::string authorization;  // raw Authorization header
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::string content_disposition;
};

int http_status(Errc code);

// Error envelope {"error": {"code", "message"}}.
ApiResponse error_response(Errc code, const std::string& message);

// Transport-independent router for the /api/v1 surface.
class Api {
 public:
  Api(Service& service, Controller& controller, Sessions& sessions);
  ApiResponse handle(const ApiRequest& req);

 private:
  ApiResponse dispatch(const ApiRequest& req);

  Service& service_;
  Controller& controller_;
  Sessions& sessions_;
};

// HTTP/1.1 front end for Api.
class HttpServer {
 public:
  explicit HttpServer(Api& api, std::filesystem::path static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds and returns the port (an ephemeral one when `port` is 0). Io on
  // failure.
  int bind(const std::string& host, int port);
  // Serves until stop(); blocks.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace podo
