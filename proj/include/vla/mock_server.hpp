#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vla/coco_io.hpp"
#include "vla/oracle.hpp"
#include "vla/types.hpp"

namespace httplib {
class Server;
}

namespace vla {

/// Serves the oracle agents over the gateway's HTTP schemas:
///   POST /v1/chat/completions, POST /detect, POST /classify, GET /healthz.
/// The image a chat request is about comes from its `user` field ("<image_id>/review").
class MockServer {
 public:
  MockServer(AnnotationSet data, std::vector<Detection> detections, OracleConfig cfg);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds (port 0 picks a free one) and serves on a background thread. Returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks until stop() is called from elsewhere.
  void wait();
  void stop();
  std::string base_url() const;

  /// When set, requests must carry "Authorization: Bearer <key>" or get 401.
  void require_key(std::string key);

  /// The next `count` requests to `path` answer `status` with an error body. Status 0 means
  /// "hang for `delay_ms` then answer 200", which trips client read timeouts.
  void inject_failures(const std::string& path, int count, int status, int delay_ms = 0);
  /// Requests received per path, failed ones included.
  std::size_t request_count(const std::string& path) const;

  /// Canned body for /detect, replacing the oracle answer (fixture round-trip tests).
  void set_detect_body(std::string body);

 private:
  struct Fault {
    int remaining = 0;
    int status = 500;
    int delay_ms = 0;
  };

  bool take_fault(const std::string& path, Fault& out);
  const SceneRecord* scene(ImageId id) const;
  std::string handle_chat(const std::string& body, int& status);
  std::string handle_detect(const std::string& body, int& status);
  std::string handle_classify(const std::string& body, int& status);

  AnnotationSet data_;
  std::map<ImageId, std::size_t> scene_index_;
  std::map<ImageId, std::vector<Detection>> dets_;
  OracleConfig cfg_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::string key_;
  std::string detect_body_;

  mutable std::mutex mutex_;
  std::map<std::string, Fault> faults_;
  std::map<std::string, std::size_t> counts_;
};

}  // namespace vla
