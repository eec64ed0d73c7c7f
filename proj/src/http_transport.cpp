#include <httplib.h>

#include "vla/error.hpp"
#include "vla/gateway.hpp"

namespace vla {

namespace {

class HttplibPoster : public HttpPoster {
 public:
  explicit HttplibPoster(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url '" + base_url + "' lacks a scheme");
    auto path_start = base_url.find('/', scheme_end + 3);
    origin_ = base_url.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  HttpResult post(const std::string& path, const std::string& body, const HttpHeaders& headers,
                  double timeout_s) override {
    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    auto res = cli.Post(prefix_ + path, h, body, content_type);
    HttpResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

 private:
  std::string origin_;
  std::string prefix_;
};

}  // namespace

std::unique_ptr<HttpPoster> make_http_poster(const std::string& base_url) {
  return std::make_unique<HttplibPoster>(base_url);
}

}  // namespace vla
