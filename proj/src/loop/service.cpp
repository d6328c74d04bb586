#include "plarseg/loop/service.hpp"

#include <httplib.h>

namespace plarseg::loop {

using nlohmann::json;

struct AnnotationService::Impl {
  httplib::Server server;
};

namespace {

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

int http_status(SubmitStatus s) {
  switch (s) {
    case SubmitStatus::OK: return 200;
    case SubmitStatus::CONFLICT: return 409;
    case SubmitStatus::INVALID: return 422;
    case SubmitStatus::NOT_FOUND: return 404;
  }
  return 500;
}

}  // namespace

AnnotationService::AnnotationService(AnnotationHub& hub) : impl_(std::make_unique<Impl>()), hub_(&hub) {
  auto& srv = impl_->server;

  srv.Get("/api/queue", [this](const httplib::Request& req, httplib::Response& res) {
    std::size_t limit = 0;
    if (req.has_param("limit")) {
      try {
        const long v = std::stol(req.get_param_value("limit"));
        if (v < 0) throw std::invalid_argument("negative");
        limit = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        reply_json(res, 400, {{"error", "limit must be a non-negative integer"}});
        return;
      }
    }
    json out = json::array();
    for (const auto& item : hub_->queue(limit)) {
      json px = json::array();
      for (const auto& p : item.pixels) px.push_back({p.r, p.c});
      out.push_back({{"item_id", item.id},
                     {"image_id", item.image_id},
                     {"pixels", px},
                     {"priority", item.priority},
                     {"crop_url", "/api/image/" + item.image_id}});
    }
    reply_json(res, 200, out);
  });

  srv.Get(R"(/api/image/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto png = hub_->render_png(req.matches[1]);
    if (!png) {
      reply_json(res, 404, {{"error", "unknown image"}});
      return;
    }
    res.status = 200;
    res.set_content(*png, "image/png");
  });

  srv.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
    std::string image_id;
    std::vector<PixelLabel> labels;
    try {
      const json body = json::parse(req.body);
      image_id = body.at("image_id").get<std::string>();
      for (const auto& l : body.at("labels"))
        labels.push_back({l.at("r").get<int>(), l.at("c").get<int>(), l.at("class").get<int>()});
    } catch (const std::exception& e) {
      reply_json(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
      return;
    }
    const SubmitResult r = hub_->submit(image_id, labels);
    json conflicts = json::array();
    for (const auto& p : r.conflicts) conflicts.push_back({p.r, p.c});
    json body{{"accepted", r.accepted}, {"billed", r.billed}, {"remaining_budget", r.remaining_budget},
              {"conflicts", conflicts}};
    if (!r.error.empty()) body["error"] = r.error;
    reply_json(res, http_status(r.status), body);
  });

  srv.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) { reply_json(res, 200, hub_->status()); });
}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    port_ = srv.bind_to_any_port(host);
  } else {
    if (!srv.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + host);
  thread_ = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return port_;
}

void AnnotationService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

void AnnotationService::wait() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace plarseg::loop
