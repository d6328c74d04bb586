#pragma once

#include <memory>
#include <string>
#include <thread>

#include "plarseg/loop/hub.hpp"

namespace plarseg::loop {

// HTTP JSON front end of an AnnotationHub:
//   GET  /api/queue?limit=n   -> [{image_id, pixels: [[r, c], ...], crop_url, priority}]
//   GET  /api/image/{id}      -> PNG with uncertainty overlay
//   POST /api/labels          {image_id, labels: [{r, c, class}]} -> {accepted, billed, remaining_budget}
//   GET  /api/status          -> {round, spent, total, miou_history, ...}
// The server runs on its own thread between start() and stop().
class AnnotationService {
 public:
  explicit AnnotationService(AnnotationHub& hub);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  // Binds and starts serving. Port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  // Blocks the calling thread until stop() is called from elsewhere.
  void wait();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  AnnotationHub* hub_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace plarseg::loop
