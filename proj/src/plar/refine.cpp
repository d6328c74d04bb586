#include "plarseg/plar/refine.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "plarseg/plar/distance.hpp"

namespace plarseg::plar {

ManualReply DirectOracleChannel::submit(const ManualRequest& request) {
  const auto n = static_cast<std::int64_t>(request.pixels.size());
  if (n == 0) return {};
  const auto id = ledger_->reserve(n);
  if (!id) return {};
  loop::OracleResponse resp;
  try {
    resp = oracle_->query({request.image_id, request.pixels});
  } catch (const std::exception&) {
    resp.status = loop::OracleStatus::FAILED;
  }
  if (resp.status != loop::OracleStatus::ANSWERED || resp.classes.size() != request.pixels.size()) {
    ledger_->release(*id);
    ++failures_;
    return {};
  }
  const auto billed = std::count_if(resp.classes.begin(), resp.classes.end(), [](int c) { return c != loop::kSkip; });
  ledger_->commit(*id, billed, request.image_id, oracle_->kind());
  ledger_->release(*id);
  return {ManualStatus::ANSWERED, std::move(resp.classes)};
}

const char* decision_name(Decision d) {
  switch (d) {
    case Decision::AUTO: return "AUTO";
    case Decision::MANUAL_QUEUED: return "MANUAL_QUEUED";
    case Decision::KEPT_PSEUDO: return "KEPT_PSEUDO";
  }
  return "?";
}

std::size_t RefinementOutcome::count(Decision d) const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [d](const auto& c) { return c.decision == d; }));
}

namespace {

nlohmann::json finite_or_null(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double d : v) a.push_back(std::isfinite(d) ? nlohmann::json(d) : nlohmann::json(nullptr));
  return a;
}

}  // namespace

nlohmann::json to_json(const RefinementOutcome& o) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : o.cells) {
    cells.push_back({{"r", c.r},
                     {"c", c.c},
                     {"c_E", c.c_euclid},
                     {"c_M", c.c_maha},
                     {"decision", decision_name(c.decision)},
                     {"answered", c.answered},
                     {"E", finite_or_null(c.euclid)},
                     {"M", finite_or_null(c.maha)}});
  }
  return {{"image_id", o.image_id},
          {"grid", {o.grid_height, o.grid_width}},
          {"lambda", {{"euclid", o.lambdas.euclid}, {"maha", o.lambdas.maha}}},
          {"auto_pixels", o.auto_pixels},
          {"manual_pixels", o.manual_pixels},
          {"queued_cells", o.queued_cells},
          {"kept_cells", o.kept_cells},
          {"cells", cells}};
}

std::vector<Pixel> cell_pixels(int r, int c, int grid_h, int grid_w, int image_h, int image_w) {
  std::vector<Pixel> out;
  // Pixel y belongs to cell floor(y * grid_h / image_h).
  const auto first = [](int cell, int g, int n) {
    return static_cast<int>((static_cast<long>(cell) * n + g - 1) / g);
  };
  const int y0 = first(r, grid_h, image_h), y1 = first(r + 1, grid_h, image_h);
  const int x0 = first(c, grid_w, image_w), x1 = first(c + 1, grid_w, image_w);
  for (int y = y0; y < std::min(y1, image_h); ++y)
    for (int x = x0; x < std::min(x1, image_w); ++x) out.push_back({y, x});
  return out;
}

RefineResult refine(const RefineInputs& in, ManualChannel& manual) {
  if (in.pseudo == nullptr || in.mask == nullptr) throw std::invalid_argument("refine needs a pseudo-label map and a mask");
  const tsf::PseudoLabelMap& pl = *in.pseudo;
  const errmap::ErrorMask& mask = *in.mask;
  const int gh = mask.height, gw = mask.width;
  if (gh <= 0 || gw <= 0 || gh > pl.height || gw > pl.width)
    throw numkit::DimensionError("error mask must be at or below pseudo-label resolution");
  if (in.priority && in.priority->size() != mask.flags.size())
    throw numkit::DimensionError("priority map does not match the mask");
  const bool have_stats = in.stats_f1 && in.stats_f2;
  if (in.auto_enabled && !have_stats) throw std::invalid_argument("auto-refinement needs class statistics");

  RefineResult res;
  res.refined = pl;
  RefinementOutcome& out = res.outcome;
  out.image_id = in.image_id;
  out.grid_height = gh;
  out.grid_width = gw;
  out.lambdas = in.lambdas;

  struct Pending {
    std::size_t outcome_index;
    std::vector<Pixel> pixels;
    double priority;
  };
  std::vector<Pending> pending;

  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      const std::size_t cell = static_cast<std::size_t>(r) * gw + c;
      if (!mask.flags[cell]) continue;
      std::vector<Pixel> px = cell_pixels(r, c, gh, gw, pl.height, pl.width);
      std::erase_if(px, [&](const Pixel& p) {
        const auto pr = pl.prov[pl.index(p.r, p.c)];
        return pr == tsf::Provenance::MANUAL || pr == tsf::Provenance::IGNORED;
      });
      if (px.empty()) continue;

      CellOutcome co;
      co.r = r;
      co.c = c;
      if (have_stats) {
        const auto v1 = feature_at(in.f1, feature_index(r, gh, in.f1.dim(1)), feature_index(c, gw, in.f1.dim(2)));
        const auto v2 = feature_at(in.f2, feature_index(r, gh, in.f2.dim(1)), feature_index(c, gw, in.f2.dim(2)));
        ClassDistances e = euclid_class_distance(v1, v2, *in.stats_f1, *in.stats_f2, in.lambdas.euclid);
        ClassDistances m = maha_class_distance(v1, v2, *in.stats_f1, *in.stats_f2, in.lambdas.maha);
        co.c_euclid = e.best;
        co.c_maha = m.best;
        co.euclid = std::move(e.per_class);
        co.maha = std::move(m.per_class);
      }
      const bool agree = in.auto_enabled && co.c_euclid != kNoCandidate && co.c_euclid == co.c_maha;
      if (agree) {
        co.decision = Decision::AUTO;
        for (const Pixel& p : px) {
          const std::size_t i = pl.index(p.r, p.c);
          res.refined.cls[i] = static_cast<std::uint8_t>(co.c_euclid);
          res.refined.prov[i] = tsf::Provenance::PLAR_AUTO;
        }
        out.auto_pixels += px.size();
        out.cells.push_back(std::move(co));
        continue;
      }
      co.decision = Decision::KEPT_PSEUDO;
      out.cells.push_back(std::move(co));
      const double pr = in.priority ? (*in.priority)[cell] : 0.0;
      pending.push_back({out.cells.size() - 1, std::move(px), pr});
    }
  }

  // Most-likely-wrong first; ties in cell order.
  std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) { return a.priority > b.priority; });
  for (Pending& p : pending) {
    CellOutcome& co = out.cells[p.outcome_index];
    ManualReply reply = manual.submit({in.image_id, p.pixels, p.priority});
    switch (reply.status) {
      case ManualStatus::ANSWERED: {
        co.decision = Decision::MANUAL_QUEUED;
        co.answered = true;
        for (std::size_t j = 0; j < p.pixels.size() && j < reply.classes.size(); ++j) {
          const int cls = reply.classes[j];
          if (cls == loop::kSkip) continue;
          const std::size_t i = pl.index(p.pixels[j].r, p.pixels[j].c);
          res.refined.cls[i] = static_cast<std::uint8_t>(cls);
          res.refined.conf[i] = 1.0f;
          res.refined.prov[i] = tsf::Provenance::MANUAL;
          ++out.manual_pixels;
        }
        break;
      }
      case ManualStatus::QUEUED:
        co.decision = Decision::MANUAL_QUEUED;
        ++out.queued_cells;
        break;
      case ManualStatus::UNAVAILABLE:
        co.decision = Decision::KEPT_PSEUDO;
        ++out.kept_cells;
        break;
    }
  }
  return res;
}

}  // namespace plarseg::plar
