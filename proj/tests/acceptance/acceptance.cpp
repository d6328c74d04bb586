// Acceptance suite: one PASS/FAIL line per criterion A1..A9.
//
//   acceptance [--only A1,A7] [--seeds 3] [--ablation-config path] [--report dir]
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "../support/gradcheck.hpp"
#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/loop/config.hpp"
#include "plarseg/loop/runner.hpp"
#include "plarseg/numkit/ops.hpp"
#include "plarseg/numkit/optim.hpp"
#include "plarseg/plar/distance.hpp"
#include "plarseg/plar/refine.hpp"
#include "plarseg/plar/stats.hpp"
#include "plarseg/synth/dataset.hpp"
#include "plarseg/tsf/trainer.hpp"

#ifndef PLARSEG_SOURCE_DIR
#define PLARSEG_SOURCE_DIR "."
#endif

using namespace plarseg;
namespace nk = plarseg::numkit;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Options {
  int seeds = 3;
  std::string ablation_config = std::string(PLARSEG_SOURCE_DIR) + "/configs/ablation.json";
  std::string separable_config = std::string(PLARSEG_SOURCE_DIR) + "/configs/separable.json";
  fs::path report = "acceptance_report";
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// A1: every layer and both loss forms against central differences.

// Central differences are exact for maps linear in the perturbed tensor, so those
// take a wider step that keeps float32 rounding of the loss out of the quotient.
constexpr double h_linear = 1e-2;
constexpr double h_curved = 1e-3;

Verdict a1_gradients(const Options&) {
  const auto t0 = Clock::now();
  nk::Rng rng(17);
  const int samples = 60;
  const double tol = 1e-3;
  using testing::check_gradient;
  using testing::dot_wide;
  using testing::random_tensor;

  struct OpResult {
    std::string name;
    int coords = 0;
    double worst = 0.0;
  };
  std::vector<OpResult> ops;
  auto run = [&](const std::string& name, const std::function<nk::Tensor()>& f, std::vector<nk::Tensor> wrt,
                 double h = h_curved) {
    OpResult r{name};
    for (auto& t : wrt) {
      const auto g = check_gradient(f, t, samples, rng, h);
      r.coords += g.coordinates;
      r.worst = std::max(r.worst, g.max_rel_error);
    }
    ops.push_back(r);
  };

  {
    auto x = random_tensor({3, 7, 7}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    auto w = random_tensor({4, 7, 7}, rng, 1.0, false);
    run("conv2d", [&] { return dot_wide(nk::conv2d_same(x, k, b, 1), w); }, {x, k, b}, h_linear);
    run("conv2d dilated", [&] { return dot_wide(nk::conv2d_same(x, k, b, 2), w); }, {x, k, b}, h_linear);
    auto wv = random_tensor({4, 5, 5}, rng, 1.0, false);
    run("conv2d valid", [&] { return dot_wide(nk::conv2d(x, k, b, 0), wv); }, {x, k}, h_linear);
  }
  {
    auto x = random_tensor({3, 6, 6}, rng);
    for (auto& v : x.data())
      if (std::abs(v) < 0.05f) v = 0.1f;  // away from the kink
    auto w = random_tensor({3, 6, 6}, rng, 1.0, false);
    run("relu", [&] { return dot_wide(nk::relu(x), w); }, {x});
    run("sigmoid", [&] { return dot_wide(nk::sigmoid(x), w); }, {x});
    run("square", [&] { return dot_wide(nk::square(x), w); }, {x});
    run("scale", [&] { return dot_wide(nk::scale(x, -1.7f), w); }, {x}, h_linear);
    auto y = random_tensor({3, 6, 6}, rng);
    run("add", [&] { return dot_wide(nk::add(x, y), w); }, {x, y}, h_linear);
    run("mul", [&] { return dot_wide(nk::mul(x, y), w); }, {x, y});
    run("sum", [&] { return nk::scale(nk::sum(nk::mul(x, w)), 0.5f); }, {x}, h_linear);
    run("mean", [&] { return nk::mean(nk::mul(x, w)); }, {x}, h_linear);
    auto ws = random_tensor({6, 6}, rng, 1.0, false);
    run("select", [&] { return dot_wide(nk::select(x, 1), ws); }, {x}, h_linear);
    auto wr = random_tensor({108}, rng, 1.0, false);
    run("reshape", [&] { return dot_wide(nk::reshape(x, {108}), wr); }, {x}, h_linear);
  }
  {
    auto x = random_tensor({4, 6, 8}, rng), y = random_tensor({2, 6, 8}, rng);
    auto wp = random_tensor({4, 3, 4}, rng, 1.0, false);
    run("avg_pool2", [&] { return dot_wide(nk::avg_pool2(x), wp); }, {x}, h_linear);
    auto wu = random_tensor({4, 12, 16}, rng, 1.0, false);
    run("resize_nearest up", [&] { return dot_wide(nk::resize_nearest(x, 12, 16), wu); }, {x}, h_linear);
    auto wd = random_tensor({4, 3, 4}, rng, 1.0, false);
    run("resize_nearest down", [&] { return dot_wide(nk::resize_nearest(x, 3, 4), wd); }, {x}, h_linear);
    auto wg = random_tensor({4, 1, 1}, rng, 1.0, false);
    run("global_avg_pool", [&] { return dot_wide(nk::global_avg_pool(x), wg); }, {x}, h_linear);
    auto wc = random_tensor({6, 6, 8}, rng, 1.0, false);
    run("concat_channels", [&] { return dot_wide(nk::concat_channels({x, y}), wc); }, {x, y}, h_linear);
  }
  {
    auto x = random_tensor({4, 5, 5}, rng, 0.5), g = random_tensor({4}, rng), b = random_tensor({4}, rng, 0.1);
    auto w = random_tensor({4, 5, 5}, rng, 1.0, false);
    run("group_norm", [&] { return dot_wide(nk::group_norm(x, g, b), w); }, {x, g, b});
  }
  {
    auto x = random_tensor({9}, rng), W = random_tensor({7, 9}, rng), b = random_tensor({7}, rng);
    auto w = random_tensor({7}, rng, 1.0, false);
    run("linear", [&] { return dot_wide(nk::linear(x, W, b), w); }, {x, W, b});
    auto lam = random_tensor({1}, rng), a = random_tensor({30}, rng), c = random_tensor({30}, rng);
    auto w30 = random_tensor({30}, rng, 1.0, false);
    run("lerp", [&] { return dot_wide(nk::lerp(lam, a, c), w30); }, {lam, a, c});
    auto s1 = random_tensor({30}, rng), s2 = random_tensor({30}, rng);
    run("weighted_sum", [&] { return nk::weighted_sum({nk::sum(nk::square(s1)), nk::mean(nk::mul(s1, s2))}, {0.3f, 1.2f}); },
        {s1, s2});
  }
  {
    auto z = random_tensor({5, 4, 4}, rng);
    std::vector<std::uint8_t> t(16);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<std::uint8_t>(rng.randint(0, 4));
    t[3] = nk::kIgnoreId;
    run("softmax cross-entropy", [&] { return nk::softmax_cross_entropy_masked(z, t); }, {z});
    auto e = random_tensor({1, 8, 8}, rng);
    std::vector<float> y(64);
    std::vector<std::uint8_t> valid(64, 1);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    valid[5] = valid[9] = 0;
    run("sigmoid BCE", [&] { return nk::sigmoid_bce_masked(e, y, valid); }, {e});
  }

  Verdict v;
  double worst = 0.0;
  int total = 0;
  std::string worst_op;
  for (const auto& r : ops) {
    total += r.coords;
    if (r.worst > worst) {
      worst = r.worst;
      worst_op = r.name;
    }
    if (r.coords < 50 || !(r.worst < tol)) {
      v.pass = false;
      v.detail += r.name + " (" + std::to_string(r.coords) + " coords, err " + fmt("%.2e", r.worst) + ") ";
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 120.0) v.pass = false;
  v.detail += std::to_string(ops.size()) + " ops, " + std::to_string(total) + " coordinates, worst relative error " +
              fmt("%.2e", worst) + " (" + worst_op + "), " + fmt("%.1f s", secs);
  return v;
}

// ---------------------------------------------------------------------------
// A2: distances against brute-force matrix arithmetic.

Eigen::MatrixXd random_rotation(int n, nk::Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

Verdict a2_distances(const Options&) {
  nk::Rng rng(29);
  double worst_e = 0.0, worst_m = 0.0, worst_id = 0.0, worst_rot = 0.0;
  int trials = 0;
  for (int t = 0; t < 300; ++t) {
    const int n = static_cast<int>(rng.randint(1, 16));
    const int count = n + 1 + static_cast<int>(rng.randint(0, 40));
    Eigen::MatrixXd mix(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mix(i, j) = rng.normal() * (i == j ? 1.0 : 0.4);
    Eigen::VectorXd centre(n);
    for (int i = 0; i < n; ++i) centre(i) = 3.0 * rng.normal();
    std::vector<Eigen::VectorXd> xs;
    plar::StatsAccumulator acc(1, n);
    for (int s = 0; s < count; ++s) {
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z(i) = rng.normal();
      xs.push_back(centre + mix * z);
      acc.add(0, xs.back());
    }
    const auto stats = acc.finalize(plar::Level::F1).classes[0];
    Eigen::VectorXd f(n);
    for (int i = 0; i < n; ++i) f(i) = centre(i) + 2.0 * rng.normal();

    // Brute force: two-pass mean and population covariance, explicit inverse.
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
    for (const auto& x : xs) m += x;
    m /= count;
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
    for (const auto& x : xs) c += (x - m) * (x - m).transpose();
    c /= count;
    const double eps = std::max(1e-6, 1e-3 * c.trace() / n);
    const Eigen::MatrixXd inv = (c + eps * Eigen::MatrixXd::Identity(n, n)).fullPivLu().inverse();
    double e_ref = 0.0;
    for (int i = 0; i < n; ++i) e_ref += (f(i) - m(i)) * (f(i) - m(i));
    e_ref = std::sqrt(e_ref);
    const double m_ref = std::sqrt((f - m).dot(inv * (f - m)));
    worst_e = std::max(worst_e, std::abs(plar::euclid_distance(f, stats) - e_ref) / std::max(1.0, e_ref));
    worst_m = std::max(worst_m, std::abs(plar::maha_distance(f, stats) - m_ref) / std::max(1.0, m_ref));

    // Identity covariance.
    plar::ClassStats id = stats;
    id.cov = Eigen::MatrixXd::Identity(n, n);
    id.inverse = Eigen::MatrixXd::Identity(n, n);
    id.kind = plar::CovKind::FULL;
    worst_id = std::max(worst_id, std::abs(plar::maha_distance(f, id) - plar::euclid_distance(f, id)));

    // Joint rotation of samples and query.
    const Eigen::MatrixXd q = random_rotation(n, rng);
    plar::StatsAccumulator racc(1, n);
    for (const auto& x : xs) racc.add(0, Eigen::VectorXd(q * x));
    const auto rstats = racc.finalize(plar::Level::F1).classes[0];
    const double d0 = plar::maha_distance(f, stats), d1 = plar::maha_distance(q * f, rstats);
    worst_rot = std::max(worst_rot, std::abs(d0 - d1) / std::max(1.0, d0));
    ++trials;
  }
  Verdict v;
  v.pass = worst_e <= 1e-6 && worst_m <= 1e-6 && worst_id <= 1e-6 && worst_rot <= 1e-4;
  v.detail = std::to_string(trials) + " random stats (n <= 16): euclid " + fmt("%.1e", worst_e) + ", maha " +
             fmt("%.1e", worst_m) + ", identity maha-euclid " + fmt("%.1e", worst_id) + ", rotation " +
             fmt("%.1e", worst_rot);
  return v;
}

// ---------------------------------------------------------------------------
// A3: voting rule and budget safety over randomized refinement problems.

plar::LevelStats random_level(int k, int n, nk::Rng& rng, plar::Level lv, std::vector<Eigen::VectorXd>& centres) {
  plar::StatsAccumulator acc(k, n);
  centres.clear();
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd centre(n);
    for (int i = 0; i < n; ++i) centre(i) = 2.0 * rng.normal();
    centres.push_back(centre);
    const int count = static_cast<int>(rng.randint(0, 3)) == 0 ? static_cast<int>(rng.randint(0, 9))
                                                                : static_cast<int>(rng.randint(n + 1, 40));
    for (int s = 0; s < count; ++s) {
      Eigen::VectorXd x(n);
      for (int i = 0; i < n; ++i) x(i) = centre(i) + rng.normal() * (0.5 + i % 3);
      acc.add(c, x);
    }
  }
  return acc.finalize(lv);
}

// Watches every manual submission for ledger invariants.
class AuditChannel : public plar::ManualChannel {
 public:
  AuditChannel(loop::BudgetLedger& ledger, loop::Oracle& oracle) : ledger_(&ledger), inner_(ledger, oracle) {}
  plar::ManualReply submit(const plar::ManualRequest& r) override {
    const auto before = ledger_->spent();
    auto reply = inner_.submit(r);
    const auto after = ledger_->spent();
    if (after > ledger_->total()) over_cap = true;
    if (reply.status == plar::ManualStatus::ANSWERED) {
      std::int64_t billed = 0;
      for (int c : reply.classes) billed += c != loop::kSkip;
      if (after - before != billed) bad_bill = true;
    } else if (after != before) {
      bad_bill = true;
    }
    return reply;
  }
  bool over_cap = false;
  bool bad_bill = false;

 private:
  loop::BudgetLedger* ledger_;
  plar::DirectOracleChannel inner_;
};

Verdict a3_voting_budget(const Options&) {
  nk::Rng rng(31);
  std::int64_t cells = 0, autos = 0, kept = 0, manual = 0;
  std::vector<std::string> failures;
  for (int trial = 0; trial < 400 && failures.size() < 5; ++trial) {
    const int k = static_cast<int>(rng.randint(2, 6));
    const int n1 = static_cast<int>(rng.randint(1, 6)), n2 = static_cast<int>(rng.randint(1, 6));
    const int gh = 8, gw = 8, h = 16, w = 16;
    std::vector<Eigen::VectorXd> c1, c2;
    const auto s1 = random_level(k, n1, rng, plar::Level::F1, c1);
    const auto s2 = random_level(k, n2, rng, plar::Level::F2, c2);
    nk::Tensor f1({n1, gh / 2, gw / 2}), f2({n2, gh, gw});
    for (auto& v : f1.data()) v = static_cast<float>(2.0 * rng.normal());
    for (auto& v : f2.data()) v = static_cast<float>(2.0 * rng.normal());
    tsf::PseudoLabelMap pl(h, w);
    for (std::size_t i = 0; i < pl.size(); ++i) {
      pl.cls[i] = static_cast<std::uint8_t>(rng.randint(0, k - 1));
      pl.conf[i] = static_cast<float>(rng.uniform());
    }
    errmap::ErrorMask mask{gh, gw, std::vector<std::uint8_t>(gh * gw), errmap::MaskSource::FUSED, 0.5f};
    for (auto& f : mask.flags) f = rng.uniform() < 0.7;
    std::vector<float> prio(gh * gw);
    for (auto& p : prio) p = static_cast<float>(rng.uniform());

    synth::GroundTruthVault vault;
    synth::LabelMap gt(h, w);
    for (auto& v : gt.ids) v = static_cast<std::uint8_t>(rng.randint(0, k - 1));
    vault.deposit("img", gt);
    loop::SimulatedOracle oracle(vault, k, 0.0, static_cast<std::uint64_t>(trial));
    const std::int64_t budget = rng.randint(0, 3) == 0 ? 0 : rng.randint(0, 120);
    loop::BudgetLedger ledger(budget);
    AuditChannel channel(ledger, oracle);

    plar::RefineInputs in;
    in.image_id = "img";
    in.pseudo = &pl;
    in.mask = &mask;
    in.f1 = f1;
    in.f2 = f2;
    in.stats_f1 = &s1;
    in.stats_f2 = &s2;
    in.priority = &prio;
    in.lambdas = {rng.uniform(), rng.uniform()};
    const auto res = plar::refine(in, channel);

    auto fail = [&](const std::string& what) { failures.push_back("trial " + std::to_string(trial) + ": " + what); };
    if (channel.over_cap || ledger.spent() > ledger.total()) fail("ledger over cap");
    if (channel.bad_bill) fail("billing differs from answered pixels");
    if (ledger.spent() != static_cast<std::int64_t>(res.outcome.manual_pixels)) fail("spent != manual pixels");
    if (ledger.reserved() != 0) fail("reservation left open");
    for (const auto& co : res.outcome.cells) {
      ++cells;
      // Recompute both argmins independently of the outcome record.
      const Eigen::VectorXd v1 = plar::feature_at(f1, plar::feature_index(co.r, gh, gh / 2), plar::feature_index(co.c, gw, gw / 2));
      const Eigen::VectorXd v2 = plar::feature_at(f2, co.r, co.c);
      const int ce = plar::euclid_class_distance(v1, v2, s1, s2, in.lambdas.euclid).best;
      const int cm = plar::maha_class_distance(v1, v2, s1, s2, in.lambdas.maha).best;
      const bool agree = ce != plar::kNoCandidate && ce == cm;
      if ((co.decision == plar::Decision::AUTO) != agree) fail("AUTO without agreement or vice versa");
      const auto px = plar::cell_pixels(co.r, co.c, gh, gw, h, w);
      for (const auto& p : px) {
        const std::size_t i = pl.index(p.r, p.c);
        if (co.decision == plar::Decision::AUTO) {
          if (res.refined.cls[i] != ce || res.refined.prov[i] != tsf::Provenance::PLAR_AUTO) fail("AUTO pixel not written");
        } else if (co.decision == plar::Decision::KEPT_PSEUDO) {
          if (res.refined.cls[i] != pl.cls[i] || res.refined.prov[i] != tsf::Provenance::TEACHER)
            fail("budget-exhausted pixel lost its teacher label");
        } else if (res.refined.prov[i] == tsf::Provenance::MANUAL && res.refined.cls[i] != gt.ids[i]) {
          fail("manual pixel differs from the oracle");
        }
      }
      if (co.decision == plar::Decision::AUTO) ++autos;
      if (co.decision == plar::Decision::KEPT_PSEUDO) ++kept;
      if (co.decision == plar::Decision::MANUAL_QUEUED) ++manual;
    }
    for (int r = 0; r < gh; ++r)
      for (int c = 0; c < gw; ++c)
        if (!mask.at(r, c))
          for (const auto& p : plar::cell_pixels(r, c, gh, gw, h, w))
            if (res.refined.cls[pl.index(p.r, p.c)] != pl.cls[pl.index(p.r, p.c)]) fail("unflagged pixel changed");
  }
  Verdict v;
  v.pass = failures.empty() && autos > 0 && kept > 0 && manual > 0;
  v.detail = "400 randomized problems, " + std::to_string(cells) + " flagged cells (" + std::to_string(autos) + " auto, " +
             std::to_string(manual) + " manual, " + std::to_string(kept) + " kept after budget ran out)";
  for (const auto& f : failures) v.detail += "; " + f;
  return v;
}

// ---------------------------------------------------------------------------
// A4: EMA identities and geometric decay.

double distance(const nk::ParamSet& a, const nk::ParamSet& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].tensor.numel(); ++i) {
      const double d = static_cast<double>(a[k].tensor.data()[i]) - b[k].tensor.data()[i];
      s += d * d;
    }
  return std::sqrt(s);
}

Verdict a4_ema(const Options&) {
  nk::Rng rng(41);
  const auto model = tsf::SegModel::create(tsf::SegModelConfig{}, 3);
  nk::ParamSet student = nk::clone_params(model.params(), false);
  nk::ParamSet teacher = nk::clone_params(student, false);
  for (auto& p : teacher)
    for (auto& v : p.tensor.data()) v += static_cast<float>(0.1 * rng.normal());
  const nk::ParamSet t0 = nk::clone_params(teacher, false);

  Verdict v;
  auto t = nk::clone_params(t0, false);
  nk::ema_update(t, student, 0.0);
  const bool zero_ok = nk::param_checksum(t) == nk::param_checksum(student);
  t = nk::clone_params(t0, false);
  nk::ema_update(t, student, 1.0);
  const bool one_ok = nk::param_checksum(t) == nk::param_checksum(t0);

  const double gap0 = distance(t0, student);
  double worst = 0.0;
  for (double alpha : {0.5, 0.9, 0.99, 0.999}) {
    t = nk::clone_params(t0, false);
    for (int k = 1; k <= 60; ++k) {
      nk::ema_update(t, student, alpha);
      const double expected = std::pow(alpha, k) * gap0;
      worst = std::max(worst, std::abs(distance(t, student) - expected) / gap0);
    }
  }
  v.pass = zero_ok && one_ok && worst <= 1e-5;
  v.detail = std::string("alpha 0 copies student: ") + (zero_ok ? "yes" : "no") + ", alpha 1 keeps teacher: " +
             (one_ok ? "yes" : "no") + ", |‖t_k - s‖ - alpha^k ‖t_0 - s‖| / ‖t_0 - s‖ <= " + fmt("%.1e", worst) +
             " over k <= 60, alpha in {0.5, 0.9, 0.99, 0.999}, " + std::to_string(nk::param_count(student)) +
             " parameters";
  return v;
}

// ---------------------------------------------------------------------------
// A5: logged total equals the three weighted terms at every step.

loop::LoopConfig small_run_config(const std::string& name, std::uint64_t seed) {
  loop::LoopConfig c;
  c.name = name;
  c.out_dir = (fs::temp_directory_path() / ("plarseg_acceptance_" + name)).string();
  c.data.n_train = 40;
  c.data.n_val = 8;
  c.data.labelled_fraction = 0.15;
  c.rounds = 3;
  c.iters_per_round = 15;
  c.bank_refresh_iters = 5;
  c.pl_eval_images = 6;
  c.checkpoint = false;
  c.seed = seed;
  json j = loop::to_json(c);
  j["train"]["lr"] = 0.01;
  j["train"]["momentum"] = 0.9;
  j["train"].erase("max_iter");
  j["train"].erase("seed");
  j["data"].erase("seed");
  j["mask"]["conf_tau"] = 0.9;
  return loop::loop_config_from_json(j);
}

Verdict a5_loss_composition(const Options&) {
  Verdict v;
  double worst = 0.0;
  std::size_t steps = 0;
  for (bool full : {false, true}) {
    auto cfg = small_run_config(full ? "a5_full" : "a5_tsf", 3);
    if (!full) cfg.components = {false, false, false, false};
    loop::LoopRunner runner(cfg, loop::prepare_dataset(cfg));
    runner.run();
    for (const auto& l : runner.losses()) {
      worst = std::max(worst, std::abs(l.total - (l.l_sup + l.l_t + l.l_f)));
      ++steps;
    }
  }
  // a step with non-unit term weights
  {
    auto cfg = small_run_config("a5_weights", 4);
    cfg.train.w_sup = 0.7f;
    cfg.train.w_t = 1.3f;
    cfg.train.w_f = 0.4f;
    cfg.rounds = 1;
    loop::LoopRunner runner(cfg, loop::prepare_dataset(cfg));
    runner.run();
    for (const auto& l : runner.losses()) {
      worst = std::max(worst, std::abs(l.total - (l.l_sup + l.l_t + l.l_f)));
      ++steps;
    }
  }
  v.pass = steps > 0 && worst <= 1e-6;
  v.detail = std::to_string(steps) + " logged steps (terms stored weighted), max |total - (L_sup + L_t + L_f)| = " + fmt("%.2e", worst);
  return v;
}

// ---------------------------------------------------------------------------
// A6: fusion truth table and threshold-sweep monotonicity.

Verdict a6_fusion(const Options&) {
  Verdict v;
  // All 2^8 joint assignments of a 1 x 4 mask pair, which covers every cell pair.
  int rows = 0;
  bool table_ok = true;
  for (int bits = 0; bits < 256; ++bits) {
    errmap::ErrorMask conf{1, 4, std::vector<std::uint8_t>(4), errmap::MaskSource::CONF, 0.7f};
    errmap::ErrorMask emd{1, 4, std::vector<std::uint8_t>(4), errmap::MaskSource::EMD, 0.5f};
    for (int i = 0; i < 4; ++i) {
      conf.flags[i] = (bits >> i) & 1;
      emd.flags[i] = (bits >> (4 + i)) & 1;
    }
    const auto fused = errmap::fuse(conf, emd);
    for (int i = 0; i < 4; ++i) table_ok &= fused.flags[i] == (conf.flags[i] | emd.flags[i]);
    table_ok &= fused.source == errmap::MaskSource::FUSED;
    ++rows;
  }

  nk::Rng rng(61);
  bool monotone = true;
  std::size_t maps = 0;
  std::vector<std::size_t> counts(3, 0);
  const float taus[] = {0.7f, 0.8f, 0.9f};
  auto check_sweep = [&](const nk::Tensor& prob) {
    std::vector<errmap::ErrorMask> m;
    for (float t : taus) m.push_back(errmap::confidence_error_map(prob, t));
    for (std::size_t i = 0; i < m[0].flags.size(); ++i)
      monotone &= m[0].flags[i] <= m[1].flags[i] && m[1].flags[i] <= m[2].flags[i];
    for (int t = 0; t < 3; ++t) counts[t] += m[t].count();
    ++maps;
  };
  for (int t = 0; t < 200; ++t) {
    nk::Tensor logits({6, 8, 8});
    const double sharp = rng.uniform() * 6.0;
    for (auto& x : logits.data()) x = static_cast<float>(sharp * rng.normal());
    check_sweep(nk::softmax_channels(logits));
  }
  // Real teacher outputs from an untrained and a briefly trained model.
  {
    auto cfg = small_run_config("a6", 5);
    loop::LoopRunner runner(cfg, loop::prepare_dataset(cfg));
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto* s : runner.unlabelled()) check_sweep(runner.preview(*s).prob_grid);
      if (pass == 0) runner.run(1);
    }
  }
  v.pass = table_ok && monotone && counts[0] <= counts[1] && counts[1] <= counts[2];
  v.detail = std::string("truth table (") + std::to_string(rows) + " mask pairs) " + (table_ok ? "holds" : "BROKEN") +
             "; flagged cells non-decreasing over tau 0.7/0.8/0.9 on " + std::to_string(maps) + " maps: " +
             std::to_string(counts[0]) + " <= " + std::to_string(counts[1]) + " <= " + std::to_string(counts[2]) +
             (monotone ? "" : " (per-cell inclusion BROKEN)");
  return v;
}

// ---------------------------------------------------------------------------
// A7: directional ablation.

struct Arm {
  std::string name;
  loop::Components components;
};

Verdict a7_ablation(const Options& opt) {
  const auto t0 = Clock::now();
  const std::vector<Arm> arms = {
      {"TSF", {false, false, false, false}},
      {"TSF+AL", {true, false, false, false}},
      {"TSF+AL+EMD", {true, true, false, false}},
      {"TSF+AL+PLAR", {true, false, true, true}},
      {"full", {true, true, true, true}},
  };
  const auto base = loop::load_loop_config(opt.ablation_config);
  fs::create_directories(opt.report);
  std::ofstream csv(opt.report / "ablation.csv");
  csv << "arm,seed,miou_teacher,miou_student,pl_acc_after,budget_spent,seconds\n";
  std::vector<double> mean(arms.size(), 0.0);
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (int seed = 0; seed < opt.seeds; ++seed) {
      auto cfg = base;
      loop::apply_seed(cfg, static_cast<std::uint64_t>(seed));
      cfg.components = arms[a].components;
      cfg.checkpoint = false;
      const auto t_run = Clock::now();
      loop::LoopRunner runner(cfg, loop::prepare_dataset(cfg));
      runner.run();
      const auto& m = runner.metrics().back();
      mean[a] += m.miou_teacher / opt.seeds;
      csv << arms[a].name << ',' << seed << ',' << m.miou_teacher << ',' << m.miou_student << ',' << m.pl_acc_after << ','
          << m.budget_spent << ',' << seconds_since(t_run) << '\n';
      csv.flush();
      std::fprintf(stderr, "  [A7] %-12s seed %d  mIoU %.4f  (%.0f s)\n", arms[a].name.c_str(), seed, m.miou_teacher,
                   seconds_since(t_run));
    }
  }
  const double secs = seconds_since(t0);
  const double tsf = mean[0], al = mean[1], al_emd = mean[2], al_plar = mean[3], full = mean[4];
  std::vector<std::string> broken;
  if (!(tsf < al)) broken.push_back("TSF < TSF+AL");
  if (!(al <= al_emd)) broken.push_back("TSF+AL <= TSF+AL+EMD");
  if (!(al_emd < al_plar)) broken.push_back("TSF+AL+EMD < TSF+AL+PLAR");
  if (!(al_plar <= full)) broken.push_back("TSF+AL+PLAR <= full");
  const double gain = 100.0 * (full - tsf);
  if (!(gain >= 3.0)) broken.push_back("full - TSF >= 3 points");
  if (!(secs < 1800.0)) broken.push_back("runtime < 30 min");

  Verdict v;
  v.pass = broken.empty();
  std::ostringstream os;
  os << "mean teacher mIoU over " << opt.seeds << " seeds:";
  for (std::size_t a = 0; a < arms.size(); ++a) os << ' ' << arms[a].name << ' ' << fmt("%.4f", mean[a]);
  os << "; full - TSF = " << fmt("%+.2f", gain) << " points; " << fmt("%.0f s", secs);
  for (const auto& b : broken) os << "; violated: " << b;
  v.detail = os.str();
  return v;
}

// ---------------------------------------------------------------------------
// A8: PLAR correction quality on the separable setting.

Verdict a8_correction_quality(const Options& opt) {
  auto cfg = loop::load_loop_config(opt.separable_config);
  cfg.checkpoint = false;
  loop::LoopRunner runner(cfg, loop::prepare_dataset(cfg));
  runner.run();
  const auto& m = runner.metrics().back();
  Verdict v;
  const double ap = m.auto_precision.value_or(0.0);
  v.pass = m.auto_precision && ap >= 0.70 && m.pl_acc_after >= m.pl_acc_before && m.budget_spent == 0;
  v.detail = "AUTO pixels matching ground truth " + fmt("%.4f", ap) + " (teacher on the same pixels " +
             fmt("%.4f", m.auto_teacher_acc.value_or(0.0)) + "), pseudo-label accuracy " + fmt("%.4f", m.pl_acc_before) +
             " -> " + fmt("%.4f", m.pl_acc_after) + " with no manual labels";
  return v;
}

// ---------------------------------------------------------------------------
// A9: byte-identical metrics for identical config and seed.

Verdict a9_determinism(const Options& opt) {
  auto cfg = small_run_config("a9", 9);
  std::vector<std::string> csvs;
  for (int i = 0; i < 2; ++i) {
    auto c = cfg;
    c.out_dir = (fs::temp_directory_path() / ("plarseg_acceptance_a9_" + std::to_string(i))).string();
    loop::LoopRunner runner(c, loop::prepare_dataset(c));
    runner.run();
    runner.write_csvs(c.out_dir);
    std::ifstream is(fs::path(c.out_dir) / "metrics.csv", std::ios::binary);
    csvs.emplace_back(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    fs::remove_all(c.out_dir);
  }
  (void)opt;
  Verdict v;
  v.pass = !csvs[0].empty() && csvs[0] == csvs[1];
  v.detail = "two SIMULATED runs, metrics.csv " + std::to_string(csvs[0].size()) + " bytes, " +
             (csvs[0] == csvs[1] ? "identical" : "DIFFERENT");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria A1..A9"};
  Options opt;
  std::string only;
  app.add_option("--only", only, "comma-separated subset, e.g. A1,A7");
  app.add_option("--seeds", opt.seeds, "seeds per ablation arm")->check(CLI::PositiveNumber);
  app.add_option("--ablation-config", opt.ablation_config, "run configuration for A7");
  app.add_option("--separable-config", opt.separable_config, "run configuration for A8");
  app.add_option("--report", opt.report, "directory for per-run CSVs");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) selected.insert(item);

  const std::vector<std::pair<std::string, std::pair<std::string, std::function<Verdict(const Options&)>>>> criteria = {
      {"A1", {"gradient correctness", a1_gradients}},
      {"A2", {"distance oracles", a2_distances}},
      {"A3", {"voting and budget", a3_voting_budget}},
      {"A4", {"EMA algebra", a4_ema}},
      {"A5", {"loss composition", a5_loss_composition}},
      {"A6", {"fusion truth table", a6_fusion}},
      {"A7", {"directional ablation", a7_ablation}},
      {"A8", {"PLAR correction quality", a8_correction_quality}},
      {"A9", {"determinism", a9_determinism}},
  };
  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = entry.second(opt);
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s  %s: %s\n", id.c_str(), v.pass ? "PASS" : "FAIL", entry.first.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
