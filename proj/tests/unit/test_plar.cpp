#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "plarseg/numkit/ops.hpp"
#include "plarseg/numkit/rng.hpp"
#include "plarseg/plar/distance.hpp"
#include "plarseg/plar/refine.hpp"
#include "plarseg/plar/stats.hpp"
#include "plarseg/plar/weight_module.hpp"

using namespace plarseg;
namespace nk = plarseg::numkit;
using plar::ClassStats;
using plar::CovKind;
using plar::Decision;
using plar::Level;
using plar::LevelStats;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Eigen::VectorXd random_vec(int n, nk::Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

// Stats for a single class from explicit samples.
ClassStats stats_of(const std::vector<Eigen::VectorXd>& xs) {
  plar::StatsAccumulator acc(1, static_cast<int>(xs.front().size()));
  for (const auto& x : xs) acc.add(0, x);
  return acc.finalize(Level::F1).classes[0];
}

LevelStats level_of(std::vector<ClassStats> cls, Level lv = Level::F1) {
  LevelStats s;
  s.level = lv;
  s.dims = static_cast<int>(cls.front().mean.size());
  s.classes = std::move(cls);
  return s;
}

ClassStats fixed_stats(const Eigen::VectorXd& mean, const Eigen::MatrixXd& inverse, CovKind kind) {
  ClassStats s;
  s.count = 100;
  s.mean = mean;
  s.inverse = inverse;
  s.cov = inverse.inverse();
  s.kind = kind;
  return s;
}

// Random class clusters; returns per-class samples.
std::vector<std::vector<Eigen::VectorXd>> clusters(int k, int n, int per_class, nk::Rng& rng, double spread) {
  std::vector<std::vector<Eigen::VectorXd>> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const Eigen::VectorXd centre = random_vec(n, rng, spread);
    Eigen::MatrixXd mix = Eigen::MatrixXd::Identity(n, n) + 0.5 * Eigen::MatrixXd::Random(n, n);
    for (int j = 0; j < per_class; ++j) out[static_cast<std::size_t>(c)].push_back(centre + mix * random_vec(n, rng));
  }
  return out;
}

LevelStats level_from_clusters(const std::vector<std::vector<Eigen::VectorXd>>& cl, Level lv = Level::F1) {
  plar::StatsAccumulator acc(static_cast<int>(cl.size()), static_cast<int>(cl[0][0].size()));
  for (std::size_t c = 0; c < cl.size(); ++c)
    for (const auto& x : cl[c]) acc.add(static_cast<int>(c), x);
  return acc.finalize(lv);
}

// Feature tensor C x h x w filled from a per-cell function.
template <typename F>
nk::Tensor feature_map(int ch, int h, int w, F&& f) {
  nk::Tensor t({ch, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const Eigen::VectorXd v = f(r, c);
      for (int k = 0; k < ch; ++k) t.at(k, r, c) = static_cast<float>(v(k));
    }
  return t;
}

tsf::PseudoLabelMap constant_pseudo(int h, int w, std::uint8_t cls) {
  tsf::PseudoLabelMap pl(h, w);
  std::fill(pl.cls.begin(), pl.cls.end(), cls);
  std::fill(pl.conf.begin(), pl.conf.end(), 0.5f);
  return pl;
}

errmap::ErrorMask full_mask(int h, int w, std::uint8_t v = 1) {
  return {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, v), errmap::MaskSource::FUSED, 0.5f};
}

struct RecordingChannel : plar::ManualChannel {
  std::vector<plar::ManualRequest> seen;
  plar::ManualStatus status = plar::ManualStatus::QUEUED;
  plar::ManualReply submit(const plar::ManualRequest& r) override {
    seen.push_back(r);
    return {status, {}};
  }
};

struct FailingOracle : loop::Oracle {
  loop::OracleResponse query(const loop::OracleRequest&) override { throw std::runtime_error("timeout"); }
  std::string kind() const override { return "failing"; }
};

}  // namespace

TEST_CASE("class statistics") {
  SUBCASE("means match direct averaging per class") {
    nk::Rng rng(5);
    auto cl = clusters(3, 5, 30, rng, 4.0);
    const LevelStats s = level_from_clusters(cl);
    for (int c = 0; c < 3; ++c) {
      Eigen::VectorXd m = Eigen::VectorXd::Zero(5);
      for (const auto& x : cl[static_cast<std::size_t>(c)]) m += x;
      m /= 30.0;
      CHECK((s.classes[static_cast<std::size_t>(c)].mean - m).norm() < 1e-9);
      CHECK(s.classes[static_cast<std::size_t>(c)].count == 30);
    }
  }
  SUBCASE("covariance matches a two-pass population estimate and is symmetric PSD") {
    nk::Rng rng(6);
    auto cl = clusters(1, 7, 50, rng, 10.0);
    const ClassStats s = stats_of(cl[0]);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(7, 7);
    for (const auto& x : cl[0]) cov += (x - s.mean) * (x - s.mean).transpose();
    cov /= 50.0;
    CHECK((s.cov - cov).norm() < 1e-9 * std::max(1.0, cov.norm()));
    CHECK((s.cov - s.cov.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.cov);
    CHECK(es.eigenvalues().minCoeff() > -1e-9);
    CHECK(s.kind == CovKind::FULL);
  }
  SUBCASE("identical vectors give zero covariance with a finite regularised inverse") {
    const Eigen::VectorXd v = vec({1.5, -2.0, 0.25});
    const ClassStats s = stats_of(std::vector<Eigen::VectorXd>(12, v));
    CHECK((s.mean - v).norm() < 1e-12);
    CHECK(s.cov.norm() < 1e-12);
    CHECK(s.eps == doctest::Approx(1e-6));
    CHECK(s.inverse.allFinite());
    CHECK(plar::maha_distance(v, s) == doctest::Approx(0.0));
  }
  SUBCASE("eps follows the trace rule with its floor") {
    Eigen::MatrixXd c = Eigen::MatrixXd::Identity(4, 4) * 2.0;
    CHECK(plar::regularisation_eps(c) == doctest::Approx(2e-3));
    CHECK(plar::regularisation_eps(Eigen::MatrixXd::Zero(4, 4)) == doctest::Approx(1e-6));
  }
  SUBCASE("count thresholds select full, diagonal, mean-only") {
    nk::Rng rng(7);
    const int n = 16;
    auto make = [&](int count) {
      std::vector<Eigen::VectorXd> xs;
      for (int i = 0; i < count; ++i) xs.push_back(random_vec(n, rng));
      return stats_of(xs);
    };
    CHECK(make(17).kind == CovKind::FULL);
    CHECK(make(16).kind == CovKind::DIAGONAL);
    CHECK(make(8).kind == CovKind::DIAGONAL);
    CHECK(make(7).kind == CovKind::MEAN_ONLY);
    CHECK(make(1).kind == CovKind::MEAN_ONLY);
    plar::StatsAccumulator acc(2, n);
    CHECK(acc.finalize(Level::F2).classes[1].kind == CovKind::ABSENT);
  }
  SUBCASE("labels finer than features sample the containing feature cell") {
    nk::Tensor f({1, 2, 2});
    f.at(0, 0, 0) = 1;
    f.at(0, 0, 1) = 2;
    f.at(0, 1, 0) = 3;
    f.at(0, 1, 1) = 4;
    synth::LabelMap lab(4, 4, 0);
    lab.ids[0] = synth::kIgnore;  // one pixel of the top-left block
    for (int c = 2; c < 4; ++c) lab.ids[static_cast<std::size_t>(3 * 4 + c)] = 1;
    const LevelStats s = plar::collect_stats(f, lab, 2, Level::F1);
    CHECK(s.classes[1].count == 2);
    CHECK(s.classes[1].mean(0) == doctest::Approx(4.0));
    CHECK(s.classes[0].count == 13);
    CHECK(s.classes[0].mean(0) == doctest::Approx((3 * 1 + 4 * 2 + 4 * 3 + 2 * 4) / 13.0));
    CHECK_THROWS_AS(plar::collect_stats(f, synth::LabelMap(1, 1, 0), 2, Level::F1), nk::DimensionError);
  }
  SUBCASE("bank fallback replaces thinly observed classes only") {
    nk::Rng rng(8);
    auto own_cl = clusters(2, 3, 20, rng, 2.0);
    own_cl[1].resize(3);
    const LevelStats own = level_from_clusters(own_cl);
    const LevelStats bank = level_from_clusters(clusters(2, 3, 40, rng, 2.0));
    const LevelStats merged = plar::merge_with_bank(own, bank);
    CHECK(merged.classes[0].count == 20);
    CHECK(merged.classes[1].count == 40);
  }
}

TEST_CASE("euclidean class distance") {
  SUBCASE("3-4-5 triangle at a single level") {
    const ClassStats s = stats_of({vec({4, 6})});
    CHECK(s.kind == CovKind::MEAN_ONLY);
    const LevelStats one = level_of({s});
    const auto d = plar::euclid_class_distance(vec({1, 2}), vec({1, 2}), one, one, 1.0);
    CHECK(d.per_class[0] == doctest::Approx(5.0));
    CHECK(d.best == 0);
  }
  SUBCASE("a feature on a class mean at both levels has zero distance") {
    nk::Rng rng(9);
    const LevelStats s1 = level_from_clusters(clusters(4, 3, 10, rng, 3.0));
    const LevelStats s2 = level_from_clusters(clusters(4, 5, 10, rng, 3.0), Level::F2);
    const auto d = plar::euclid_class_distance(s1.classes[2].mean, s2.classes[2].mean, s1, s2, 0.3);
    CHECK(d.per_class[2] == doctest::Approx(0.0));
    CHECK(d.best == 2);
  }
  SUBCASE("lambda = 0 ignores F1 entirely") {
    nk::Rng rng(10);
    const LevelStats s1 = level_from_clusters(clusters(4, 3, 10, rng, 3.0));
    const LevelStats s2 = level_from_clusters(clusters(4, 5, 10, rng, 3.0), Level::F2);
    LevelStats permuted = s1;
    std::rotate(permuted.classes.begin(), permuted.classes.begin() + 1, permuted.classes.end());
    for (int t = 0; t < 50; ++t) {
      const Eigen::VectorXd f1 = random_vec(3, rng, 3.0), f2 = random_vec(5, rng, 3.0);
      const auto a = plar::euclid_class_distance(f1, f2, s1, s2, 0.0);
      const auto b = plar::euclid_class_distance(f1, f2, permuted, s2, 0.0);
      CHECK(a.best == b.best);
      for (int c = 0; c < 4; ++c) CHECK(a.per_class[static_cast<std::size_t>(c)] == b.per_class[static_cast<std::size_t>(c)]);
    }
  }
  SUBCASE("hybrid matches brute-force arithmetic") {
    nk::Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const int n1 = 1 + static_cast<int>(rng.randint(0, 15)), n2 = 1 + static_cast<int>(rng.randint(0, 15));
      const LevelStats s1 = level_from_clusters(clusters(3, n1, 20, rng, 2.0));
      const LevelStats s2 = level_from_clusters(clusters(3, n2, 20, rng, 2.0), Level::F2);
      const Eigen::VectorXd f1 = random_vec(n1, rng), f2 = random_vec(n2, rng);
      const double lam = rng.uniform();
      const auto d = plar::euclid_class_distance(f1, f2, s1, s2, lam);
      for (int c = 0; c < 3; ++c) {
        const auto& m1 = s1.classes[static_cast<std::size_t>(c)].mean;
        const auto& m2 = s2.classes[static_cast<std::size_t>(c)].mean;
        double a = 0, b = 0;
        for (int i = 0; i < n1; ++i) a += (f1(i) - m1(i)) * (f1(i) - m1(i));
        for (int i = 0; i < n2; ++i) b += (f2(i) - m2(i)) * (f2(i) - m2(i));
        CHECK(std::abs(d.per_class[static_cast<std::size_t>(c)] - (lam * std::sqrt(a) + (1 - lam) * std::sqrt(b))) <
              1e-6);
      }
    }
  }
  SUBCASE("ties go to the smallest class id, nothing reachable gives no candidate") {
    const LevelStats s = level_of({stats_of({vec({1, 0})}), stats_of({vec({-1, 0})}), stats_of({vec({0, 1})})});
    const auto d = plar::euclid_class_distance(vec({0, -1}), vec({0, -1}), s, s, 0.5);
    CHECK(d.per_class[0] == doctest::Approx(d.per_class[1]));
    CHECK(d.best == 0);
    CHECK(plar::argmin_class({plar::kUnavailable, plar::kUnavailable}) == plar::kNoCandidate);
  }
  SUBCASE("a class known at one level only uses that level for both terms") {
    ClassStats absent;
    absent.mean = Eigen::VectorXd::Zero(2);
    const LevelStats s1 = level_of({stats_of({vec({3, 4})}), absent});
    const LevelStats s2 = level_of({stats_of({vec({0, 0})}), stats_of({vec({6, 8})})}, Level::F2);
    const auto d = plar::euclid_class_distance(vec({0, 0}), vec({0, 0}), s1, s2, 0.5);
    CHECK(d.per_class[0] == doctest::Approx(2.5));
    CHECK(d.per_class[1] == doctest::Approx(10.0));
  }
}

TEST_CASE("mahalanobis class distance") {
  SUBCASE("diag(4, 1) with offset (2, 0) gives 1") {
    Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(2, 2);
    inv(0, 0) = 0.25;
    inv(1, 1) = 1.0;
    const ClassStats s = fixed_stats(vec({0, 0}), inv, CovKind::DIAGONAL);
    CHECK(plar::maha_distance(vec({2, 0}), s) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("identity covariance reduces to euclidean") {
    nk::Rng rng(12);
    for (int t = 0; t < 30; ++t) {
      const int n = 1 + static_cast<int>(rng.randint(0, 15));
      const ClassStats s = fixed_stats(random_vec(n, rng), Eigen::MatrixXd::Identity(n, n), CovKind::FULL);
      const Eigen::VectorXd f = random_vec(n, rng, 3.0);
      CHECK(std::abs(plar::maha_distance(f, s) - plar::euclid_distance(f, s)) < 1e-6);
    }
  }
  SUBCASE("matches explicit inverse of the regularised covariance") {
    nk::Rng rng(13);
    for (int t = 0; t < 20; ++t) {
      const int n = 1 + static_cast<int>(rng.randint(0, 15));
      const int count = static_cast<int>(rng.randint(8, 3 * n + 8));
      std::vector<Eigen::VectorXd> xs;
      for (int i = 0; i < count; ++i) xs.push_back(random_vec(n, rng, 2.0));
      const ClassStats s = stats_of(xs);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
      Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
      for (const auto& x : xs) m += x;
      m /= count;
      for (const auto& x : xs) cov += (x - m) * (x - m).transpose();
      cov /= count;
      const double eps = std::max(1e-6, 1e-3 * cov.trace() / n);
      Eigen::MatrixXd reg = cov + eps * Eigen::MatrixXd::Identity(n, n);
      if (count < n + 1) reg = reg.diagonal().asDiagonal();
      const Eigen::VectorXd f = random_vec(n, rng, 2.0);
      const double expected = std::sqrt((f - m).dot(reg.inverse() * (f - m)));
      CHECK(std::abs(plar::maha_distance(f, s) - expected) < 1e-6 * std::max(1.0, expected));
    }
  }
  SUBCASE("joint rotation of features and stats leaves distances unchanged") {
    nk::Rng rng(14);
    const int n = 8;
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n * n; ++i) a.data()[i] = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    auto cl = clusters(3, n, 40, rng, 3.0);
    auto rotated = cl;
    for (auto& c : rotated)
      for (auto& x : c) x = q * x;
    const LevelStats s = level_from_clusters(cl), sr = level_from_clusters(rotated);
    for (int t = 0; t < 40; ++t) {
      const Eigen::VectorXd f = random_vec(n, rng, 3.0);
      const auto d = plar::maha_class_distance(f, f, s, s, 0.7);
      const auto dr = plar::maha_class_distance(q * f, q * f, sr, sr, 0.7);
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(d.per_class[static_cast<std::size_t>(c)] - dr.per_class[static_cast<std::size_t>(c)]) < 1e-4);
      CHECK(d.best == dr.best);
    }
  }
  SUBCASE("classes below the diagonal threshold leave the argmin domain") {
    nk::Rng rng(15);
    const int n = 8;
    const Eigen::VectorXd origin = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::VectorXd> few;
    for (int i = 0; i < 5; ++i) few.push_back(random_vec(n, rng, 0.1));
    std::vector<Eigen::VectorXd> many;
    for (int i = 0; i < 30; ++i) many.push_back(Eigen::VectorXd::Constant(n, 10.0) + random_vec(n, rng));
    const LevelStats s = level_of({stats_of(few), stats_of(many)});
    REQUIRE(s.classes[0].kind == CovKind::MEAN_ONLY);
    const auto d = plar::maha_class_distance(origin, origin, s, s, 0.5);
    CHECK_FALSE(std::isfinite(d.per_class[0]));
    CHECK(d.best == 1);
    CHECK(plar::euclid_class_distance(origin, origin, s, s, 0.5).best == 0);
    const LevelStats none = level_of({stats_of(few)});
    CHECK(plar::maha_class_distance(origin, origin, none, none, 0.5).best == plar::kNoCandidate);
  }
  SUBCASE("identity covariances make both rules agree everywhere") {
    nk::Rng rng(16);
    std::vector<ClassStats> cls;
    for (int c = 0; c < 5; ++c) cls.push_back(fixed_stats(random_vec(4, rng, 2.0), Eigen::MatrixXd::Identity(4, 4), CovKind::FULL));
    const LevelStats s1 = level_of(cls);
    std::vector<ClassStats> cls2;
    for (int c = 0; c < 5; ++c) cls2.push_back(fixed_stats(random_vec(3, rng, 2.0), Eigen::MatrixXd::Identity(3, 3), CovKind::FULL));
    const LevelStats s2 = level_of(cls2, Level::F2);
    for (int t = 0; t < 500; ++t) {
      const Eigen::VectorXd f1 = random_vec(4, rng, 2.0), f2 = random_vec(3, rng, 2.0);
      const double lam = rng.uniform();
      CHECK(plar::euclid_class_distance(f1, f2, s1, s2, lam).best == plar::maha_class_distance(f1, f2, s1, s2, lam).best);
    }
  }
}

TEST_CASE("scale robustness of the argmin") {
  nk::Rng rng(17);
  auto c1 = clusters(4, 3, 30, rng, 3.0);
  auto c2 = clusters(4, 5, 30, rng, 3.0);
  const double s = 7.5;
  auto c1s = c1;
  for (auto& c : c1s)
    for (auto& x : c) x *= s;
  const LevelStats s1 = level_from_clusters(c1), s1s = level_from_clusters(c1s);
  const LevelStats s2 = level_from_clusters(c2, Level::F2);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd f1 = random_vec(3, rng, 3.0), f2 = random_vec(5, rng, 3.0);
    CHECK(plar::euclid_class_distance(f1, f2, s1, s2, 0.0).best ==
          plar::euclid_class_distance(s * f1, f2, s1s, s2, 0.0).best);
    const auto a = plar::euclid_class_distance(f1, f2, s1, s2, 1.0);
    const auto b = plar::euclid_class_distance(s * f1, f2, s1s, s2, 1.0);
    CHECK(a.best == b.best);
    for (int c = 0; c < 4; ++c)
      CHECK(b.per_class[static_cast<std::size_t>(c)] == doctest::Approx(s * a.per_class[static_cast<std::size_t>(c)]));
  }
}

TEST_CASE("cell pixels partition the image") {
  SUBCASE("64 -> 32 cells are 2 x 2 blocks") {
    const auto px = plar::cell_pixels(3, 5, 32, 32, 64, 64);
    REQUIRE(px.size() == 4);
    CHECK(px[0] == loop::Pixel{6, 10});
    CHECK(px[3] == loop::Pixel{7, 11});
  }
  SUBCASE("uneven sizes still cover every pixel once and agree with nearest downsampling") {
    std::map<loop::Pixel, int> seen;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        for (const auto& p : plar::cell_pixels(r, c, 3, 4, 7, 10)) {
          ++seen[p];
          CHECK(plar::feature_index(p.r, 7, 3) == r);
          CHECK(plar::feature_index(p.c, 10, 4) == c);
        }
    CHECK(seen.size() == 70);
    for (const auto& [p, n] : seen) CHECK(n == 1);
  }
}

namespace {

// Random refinement problem: 4 classes, features drawn near class means so
// that both rules agree on some cells and disagree on others.
struct Problem {
  LevelStats s1, s2;
  nk::Tensor f1, f2;
  tsf::PseudoLabelMap pseudo;
  errmap::ErrorMask mask;
  std::vector<float> priority;
};

Problem random_problem(std::uint64_t seed, int gh = 8, int gw = 8) {
  nk::Rng rng(seed);
  Problem p;
  p.s1 = level_from_clusters(clusters(4, 3, 25, rng, 1.5));
  p.s2 = level_from_clusters(clusters(4, 4, 25, rng, 1.5), Level::F2);
  p.f1 = feature_map(3, gh / 2, gw / 2, [&](int, int) { return random_vec(3, rng, 2.0); });
  p.f2 = feature_map(4, gh, gw, [&](int, int) { return random_vec(4, rng, 2.0); });
  p.pseudo = tsf::PseudoLabelMap(2 * gh, 2 * gw);
  for (std::size_t i = 0; i < p.pseudo.size(); ++i) {
    p.pseudo.cls[i] = static_cast<std::uint8_t>(rng.randint(0, 3));
    p.pseudo.conf[i] = static_cast<float>(rng.uniform());
  }
  p.mask = full_mask(gh, gw, 0);
  for (auto& f : p.mask.flags) f = rng.uniform() < 0.6 ? 1 : 0;
  for (int i = 0; i < gh * gw; ++i) p.priority.push_back(static_cast<float>(rng.uniform()));
  return p;
}

plar::RefineInputs inputs_of(const Problem& p, plar::Lambdas lam = {}) {
  plar::RefineInputs in;
  in.image_id = "img";
  in.pseudo = &p.pseudo;
  in.mask = &p.mask;
  in.f1 = p.f1;
  in.f2 = p.f2;
  in.stats_f1 = &p.s1;
  in.stats_f2 = &p.s2;
  in.priority = &p.priority;
  in.lambdas = lam;
  return in;
}

}  // namespace

TEST_CASE("refine voting and budget") {
  SUBCASE("AUTO exactly when both rules agree, over randomized problems") {
    std::size_t autos = 0, others = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      Problem p = random_problem(100 + seed);
      nk::Rng rng(seed);
      const plar::Lambdas lam{rng.uniform(), rng.uniform()};
      RecordingChannel ch;
      const auto res = plar::refine(inputs_of(p, lam), ch);
      for (const auto& co : res.outcome.cells) {
        const bool agree = co.c_euclid != plar::kNoCandidate && co.c_euclid == co.c_maha;
        REQUIRE((co.decision == Decision::AUTO) == agree);
        (agree ? autos : others)++;
        for (const auto& px : plar::cell_pixels(co.r, co.c, 8, 8, 16, 16)) {
          const std::size_t i = p.pseudo.index(px.r, px.c);
          if (agree) {
            CHECK(res.refined.cls[i] == co.c_euclid);
            CHECK(res.refined.prov[i] == tsf::Provenance::PLAR_AUTO);
          } else {
            CHECK(res.refined.cls[i] == p.pseudo.cls[i]);
            CHECK(res.refined.prov[i] == tsf::Provenance::TEACHER);
          }
        }
      }
      CHECK(ch.seen.size() == res.outcome.count(Decision::MANUAL_QUEUED));
      // Unflagged cells are untouched.
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
          if (!p.mask.at(r, c))
            for (const auto& px : plar::cell_pixels(r, c, 8, 8, 16, 16)) {
              const std::size_t i = p.pseudo.index(px.r, px.c);
              CHECK(res.refined.cls[i] == p.pseudo.cls[i]);
              CHECK(res.refined.prov[i] == p.pseudo.prov[i]);
            }
    }
    CHECK(autos > 0);
    CHECK(others > 0);
  }
  SUBCASE("manual requests arrive in descending priority") {
    Problem p = random_problem(7);
    RecordingChannel ch;
    plar::refine(inputs_of(p), ch);
    REQUIRE(ch.seen.size() > 2);
    for (std::size_t i = 1; i < ch.seen.size(); ++i) CHECK(ch.seen[i - 1].priority >= ch.seen[i].priority);
  }
  SUBCASE("zero budget keeps teacher labels and spends nothing") {
    Problem p = random_problem(8);
    synth::GroundTruthVault vault;
    vault.deposit("img", synth::LabelMap(16, 16, 2));
    loop::SimulatedOracle oracle(vault, 4);
    loop::BudgetLedger ledger(0);
    plar::DirectOracleChannel ch(ledger, oracle);
    const auto res = plar::refine(inputs_of(p), ch);
    CHECK(res.outcome.count(Decision::KEPT_PSEUDO) > 0);
    CHECK(res.outcome.count(Decision::MANUAL_QUEUED) == 0);
    CHECK(res.refined.count(tsf::Provenance::MANUAL) == 0);
    CHECK(res.outcome.auto_pixels > 0);
    CHECK(ledger.spent() == 0);
    for (const auto& co : res.outcome.cells)
      if (co.decision == Decision::KEPT_PSEUDO)
        for (const auto& px : plar::cell_pixels(co.r, co.c, 8, 8, 16, 16)) {
          CHECK(res.refined.prov[p.pseudo.index(px.r, px.c)] == tsf::Provenance::TEACHER);
          CHECK(res.refined.cls[p.pseudo.index(px.r, px.c)] == p.pseudo.cls[p.pseudo.index(px.r, px.c)]);
        }
  }
  SUBCASE("limited budget bills exactly the manual pixels and respects the cap") {
    Problem p = random_problem(9);
    synth::GroundTruthVault vault;
    synth::LabelMap gt(16, 16, 1);
    gt.ids[0] = synth::kIgnore;
    vault.deposit("img", gt);
    loop::SimulatedOracle oracle(vault, 4);
    loop::BudgetLedger ledger(10);
    plar::DirectOracleChannel ch(ledger, oracle);
    const auto res = plar::refine(inputs_of(p), ch);
    CHECK(ledger.spent() <= 10);
    CHECK(ledger.reserved() == 0);
    CHECK(static_cast<std::int64_t>(res.outcome.manual_pixels) == ledger.spent());
    CHECK(res.refined.count(tsf::Provenance::MANUAL) == res.outcome.manual_pixels);
    CHECK(res.outcome.manual_pixels >= 8);
    CHECK(res.outcome.kept_cells > 0);
    for (std::size_t i = 0; i < res.refined.size(); ++i)
      if (res.refined.prov[i] == tsf::Provenance::MANUAL) CHECK(res.refined.cls[i] == 1);
  }
  SUBCASE("oracle failure keeps the pseudo-label and returns the reservation") {
    Problem p = random_problem(10);
    FailingOracle oracle;
    loop::BudgetLedger ledger(1000);
    plar::DirectOracleChannel ch(ledger, oracle);
    const auto res = plar::refine(inputs_of(p), ch);
    CHECK(ch.failures() > 0);
    CHECK(ledger.spent() == 0);
    CHECK(ledger.reserved() == 0);
    CHECK(res.refined.count(tsf::Provenance::MANUAL) == 0);
  }
  SUBCASE("empty mask leaves the map identical") {
    Problem p = random_problem(11);
    p.mask = full_mask(8, 8, 0);
    RecordingChannel ch;
    const auto res = plar::refine(inputs_of(p), ch);
    CHECK(res.refined.cls == p.pseudo.cls);
    CHECK(res.refined.conf == p.pseudo.conf);
    CHECK(res.refined.prov == p.pseudo.prov);
    CHECK(res.outcome.cells.empty());
    CHECK(ch.seen.empty());
  }
  SUBCASE("manual pixels from earlier rounds are not revisited") {
    Problem p = random_problem(12);
    p.mask = full_mask(8, 8, 1);
    for (auto& pr : p.pseudo.prov) pr = tsf::Provenance::MANUAL;
    RecordingChannel ch;
    const auto res = plar::refine(inputs_of(p), ch);
    CHECK(res.outcome.cells.empty());
    CHECK(res.refined.cls == p.pseudo.cls);
  }
  SUBCASE("auto-refinement off sends every flagged cell to the channel") {
    Problem p = random_problem(13);
    auto in = inputs_of(p);
    in.auto_enabled = false;
    RecordingChannel ch;
    const auto res = plar::refine(in, ch);
    CHECK(res.outcome.count(Decision::AUTO) == 0);
    CHECK(ch.seen.size() == p.mask.count());
  }
  SUBCASE("outcome exports as JSON") {
    Problem p = random_problem(14);
    RecordingChannel ch;
    const auto res = plar::refine(inputs_of(p), ch);
    const nlohmann::json j = plar::to_json(res.outcome);
    CHECK(j.at("cells").size() == res.outcome.cells.size());
    CHECK(j.at("cells")[0].contains("c_E"));
    CHECK(j.at("cells")[0].at("E").size() == 4);
  }
}

TEST_CASE("auto corrections on well-separated clusters are mostly right") {
  nk::Rng rng(21);
  const int k = 5, n = 6, gh = 16, gw = 16;
  std::vector<Eigen::VectorXd> centres1, centres2;
  for (int c = 0; c < k; ++c) {
    centres1.push_back(random_vec(n, rng, 4.0));
    centres2.push_back(random_vec(n, rng, 4.0));
  }
  synth::LabelMap gt(gh, gw);
  for (auto& v : gt.ids) v = static_cast<std::uint8_t>(rng.randint(0, k - 1));
  // F1 at half the grid size: each F1 cell takes the class of its top-left grid cell.
  const nk::Tensor f1 = feature_map(n, gh / 2, gw / 2, [&](int r, int c) {
    return Eigen::VectorXd(centres1[gt.at(2 * r, 2 * c)] + random_vec(n, rng, 0.5));
  });
  const nk::Tensor f2 = feature_map(n, gh, gw, [&](int r, int c) {
    return Eigen::VectorXd(centres2[gt.at(r, c)] + random_vec(n, rng, 0.5));
  });
  synth::LabelMap known = gt;
  errmap::ErrorMask mask = full_mask(gh, gw, 0);
  for (std::size_t i = 0; i < known.ids.size(); ++i)
    if (rng.uniform() < 0.4) {
      known.ids[i] = synth::kIgnore;
      mask.flags[i] = 1;
    }
  const LevelStats s1 = plar::collect_stats(f1, known, k, Level::F1);
  const LevelStats s2 = plar::collect_stats(f2, known, k, Level::F2);
  tsf::PseudoLabelMap pl(gh, gw);
  for (auto& v : pl.cls) v = static_cast<std::uint8_t>(rng.randint(0, k - 1));
  plar::RefineInputs in;
  in.image_id = "sep";
  in.pseudo = &pl;
  in.mask = &mask;
  in.f1 = f1;
  in.f2 = f2;
  in.stats_f1 = &s1;
  in.stats_f2 = &s2;
  in.lambdas = {0.3, 0.3};
  plar::NoManualChannel ch;
  const auto res = plar::refine(in, ch);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < pl.size(); ++i)
    if (res.refined.prov[i] == tsf::Provenance::PLAR_AUTO) {
      ++total;
      correct += res.refined.cls[i] == gt.ids[i];
    }
  REQUIRE(total > 20);
  CHECK(static_cast<double>(correct) / total >= 0.9);
}

TEST_CASE("weight module") {
  SUBCASE("outputs lie in (0, 1); frozen mode is 0.5 / 0.5") {
    nk::Rng rng(30);
    const auto m = plar::WeightModule::create(4, 5, 8, 1);
    for (int t = 0; t < 10; ++t) {
      nk::Tensor f1({4, 3, 3}), f2({5, 6, 6});
      for (auto& v : f1.data()) v = static_cast<float>(10 * rng.normal());
      for (auto& v : f2.data()) v = static_cast<float>(10 * rng.normal());
      const auto l = m.lambdas(f1, f2);
      CHECK(l.euclid > 0.0);
      CHECK(l.euclid < 1.0);
      CHECK(l.maha > 0.0);
      CHECK(l.maha < 1.0);
    }
    const auto f = plar::WeightModule::frozen_half();
    const auto l = f.lambdas(nk::Tensor({4, 3, 3}), nk::Tensor({5, 6, 6}));
    CHECK(l.euclid == 0.5);
    CHECK(l.maha == 0.5);
  }
  SUBCASE("learns to discount a noise-only F1 level") {
    const int k = 3, c1 = 4, c2 = 4, gh = 16, gw = 16;
    nk::Rng rng(31);
    std::vector<Eigen::VectorXd> centres;
    for (int c = 0; c < k; ++c) centres.push_back(random_vec(c2, rng, 3.0));
    auto module = plar::WeightModule::create(c1, c2, 8, 3);
    plar::WeightTrainConfig cfg;
    cfg.max_iter = 400;
    plar::WeightTrainer trainer(module, cfg);
    std::vector<double> lam_start, lam_end;
    for (int it = 0; it < 300; ++it) {
      synth::LabelMap grid(gh, gw);
      for (auto& v : grid.ids) v = static_cast<std::uint8_t>(rng.randint(0, k - 1));
      tsf::SegOutput out;
      out.f1 = feature_map(c1, gh / 2, gw / 2, [&](int, int) { return random_vec(c1, rng, 3.0); });
      out.f2 = feature_map(c2, gh, gw, [&](int r, int c) {
        return Eigen::VectorXd(centres[grid.at(r, c)] + random_vec(c2, rng, 0.7));
      });
      out.logits_grid = nk::Tensor({k, gh, gw});
      for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c)
          if (rng.uniform() < 0.5) out.logits_grid.at(grid.at(r, c), r, c) = 5.0f;
      const synth::LabelMap gt = synth::resize_labels(grid, 2 * gh, 2 * gw);
      const auto l = module.lambdas(out.f1, out.f2);
      if (it < 10) lam_start.push_back(l.euclid);
      if (it >= 290) lam_end.push_back(l.euclid);
      const auto step = trainer.step(out, gt, it);
      REQUIRE(step.has_value());
      CHECK(std::isfinite(step->loss_euclid));
    }
    const auto avg = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    MESSAGE("lambda_euclid start " << avg(lam_start) << " end " << avg(lam_end));
    CHECK(avg(lam_end) < 0.5);
    CHECK(avg(lam_end) < avg(lam_start));
  }
  SUBCASE("images without two known classes are skipped") {
    auto module = plar::WeightModule::create(2, 2, 4, 3);
    plar::WeightTrainer trainer(module, {});
    tsf::SegOutput out;
    out.f1 = nk::Tensor({2, 2, 2}, 1.0f);
    out.f2 = nk::Tensor({2, 4, 4}, 1.0f);
    out.logits_grid = nk::Tensor({3, 4, 4});
    const auto before = nk::param_checksum(module.params());
    CHECK_FALSE(trainer.step(out, synth::LabelMap(8, 8, 1), 0).has_value());
    CHECK(nk::param_checksum(module.params()) == before);
  }
}
