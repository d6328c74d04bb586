#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "plarseg/synth/dataset.hpp"
#include "plarseg/synth/io.hpp"

using namespace plarseg::synth;

namespace {

bool same_image(const plarseg::numkit::Tensor& a, const plarseg::numkit::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data(), db = b.data();
  return std::equal(da.begin(), da.end(), db.begin());
}

std::vector<Sample> corpus(int n) {
  SceneParams p;
  p.height = p.width = 16;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_scene(i, p, "s" + std::to_string(i)));
  return out;
}

}  // namespace

TEST_CASE("generate_scene is a pure function of seed and params") {
  SceneParams p;
  const Sample a = generate_scene(42, p);
  const Sample b = generate_scene(42, p);
  CHECK(same_image(a.image, b.image));
  CHECK(*a.label == *b.label);
  const Sample c = generate_scene(43, p);
  CHECK_FALSE(same_image(a.image, c.image));
  for (float v : a.image.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("noise-free scenes paint exact prototype colors") {
  SceneParams p;
  p.noise = 0;
  p.texture = 0;
  p.illumination = 0;
  const auto protos = class_prototypes(p);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Sample s = generate_scene(seed, p);
    for (int r = 0; r < p.height; ++r)
      for (int c = 0; c < p.width; ++c) {
        const int cls = s.label->at(r, c);
        for (int ch = 0; ch < 3; ++ch) REQUIRE(s.image.at(ch, r, c) == protos[cls][ch]);
      }
  }
}

TEST_CASE("every class appears in at least 95% of K=6 64x64 scenes") {
  for (SceneStyle style : {SceneStyle::VORONOI, SceneStyle::BLOBS}) {
    SceneParams p;
    p.style = style;
    int all_present = 0;
    std::vector<int> present(6, 0);
    for (int seed = 0; seed < 500; ++seed) {
      const auto h = class_histogram(*generate_scene(seed, p).label, p.k);
      bool all = true;
      for (int c = 0; c < 6; ++c) {
        if (h[c] > 0) ++present[c];
        else all = false;
      }
      all_present += all;
    }
    INFO("style " << (style == SceneStyle::VORONOI ? "voronoi" : "blobs") << " all-present " << all_present);
    for (int c = 0; c < 6; ++c) CHECK(present[c] >= 475);
  }
}

TEST_CASE("scene parameter validation") {
  SceneParams p;
  p.k = 1;
  CHECK_THROWS_AS(generate_scene(0, p), ParameterError);
  p = SceneParams{};
  p.height = 8;
  CHECK_THROWS_AS(generate_scene(0, p), ParameterError);
}

TEST_CASE("partition sizes and set properties") {
  SUBCASE("fraction 0.5 on 10") {
    auto part = partition(corpus(10), 0.5, 1);
    CHECK(part.labelled.size() == 5);
    CHECK(part.unlabelled.size() == 5);
  }
  SUBCASE("fraction 1/8 on 2675") {
    std::vector<Sample> many;
    plarseg::numkit::Tensor img({3, 16, 16});
    for (int i = 0; i < 2675; ++i) many.push_back(Sample{"x" + std::to_string(i), img, LabelMap(16, 16, 0), {}});
    auto part = partition(std::move(many), 1.0 / 8.0, 3);
    CHECK(part.labelled.size() == 334);
    CHECK(part.unlabelled.size() == 2341);
  }
  SUBCASE("disjoint, covering, vault holds unlabelled ground truth") {
    auto samples = corpus(20);
    std::map<std::string, LabelMap> truth;
    for (const auto& s : samples) truth[s.id] = *s.label;
    auto part = partition(std::move(samples), 0.25, 9);
    std::set<std::string> lab, unl;
    for (const auto& s : part.labelled) {
      lab.insert(s.id);
      CHECK(s.label.has_value());
      CHECK(s.split == Split::TRAIN_LABELLED);
    }
    for (const auto& s : part.unlabelled) {
      unl.insert(s.id);
      CHECK_FALSE(s.label.has_value());
      CHECK(part.vault.reveal(s.id) == truth[s.id]);
    }
    CHECK(lab.size() + unl.size() == 20);
    for (const auto& id : lab) CHECK(unl.count(id) == 0);
    CHECK(part.vault.size() == unl.size());
    CHECK_THROWS_AS(part.vault.reveal(*lab.begin()), std::out_of_range);
  }
  SUBCASE("different seeds give different membership, same sizes") {
    auto a = partition(corpus(20), 0.3, 1);
    auto b = partition(corpus(20), 0.3, 2);
    CHECK(a.labelled.size() == b.labelled.size());
    std::set<std::string> ia, ib;
    for (const auto& s : a.labelled) ia.insert(s.id);
    for (const auto& s : b.labelled) ib.insert(s.id);
    CHECK(ia != ib);
  }
  SUBCASE("empty pool is an error") {
    CHECK_THROWS_AS(partition(corpus(4), 0.05, 0), ParameterError);
    CHECK_THROWS_AS(partition(corpus(4), 0.0, 0), ParameterError);
    CHECK_THROWS_AS(partition(corpus(4), 1.0, 0), ParameterError);
  }
}

TEST_CASE("PPM and PGM round trips are bit-exact") {
  const Sample s = generate_scene(5, SceneParams{});
  std::stringstream ppm, pgm;
  write_ppm(ppm, s.image);
  write_pgm(pgm, *s.label);
  CHECK(same_image(read_ppm(ppm), s.image));
  CHECK(read_pgm(pgm) == *s.label);
}

TEST_CASE("label value 255 is read as ignore") {
  LabelMap lm(2, 3, 1);
  lm.at(1, 2) = 255;
  std::stringstream ss;
  write_pgm(ss, lm);
  const LabelMap back = read_pgm(ss);
  CHECK(back.at(1, 2) == kIgnore);
  CHECK(back.at(0, 0) == 1);
}

TEST_CASE("malformed and truncated files raise FormatError") {
  const Sample s = generate_scene(5, SceneParams{});
  std::stringstream full;
  write_ppm(full, s.image);
  const std::string bytes = full.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(read_ppm(truncated), FormatError);
  std::stringstream header_only("P6\n64 64\n");
  CHECK_THROWS_AS(read_ppm(header_only), FormatError);
  std::stringstream wrong_magic("P3\n1 1\n255\n");
  CHECK_THROWS_AS(read_ppm(wrong_magic), FormatError);
  std::stringstream wrong_kind(bytes);
  CHECK_THROWS_AS(read_pgm(wrong_kind), FormatError);
  std::stringstream comments("P5\n# comment\n2 1\n255\n\x01\x02");
  CHECK(read_pgm(comments).ids == std::vector<std::uint8_t>{1, 2});
}

TEST_CASE("dataset save and load round trip") {
  DatasetSpec spec;
  spec.scene.height = spec.scene.width = 16;
  spec.n_train = 10;
  spec.n_val = 3;
  spec.n_test = 2;
  spec.labelled_fraction = 0.3;
  spec.seed = 4;
  const Dataset ds = make_dataset(spec);
  CHECK(ds.labelled.size() == 3);
  CHECK(ds.unlabelled.size() == 7);
  const auto root = std::filesystem::temp_directory_path() / "plarseg_test_dataset";
  std::filesystem::remove_all(root);
  save_dataset(ds, root);
  const Dataset back = load_dataset(root);
  REQUIRE(back.labelled.size() == ds.labelled.size());
  REQUIRE(back.unlabelled.size() == ds.unlabelled.size());
  for (std::size_t i = 0; i < ds.labelled.size(); ++i) {
    CHECK(back.labelled[i].id == ds.labelled[i].id);
    CHECK(same_image(back.labelled[i].image, ds.labelled[i].image));
    CHECK(*back.labelled[i].label == *ds.labelled[i].label);
  }
  for (const auto& s : back.unlabelled) {
    CHECK_FALSE(s.label.has_value());
    CHECK(back.vault.reveal(s.id) == ds.vault.reveal(s.id));
  }
  CHECK(back.spec.class_names == ds.spec.class_names);

  // Manifest/file disagreement is detected.
  write_pgm(root / "labels" / (ds.val[0].id + ".pgm"), LabelMap(8, 8, 0));
  CHECK_THROWS_AS(load_dataset(root), FormatError);
  std::filesystem::remove_all(root);
}

TEST_CASE("resize_labels follows the nearest-neighbour index rule") {
  LabelMap lm(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) lm.at(r, c) = static_cast<std::uint8_t>(r * 4 + c);
  const LabelMap half = resize_labels(lm, 2, 2);
  CHECK(half.at(0, 0) == 0);
  CHECK(half.at(0, 1) == 2);
  CHECK(half.at(1, 0) == 8);
  CHECK(half.at(1, 1) == 10);
}
