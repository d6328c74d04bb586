#include "plarseg/synth/dataset.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "plarseg/numkit/rng.hpp"
#include "plarseg/synth/io.hpp"

namespace plarseg::synth {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::TRAIN_LABELLED: return "train_labelled";
    case Split::TRAIN_UNLABELLED: return "train_unlabelled";
    case Split::VAL: return "val";
    case Split::TEST: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  for (Split s : {Split::TRAIN_LABELLED, Split::TRAIN_UNLABELLED, Split::VAL, Split::TEST})
    if (name == split_name(s)) return s;
  throw ParameterError("unknown split '" + name + "'");
}

LabelMap resize_labels(const LabelMap& labels, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ParameterError("resize target must be positive");
  LabelMap out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    const int sr = static_cast<int>(static_cast<long>(r) * labels.height / out_h);
    for (int c = 0; c < out_w; ++c) {
      const int sc = static_cast<int>(static_cast<long>(c) * labels.width / out_w);
      out.at(r, c) = labels.at(sr, sc);
    }
  }
  return out;
}

void GroundTruthVault::deposit(const std::string& id, LabelMap labels) {
  store_[id] = std::move(labels);
}

const LabelMap& GroundTruthVault::reveal(const std::string& id) const {
  auto it = store_.find(id);
  if (it == store_.end()) throw std::out_of_range("no ground truth for image '" + id + "'");
  return it->second;
}

std::vector<std::string> GroundTruthVault::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : store_) out.push_back(id);
  return out;
}

void GroundTruthVault::scramble(std::uint8_t value) {
  for (auto& [_, lm] : store_) std::fill(lm.ids.begin(), lm.ids.end(), value);
}

Partition partition(std::vector<Sample> samples, double labelled_fraction, std::uint64_t seed) {
  if (!(labelled_fraction > 0.0 && labelled_fraction < 1.0))
    throw ParameterError("labelled fraction must lie in (0, 1)");
  const auto n = samples.size();
  const auto n_lab = static_cast<std::size_t>(std::llround(labelled_fraction * static_cast<double>(n)));
  if (n_lab == 0 || n_lab == n)
    throw ParameterError("fraction " + std::to_string(labelled_fraction) + " on " + std::to_string(n) +
                         " samples leaves a pool empty");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  numkit::Rng rng(numkit::mix_seed(seed, 0x9a27));
  rng.shuffle(order);

  Partition out;
  for (std::size_t j = 0; j < n; ++j) {
    Sample& s = samples[order[j]];
    if (!s.label) throw ParameterError("partition input '" + s.id + "' has no ground truth");
    if (j < n_lab) {
      s.split = Split::TRAIN_LABELLED;
      out.labelled.push_back(std::move(s));
    } else {
      s.split = Split::TRAIN_UNLABELLED;
      out.vault.deposit(s.id, std::move(*s.label));
      s.label.reset();
      out.unlabelled.push_back(std::move(s));
    }
  }
  // Keep pool order stable by id so downstream sampling does not depend on the shuffle.
  auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(out.labelled.begin(), out.labelled.end(), by_id);
  std::sort(out.unlabelled.begin(), out.unlabelled.end(), by_id);
  return out;
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  if (j.contains("scene")) s.scene = scene_params_from_json(j.at("scene"));
  s.n_train = j.value("n_train", s.n_train);
  s.n_val = j.value("n_val", s.n_val);
  s.n_test = j.value("n_test", s.n_test);
  s.labelled_fraction = j.value("labelled_fraction", s.labelled_fraction);
  s.seed = j.value("seed", s.seed);
  s.class_names = j.value("class_names", s.class_names);
  if (s.n_train < 2 || s.n_val < 0 || s.n_test < 0) throw ParameterError("invalid split sizes");
  return s;
}

json to_json(const DatasetSpec& s) {
  return {{"scene", to_json(s.scene)},       {"n_train", s.n_train},
          {"n_val", s.n_val},                {"n_test", s.n_test},
          {"labelled_fraction", s.labelled_fraction}, {"seed", s.seed},
          {"class_names", s.class_names}};
}

std::size_t Dataset::training_pixels() const {
  return (labelled.size() + unlabelled.size()) * static_cast<std::size_t>(spec.scene.height) * spec.scene.width;
}

namespace {

std::vector<Sample> generate_split(const DatasetSpec& spec, const char* prefix, int count, std::uint64_t tag,
                                   Split split) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  char buf[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
    Sample s = generate_scene(numkit::mix_seed(numkit::mix_seed(spec.seed, tag), static_cast<std::uint64_t>(i)),
                              spec.scene, buf);
    s.split = split;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec) {
  spec.scene.validate();
  Dataset ds;
  ds.spec = spec;
  if (ds.spec.class_names.empty())
    for (int c = 0; c < spec.scene.k; ++c) ds.spec.class_names.push_back("class_" + std::to_string(c));
  if (static_cast<int>(ds.spec.class_names.size()) != spec.scene.k)
    throw ParameterError("class_names must have one entry per class");

  auto pool = generate_split(spec, "train", spec.n_train, 11, Split::TRAIN_LABELLED);
  Partition part = partition(std::move(pool), spec.labelled_fraction, numkit::mix_seed(spec.seed, 12));
  ds.labelled = std::move(part.labelled);
  ds.unlabelled = std::move(part.unlabelled);
  ds.vault = std::move(part.vault);
  ds.val = generate_split(spec, "val", spec.n_val, 13, Split::VAL);
  ds.test = generate_split(spec, "test", spec.n_test, 14, Split::TEST);
  return ds;
}

std::vector<std::array<std::uint8_t, 3>> default_palette(const SceneParams& p) {
  std::vector<std::array<std::uint8_t, 3>> pal;
  for (const auto& proto : class_prototypes(p)) {
    // Stretch away from grey so overlapping prototypes stay distinguishable in figures.
    std::array<std::uint8_t, 3> c{};
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(0.5 + 1.6 * (proto[ch] - 0.5), 0.0, 1.0);
      c[ch] = static_cast<std::uint8_t>(std::lround(v * 255));
    }
    pal.push_back(c);
  }
  return pal;
}

json manifest_json(const Dataset& ds) {
  json splits = json::object();
  auto ids = [](const std::vector<Sample>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back(s.id);
    return a;
  };
  splits["train_labelled"] = ids(ds.labelled);
  splits["train_unlabelled"] = ids(ds.unlabelled);
  splits["val"] = ids(ds.val);
  splits["test"] = ids(ds.test);
  json palette = json::array();
  for (const auto& c : default_palette(ds.spec.scene)) palette.push_back({c[0], c[1], c[2]});
  return {{"k", ds.spec.scene.k},
          {"height", ds.spec.scene.height},
          {"width", ds.spec.scene.width},
          {"classes", ds.spec.class_names},
          {"palette", palette},
          {"splits", splits},
          {"seed", ds.spec.seed},
          {"generator", to_json(ds.spec)}};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "vault");
  for (const auto* pool : {&ds.labelled, &ds.unlabelled, &ds.val, &ds.test}) {
    for (const auto& s : *pool) {
      write_ppm(root / "images" / (s.id + ".ppm"), s.image);
      if (s.label) write_pgm(root / "labels" / (s.id + ".pgm"), *s.label);
    }
  }
  for (const auto& s : ds.unlabelled) write_pgm(root / "vault" / (s.id + ".pgm"), ds.vault.reveal(s.id));
  std::ofstream os(root / "manifest.json");
  os << manifest_json(ds).dump(2) << '\n';
  if (!os) throw FormatError("failed to write manifest in " + root.string());
}

Dataset load_dataset(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw FormatError("missing manifest.json in " + root.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest parse error: ") + e.what());
  }
  Dataset ds;
  ds.spec = dataset_spec_from_json(m.at("generator"));
  const int h = m.at("height"), w = m.at("width"), k = m.at("k");
  if (h != ds.spec.scene.height || w != ds.spec.scene.width || k != ds.spec.scene.k)
    throw FormatError("manifest header disagrees with generator block");
  ds.spec.class_names = m.at("classes").get<std::vector<std::string>>();

  auto check = [&](const std::string& id, int hh, int ww) {
    if (hh != h || ww != w)
      throw FormatError(id + ": dimensions " + std::to_string(hh) + "x" + std::to_string(ww) +
                        " do not match manifest " + std::to_string(h) + "x" + std::to_string(w));
  };
  auto load_split = [&](const char* key, Split split, bool with_label) {
    std::vector<Sample> out;
    for (const auto& idj : m.at("splits").at(key)) {
      Sample s;
      s.id = idj.get<std::string>();
      s.split = split;
      s.image = read_ppm(root / "images" / (s.id + ".ppm"));
      check(s.id, s.image.dim(1), s.image.dim(2));
      if (with_label) {
        LabelMap lm = read_pgm(root / "labels" / (s.id + ".pgm"));
        check(s.id, lm.height, lm.width);
        s.label = std::move(lm);
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  ds.labelled = load_split("train_labelled", Split::TRAIN_LABELLED, true);
  ds.unlabelled = load_split("train_unlabelled", Split::TRAIN_UNLABELLED, false);
  ds.val = load_split("val", Split::VAL, true);
  ds.test = load_split("test", Split::TEST, true);
  for (const auto& s : ds.unlabelled) {
    LabelMap lm = read_pgm(root / "vault" / (s.id + ".pgm"));
    check(s.id, lm.height, lm.width);
    ds.vault.deposit(s.id, std::move(lm));
  }
  return ds;
}

}  // namespace plarseg::synth
