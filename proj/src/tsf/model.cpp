#include "plarseg/tsf/model.hpp"

#include <nlohmann/json.hpp>

#include "plarseg/numkit/ops.hpp"
#include "plarseg/numkit/rng.hpp"

namespace plarseg::tsf {

namespace nk = plarseg::numkit;

void SegModelConfig::validate() const {
  if (in_channels <= 0 || num_classes < 2 || width <= 0)
    throw nk::DimensionError("invalid segmentation model configuration");
  for (int d : dilations)
    if (d < 1) throw nk::DimensionError("dilation must be >= 1");
}

nlohmann::json to_json(const SegModelConfig& c) {
  return {{"in_channels", c.in_channels}, {"num_classes", c.num_classes}, {"width", c.width}, {"dilations", c.dilations}};
}

SegModelConfig seg_model_config_from_json(const nlohmann::json& j) {
  SegModelConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.width = j.value("width", c.width);
  c.dilations = j.value("dilations", c.dilations);
  c.validate();
  return c;
}

SegModel SegModel::create(const SegModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SegModel m;
  m.cfg_ = cfg;
  nk::Rng rng(nk::mix_seed(seed, 0x5e6));
  const int c = cfg.width;
  auto conv = [&](const std::string& name, int cout, int cin, int k) {
    m.params_.push_back({name + ".w", nk::kaiming_normal({cout, cin, k, k}, cin * k * k, rng)});
    m.params_.push_back({name + ".b", nk::Tensor({cout}, 0.0f, true)});
  };
  conv("stem", c, cfg.in_channels, 3);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) conv("block" + std::to_string(i), c, c, 3);
  conv("ppm.local", c, c, 1);
  conv("ppm.dilated", c, c, 3);
  conv("ppm.global", c, c, 1);
  conv("ppm.fuse", cfg.f1_channels(), 3 * c, 1);
  conv("dec1", c, cfg.f1_channels() + c, 3);
  conv("dec2", cfg.f2_channels(), c, 3);
  conv("head", cfg.num_classes, cfg.f2_channels(), 1);
  return m;
}

SegOutput SegModel::forward(const nk::Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != cfg_.in_channels)
    throw nk::DimensionError("model input must be " + std::to_string(cfg_.in_channels) + " x H x W");
  const int h = image.dim(1), w = image.dim(2);
  if (h % 4 != 0 || w % 4 != 0) throw nk::DimensionError("model input sides must be multiples of 4");

  std::size_t i = 0;
  auto next_conv = [&](const nk::Tensor& x, int dilation = 1) {
    const nk::Tensor& kw = p(i);
    const nk::Tensor& kb = p(i + 1);
    i += 2;
    return nk::conv2d_same(x, kw, kb, dilation);
  };

  nk::Tensor x = nk::avg_pool2(nk::relu(next_conv(image)));
  for (int d : cfg_.dilations) x = nk::add(x, nk::relu(next_conv(x, d)));

  const nk::Tensor q = nk::avg_pool2(x);
  const nk::Tensor local = nk::relu(next_conv(q));
  const nk::Tensor dilated = nk::relu(next_conv(q, 2));
  const nk::Tensor global =
      nk::resize_nearest(nk::relu(next_conv(nk::global_avg_pool(q))), q.dim(1), q.dim(2));
  SegOutput out;
  out.f1 = nk::relu(next_conv(nk::concat_channels({local, dilated, global})));

  const nk::Tensor up = nk::resize_nearest(out.f1, x.dim(1), x.dim(2));
  const nk::Tensor d1 = nk::relu(next_conv(nk::concat_channels({up, x})));
  out.f2 = nk::relu(next_conv(d1));
  out.logits_grid = next_conv(out.f2);
  out.logits = nk::resize_nearest(out.logits_grid, h, w);
  return out;
}

SegModel SegModel::copy(bool requires_grad) const {
  SegModel m;
  m.cfg_ = cfg_;
  m.params_ = nk::clone_params(params_, requires_grad);
  return m;
}

ModelTriplet ModelTriplet::create(const SegModelConfig& cfg, std::uint64_t seed) {
  ModelTriplet t;
  t.student = SegModel::create(cfg, nk::mix_seed(seed, 1));
  t.friend_model = SegModel::create(cfg, nk::mix_seed(seed, 2));
  t.teacher = t.student.copy(false);
  return t;
}

}  // namespace plarseg::tsf
