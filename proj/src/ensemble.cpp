#include "hern/ensemble.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <tuple>

#include "hern/image_ops.hpp"

namespace hern {
namespace {

RgbImage mean_of(std::span<const RgbImage* const> outputs) {
  const Shape& shape = outputs.front()->data().shape();
  std::vector<double> acc(shape_elements(shape), 0.0);
  for (const RgbImage* out : outputs) {
    if (out->data().shape() != shape) {
      throw ShapeError("ensemble: output shapes " + shape_string(shape) + " and " +
                       shape_string(out->data().shape()) + " differ");
    }
    const float* v = out->data().data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  Tensor<float> mean(shape);
  const double n = static_cast<double>(outputs.size());
  for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / n);
  return RgbImage(std::move(mean));
}

}  // namespace

RawPatch FlipTransform::apply(const RawPatch& raw) const {
  return RawPatch(flip_image(raw.data(), horizontal, vertical));
}

RgbImage FlipTransform::apply(const RgbImage& rgb) const {
  return RgbImage(flip_image(rgb.data(), horizontal, vertical));
}

RgbImage self_ensemble(const ModelFn& model_fn, const RawPatch& raw) {
  std::vector<RgbImage> outputs;
  for (const FlipTransform& t : FlipTransform::group()) {
    outputs.push_back(t.inverse().apply(model_fn(t.apply(raw))));
  }
  std::vector<const RgbImage*> ptrs;
  for (const auto& o : outputs) ptrs.push_back(&o);
  return mean_of(ptrs);
}

RgbImage epoch_ensemble(std::span<const Checkpoint> checkpoints, const RawPatch& raw,
                        bool self_ens) {
  if (checkpoints.empty()) throw ConfigError("epoch_ensemble: no checkpoints given");
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    if (!(checkpoints[i].config == checkpoints[0].config)) {
      throw ConfigError("epoch_ensemble: checkpoint " + std::to_string(i) +
                        " has a different model config than checkpoint 0");
    }
  }
  std::vector<RgbImage> outputs;
  for (const Checkpoint& c : checkpoints) {
    const ModelFn f = [&c](const RawPatch& x) { return infer_padded(x, c.params, c.config); };
    outputs.push_back(self_ens ? self_ensemble(f, raw) : f(raw));
  }
  std::vector<std::size_t> order(checkpoints.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    return std::tuple(checkpoints[i].stage_index, checkpoints[i].epoch_index,
                      checkpoints[i].optimizer.step);
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key(a) != key(b)) return key(a) < key(b);
    const auto va = outputs[a].data().values();
    const auto vb = outputs[b].data().values();
    return std::lexicographical_compare(
        va.begin(), va.end(), vb.begin(), vb.end(),
        [](float x, float y) { return std::bit_cast<std::uint32_t>(x) < std::bit_cast<std::uint32_t>(y); });
  });
  std::vector<const RgbImage*> ptrs;
  for (std::size_t i : order) ptrs.push_back(&outputs[i]);
  return mean_of(ptrs);
}

}  // namespace hern
