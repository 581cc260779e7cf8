#pragma once

#include <functional>
#include <span>

#include "hern/cfa.hpp"
#include "hern/checkpoint.hpp"

namespace hern {

/// Element of the flip group {id, h, v, hv}. Every element is its own
/// inverse.
struct FlipTransform {
  bool horizontal = false;
  bool vertical = false;

  RawPatch apply(const RawPatch& raw) const;
  RgbImage apply(const RgbImage& rgb) const;
  FlipTransform inverse() const { return *this; }
  FlipTransform compose(const FlipTransform& other) const {
    return {horizontal != other.horizontal, vertical != other.vertical};
  }

  static constexpr std::array<FlipTransform, 4> group() {
    return {FlipTransform{false, false}, FlipTransform{true, false}, FlipTransform{false, true},
            FlipTransform{true, true}};
  }

  bool operator==(const FlipTransform&) const = default;
};

using ModelFn = std::function<RgbImage(const RawPatch&)>;

/// (1/4) sum over the flip group of t^-1(f(t(raw))), accumulated in double
/// in group order and never clamped.
RgbImage self_ensemble(const ModelFn& model_fn, const RawPatch& raw);

/// Mean of per-checkpoint infer_padded outputs (each self-ensembled when
/// `self_ens`). Outputs are reduced in a canonical order (cursor, Adam
/// step, then output bits) with double accumulation, so the result is
/// bit-identical under any permutation of `checkpoints` and equals single
/// inference when all checkpoints are equal. Throws ConfigError on an empty
/// list or mixed model configs.
RgbImage epoch_ensemble(std::span<const Checkpoint> checkpoints, const RawPatch& raw,
                        bool self_ens);

}  // namespace hern
