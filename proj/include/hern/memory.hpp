#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hern/model.hpp"

namespace hern {

enum class LayerKind {
  kConv,              ///< stride 1 or 2 convolution
  kDeconv,            ///< stride 2 transposed convolution
  kActivation,        ///< PReLU / ReLU output
  kAdd,
  kConcat,
  kPool,              ///< global mean, 1 x 1 x C
  kBroadcastAdd,
  kChannelAttention,  ///< pooled C, squeeze C/r, excite C and the rescaled map
};

/// Where a layer reads its spatial size from.
enum class LayerInput {
  kPrevious,  ///< the preceding layer's output side
  kPatch,     ///< the network input side (starts a parallel branch)
  kFixed,     ///< a constant side, independent of the input
};

struct ArchLayer {
  std::string path;
  LayerKind kind = LayerKind::kConv;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  LayerInput input = LayerInput::kPrevious;
  int fixed_side = 0;  ///< used with LayerInput::kFixed
  int reduction = 16;  ///< channel-attention squeeze ratio
};

/// Abstract layer graph flattened into execution order.
struct ArchSpec {
  std::string name;
  std::vector<ArchLayer> layers;

  /// Throws ConfigError on invalid strides or channel counts.
  void validate() const;
  /// Smallest value every valid input side must be a multiple of.
  int required_divisor() const;
};

/// Mirrors every stored activation of the network built by hern_forward.
ArchSpec hern_arch(const ModelConfig& config);

/// RCAN-style baseline: every residual block runs at input resolution with
/// ReLU and channel attention; G groups of B blocks of `width` channels.
ArchSpec rcan_like_arch(int groups = 16, int blocks = 10, int width = 128, int reduction = 16);

struct LayerMemory {
  std::string path;
  std::uint64_t elements = 0;
  std::uint64_t bytes = 0;
};

struct MemoryEstimate {
  std::vector<LayerMemory> per_layer;
  std::uint64_t total_bytes = 0;
  bool includes_gradients = false;
  int bytes_per_element = 4;
};

/// Activation storage for one forward pass (times 2 with gradients), from
/// shape propagation. Weights and framework overhead are not counted.
MemoryEstimate estimate_memory(const ArchSpec& spec, int patch_side, int batch,
                               bool include_grad);

/// Largest valid side whose estimate fits in `budget_bytes`.
int max_feasible_patch(const ArchSpec& spec, std::uint64_t budget_bytes, int batch,
                       bool include_grad = true);

}  // namespace hern
