#pragma once

#include <cstdint>
#include <string>

#include "hern/autograd.hpp"
#include "hern/cfa.hpp"
#include "hern/params.hpp"

#include <json.hpp>

namespace hern {

/// Architecture hyperparameters. Defaults are the full-size network.
struct ModelConfig {
  int G = 16;              ///< residual groups in the global path
  int B = 10;              ///< blocks per residual group
  int M = 8;               ///< multi-scale residual blocks in the local path
  int P = 6;               ///< stride-2 convs in the full-image encoder
  int global_width = 128;
  int local_width = 64;
  int encoder_dim = 128;   ///< must equal global_width (broadcast-added)
  int fixed_res = 192;     ///< side the encoder input is resized to
  int output_scale = 1;
  double prelu_init = 0.25;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// G=2, B=2, M=2, P=2, widths 8, fixed_res 8. Used for checks and the
  /// desk preset.
  static ModelConfig tiny();

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Rejects unknown and missing keys.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Zero-valued tensors with the exact names and shapes `config` implies.
ModelParams<float> param_shapes(const ModelConfig& config);

/// Kernels uniform in +-1/sqrt(fan_in), zero biases, PReLU slopes at
/// config.prelu_init. Deterministic in `seed`.
ModelParams<float> init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws ShapeError naming the first tensor whose name or shape differs
/// from what `config` implies.
template <typename T>
void check_params(const ModelParams<T>& params, const ModelConfig& config);

/// Graph-building versions of each block. `prefix` selects the parameter
/// namespace, e.g. "global.group0.block1".
namespace layers {

template <typename T>
Var conv(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix,
         std::size_t stride = 1);

/// y = x + conv(prelu(conv(x)))
template <typename T>
Var rir_block(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix);

/// y = x + conv(block_B(...block_1(x)))
template <typename T>
Var residual_group(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix,
                   int blocks);

/// Two stride-2 conv+PReLU, G residual groups and a conv around a long
/// skip, two stride-2 transposed conv+PReLU. If `trunk` is given it
/// receives the quarter-resolution trunk output.
template <typename T>
Var global_path(Tape<T>& tape, Var x, const ModelParams<T>& p, const ModelConfig& config,
                Var* trunk = nullptr);

/// Two-stage 3x3/5x5 feature exchange followed by a 1x1 bottleneck and a
/// residual add.
template <typename T>
Var msrb(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix);

/// 1x1 entry conv to local_width, then M MSRBs.
template <typename T>
Var local_path(Tape<T>& tape, Var x, const ModelParams<T>& p, const ModelConfig& config);

/// Resizes `raw` to fixed_res, applies P stride-2 conv+PReLU and a
/// spatial mean. Returns a 1x1xencoder_dim value.
template <typename T>
Var pyramid_encoder(Tape<T>& tape, const Tensor<T>& raw, const ModelParams<T>& p,
                    const ModelConfig& config);

/// Whole network; `raw` is the tape value of an HxWx4 input.
template <typename T>
Var hern_forward(Tape<T>& tape, Var raw, const ModelParams<T>& p, const ModelConfig& config);

}  // namespace layers

// Inference-only wrappers over the graph builders.

template <typename T>
Tensor<T> rir_block(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix);
template <typename T>
Tensor<T> residual_group(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix,
                         int blocks);
template <typename T>
Tensor<T> global_path(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& config);
template <typename T>
Tensor<T> msrb(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix);
template <typename T>
Tensor<T> local_path(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& config);
/// Returns the encoder vector as a rank-1 tensor of encoder_dim values.
template <typename T>
Tensor<T> pyramid_encoder(const Tensor<T>& raw, const ModelParams<T>& p,
                          const ModelConfig& config);
template <typename T>
Tensor<T> hern_forward(const Tensor<T>& raw, const ModelParams<T>& p, const ModelConfig& config);

RgbImage hern_forward(const RawPatch& raw, const ModelParams<float>& p, const ModelConfig& config);

/// Reflect-pads to the next multiple of 4, runs the network and crops the
/// result back to output_scale x the original size.
RgbImage infer_padded(const RawPatch& raw, const ModelParams<float>& p,
                      const ModelConfig& config);

}  // namespace hern
