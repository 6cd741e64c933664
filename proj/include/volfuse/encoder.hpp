// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "volfuse/nn.hpp"

namespace volfuse {

struct EncoderConfig {
  std::size_t depth = 2;
  std::size_t width = 192;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  void validate() const;
};

/// Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  LayerNormParams ln1;
  Linear q;     // (C, C)
  Linear k;     // (C, C), no bias: softmax is blind to it
  Linear v;     // (C, C)
  Linear proj;  // (C, C)
  LayerNormParams ln2;
  Linear fc1;   // (C, ratio*C)
  Linear fc2;   // (ratio*C, C)

  static TransformerBlock init(std::size_t width, std::size_t mlp_ratio, Rng& rng);
  Tensor forward(const Tensor& x, std::size_t heads) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Full self-attention over the rows of x (N, C).
Tensor multi_head_attention(const Tensor& x, const TransformerBlock& block, std::size_t heads);

struct EncoderParams {
  std::vector<TransformerBlock> blocks;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Applies cfg.depth blocks to the visible tokens (Nvis, C).
Tensor encode(const Tensor& tokens, const EncoderConfig& cfg, const EncoderParams& params);

}  // namespace volfuse
