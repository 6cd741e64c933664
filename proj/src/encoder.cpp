// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/encoder.hpp"

#include <cmath>

#include "volfuse/errors.hpp"

namespace volfuse {

void EncoderConfig::validate() const {
  if (width == 0 || heads == 0 || mlp_ratio == 0) throw ConfigError("encoder: width, heads and mlp_ratio must be >= 1");
  if (width % heads != 0) throw ConfigError("encoder: width must be divisible by heads");
}

TransformerBlock TransformerBlock::init(std::size_t width, std::size_t mlp_ratio, Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNormParams::init(width);
  b.q = Linear::init(width, width, rng);
  b.k = Linear::init(width, width, rng, false);
  b.v = Linear::init(width, width, rng);
  b.proj = Linear::init(width, width, rng);
  b.ln2 = LayerNormParams::init(width);
  b.fc1 = Linear::init(width, mlp_ratio * width, rng);
  b.fc2 = Linear::init(mlp_ratio * width, width, rng);
  return b;
}

Tensor multi_head_attention(const Tensor& x, const TransformerBlock& block, std::size_t heads) {
  const std::size_t n = x.dim(0), c = x.dim(1), d = c / heads;
  // (N, C) -> (heads, N, d)
  const auto split = [&](const Tensor& t) { return permute(reshape(t, {n, heads, d}), {1, 0, 2}); };
  const Tensor q = split(block.q(x));
  const Tensor kt = permute(reshape(block.k(x), {n, heads, d}), {1, 2, 0});  // (heads, d, N)
  const Tensor v = split(block.v(x));
  const Tensor scores = scale(bmm(q, kt), 1.0 / std::sqrt(static_cast<double>(d)));
  const Tensor attended = bmm(softmax(scores, 2), v);  // (heads, N, d)
  return block.proj(reshape(permute(attended, {1, 0, 2}), {n, c}));
}

Tensor TransformerBlock::forward(const Tensor& x, std::size_t heads) const {
  const Tensor h = add(x, multi_head_attention(ln1(x), *this, heads));
  return add(h, fc2(gelu(fc1(ln2(h)))));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  proj.collect(prefix + ".proj", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  for (std::size_t i = 0; i < cfg.depth; ++i) p.blocks.push_back(TransformerBlock::init(cfg.width, cfg.mlp_ratio, rng));
  return p;
}

void EncoderParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

Tensor encode(const Tensor& tokens, const EncoderConfig& cfg, const EncoderParams& params) {
  if (tokens.rank() != 2 || tokens.dim(0) == 0) throw InputError("encode: expects a non-empty (N, C) token matrix");
  if (tokens.dim(1) != cfg.width) throw ConfigError("encode: token width does not match the encoder width");
  Tensor x = tokens;
  for (std::size_t i = 0; i < cfg.depth; ++i) x = params.blocks.at(i).forward(x, cfg.heads);
  return x;
}

}  // namespace volfuse
