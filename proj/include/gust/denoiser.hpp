#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gust/diffusion.hpp"

namespace gust {

// Channel-major dense grid, v[(ch * h + y) * w + x].
struct Grid {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(std::size_t(c_) * h_ * w_, 0.0) {}
  double* ch(int i) { return v.data() + std::size_t(i) * h * w; }
  const double* ch(int i) const { return v.data() + std::size_t(i) * h * w; }
  std::size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

enum class ParamKind { Conv, Spade, TembProj, Skip, Attention, Mlp, Stem, Head, TembShared };

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> w;
  ParamKind kind = ParamKind::Conv;
  int enc_block = -1;  // encoder block index, -1 if none
  int dec_block = -1;  // decoder block index, -1 if none
  std::size_t offset = 0;  // into the flat gradient vector
  std::size_t count() const { return w.size(); }
};

class Workspace;

// Conditional U-Net denoiser: nominal-geometry concatenation at the stem,
// spatially adaptive normalization in every block, sinusoidal time embedding
// injected as per-channel scale/shift, self-attention at configured levels,
// bottleneck MLP with residual connection.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, std::uint64_t init_seed);
  static Denoiser from_checkpoint(const Checkpoint& ckpt);

  const DenoiserConfig& config() const { return cfg_; }
  std::size_t param_count() const { return total_params_; }
  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  Workspace make_workspace() const;

  // eps_hat for one sample; stores activations in ws for a later backward.
  Grid forward(const Grid& x_t, const Grid& nom_signal, int t, Workspace& ws) const;

  // Accumulates parameter gradients (flat layout, ParamTensor offsets) for the
  // sample most recently run through `ws`.
  void backward(const Grid& d_eps_hat, Workspace& ws, std::vector<double>& grad_flat) const;

  std::vector<bool> freeze_mask(const FreezeSpec& spec) const;  // per tensor
  Checkpoint to_checkpoint(const ScheduleSpec& schedule, const nlohmann::json& metadata) const;
  void load_tensors(const Checkpoint& ckpt);

 private:
  friend class Workspace;
  DenoiserConfig cfg_;
  std::vector<ParamTensor> params_;
  std::size_t total_params_ = 0;

  struct BlockIds {
    int sh1, g1, b1, conv1, tproj, sh2, g2, b2, conv2;
    int skip = -1;
    int q = -1, k = -1, v = -1, proj = -1;
    int cin = 0, cout = 0, res_h = 0, res_w = 0;
    bool attn = false;
  };
  int stem_w_, stem_b_;
  int temb1_w_, temb1_b_, temb2_w_, temb2_b_;
  int mlp1_w_, mlp1_b_, mlp2_w_, mlp2_b_;
  int head_w_, head_b_;
  std::vector<BlockIds> enc_, dec_;

  int add_param(const std::string& name, std::vector<int> shape, ParamKind kind, int enc_block,
                int dec_block);
  BlockIds add_block(const std::string& prefix, int cin, int cout, int res_h, int res_w,
                     bool attn, ParamKind tag_scope_kind, int enc_block, int dec_block);
  void init_weights(std::uint64_t seed);
};

// Per-sample activation storage; one Workspace per concurrent forward.
class Workspace {
 public:
  struct SpadeStash {
    Grid sh_pre, sh, gamma, beta, normed, modulated, act;
    std::vector<double> mean, invstd;
    Grid d_sh, d_normed;  // scratch for backward
  };
  struct BlockStash {
    Grid x;
    SpadeStash sp1;
    Grid c1, c1t;
    std::vector<double> ts;
    SpadeStash sp2;
    Grid c2, skip_out, r;
    // attention
    Grid na, q, k, v, attn, o, proj_out, out;
    std::vector<double> na_mean, na_invstd;
    // backward scratch
    Grid d_x, d_c1, d_c1t, d_c2, d_r, d_na, d_q, d_k, d_v, d_attn, d_o, d_out;
  };

  std::vector<Grid> cond;  // nominal signal per level
  Grid stem_in, stem_out;
  std::vector<double> temb0, temb_h, temb_hs, temb;  // sinusoid, fc1, silu, fc2
  std::vector<BlockStash> enc, dec;
  std::vector<Grid> enc_out, pooled;  // skip tensors and downsampled inputs
  std::vector<double> flat, m1, m1s, m2;
  Grid bneck_out;
  std::vector<Grid> cat_in, up_out;
  Grid head_norm, head_act, eps_hat;
  std::vector<double> head_mean, head_invstd;
  // backward scratch
  Grid d_stem_out;
  std::vector<Grid> d_enc_out, d_pooled, d_cat, d_up;
  std::vector<double> d_temb, d_flat, d_m1, d_m1s, d_m2;
  Grid d_bneck, d_head_norm, d_head_act;
  int last_t = -1;
};

}  // namespace gust
