#include "gust/denoiser.hpp"

#include <cmath>
#include <cstring>

namespace gust {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---- conv2d, stride 1, same padding, k in {1, 3} -------------------------

void conv_fwd(const Grid& in, const ParamTensor& W, const ParamTensor& B, Grid& out) {
  const int k = W.shape[2], pad = k / 2;
  const int co_n = W.shape[0], ci_n = W.shape[1];
  const int h = in.h, w = in.w;
  for (int co = 0; co < co_n; ++co) {
    double* orow0 = out.ch(co);
    const double bias = B.w[co];
    for (std::size_t i = 0; i < std::size_t(h) * w; ++i) orow0[i] = bias;
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* iplane = in.ch(ci);
      const double* wk = &W.w[(std::size_t(co) * ci_n + ci) * k * k];
      if (k == 3 && w >= 2) {
        for (int y = 0; y < h; ++y) {
          double* orow = orow0 + std::size_t(y) * w;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = y + ky - 1;
            if (iy < 0 || iy >= h) continue;
            const double* irow = iplane + std::size_t(iy) * w;
            const double w0 = wk[ky * 3], w1 = wk[ky * 3 + 1], w2 = wk[ky * 3 + 2];
            orow[0] += w1 * irow[0] + w2 * irow[1];
            for (int x = 1; x < w - 1; ++x)
              orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
            orow[w - 1] += w0 * irow[w - 2] + w1 * irow[w - 1];
          }
        }
      } else {
        for (int y = 0; y < h; ++y) {
          double* orow = orow0 + std::size_t(y) * w;
          for (int ky = 0; ky < k; ++ky) {
            int iy = y + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* irow = iplane + std::size_t(iy) * w;
            for (int kx = 0; kx < k; ++kx) {
              double wv = wk[ky * k + kx];
              int x0 = std::max(0, pad - kx);
              int x1 = std::min(w, w + pad - kx);
              const double* ish = irow + kx - pad;
              for (int x = x0; x < x1; ++x) orow[x] += wv * ish[x];
            }
          }
        }
      }
    }
  }
}

// din may be null (inputs that need no gradient); dW/dB point into the flat
// gradient vector at the tensor offsets.
void conv_bwd(const Grid& in, const ParamTensor& W, const Grid& dout, Grid* din, double* dW,
              double* dB) {
  const int k = W.shape[2], pad = k / 2;
  const int co_n = W.shape[0], ci_n = W.shape[1];
  const int h = in.h, w = in.w;
  for (int co = 0; co < co_n; ++co) {
    const double* dplane = dout.ch(co);
    double acc = 0.0;
    for (std::size_t i = 0; i < std::size_t(h) * w; ++i) acc += dplane[i];
    dB[co] += acc;
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* iplane = in.ch(ci);
      double* dwk = dW + (std::size_t(co) * ci_n + ci) * k * k;
      if (k == 3 && w >= 2) {
        for (int ky = 0; ky < 3; ++ky) {
          double s0 = 0.0, s1 = 0.0, s2 = 0.0;
          for (int y = 0; y < h; ++y) {
            int iy = y + ky - 1;
            if (iy < 0 || iy >= h) continue;
            const double* drow = dplane + std::size_t(y) * w;
            const double* irow = iplane + std::size_t(iy) * w;
            s0 += drow[w - 1] * irow[w - 2];
            s1 += drow[0] * irow[0] + drow[w - 1] * irow[w - 1];
            s2 += drow[0] * irow[1];
            for (int x = 1; x < w - 1; ++x) {
              double g = drow[x];
              s0 += g * irow[x - 1];
              s1 += g * irow[x];
              s2 += g * irow[x + 1];
            }
          }
          dwk[ky * 3] += s0;
          dwk[ky * 3 + 1] += s1;
          dwk[ky * 3 + 2] += s2;
        }
        if (din) {
          double* dplane_in = din->ch(ci);
          const double* wk = &W.w[(std::size_t(co) * ci_n + ci) * 9];
          for (int ky = 0; ky < 3; ++ky) {
            const double w0 = wk[ky * 3], w1 = wk[ky * 3 + 1], w2 = wk[ky * 3 + 2];
            for (int y = 0; y < h; ++y) {
              int iy = y + ky - 1;
              if (iy < 0 || iy >= h) continue;
              const double* drow = dplane + std::size_t(y) * w;
              double* dirow = dplane_in + std::size_t(iy) * w;
              // din[ix] += w0*dout[ix+1] + w1*dout[ix] + w2*dout[ix-1]
              dirow[0] += w1 * drow[0] + w0 * drow[1];
              for (int ix = 1; ix < w - 1; ++ix)
                dirow[ix] += w2 * drow[ix - 1] + w1 * drow[ix] + w0 * drow[ix + 1];
              dirow[w - 1] += w2 * drow[w - 2] + w1 * drow[w - 1];
            }
          }
        }
        continue;
      }
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double s = 0.0;
          for (int y = 0; y < h; ++y) {
            int iy = y + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* drow = dplane + std::size_t(y) * w;
            const double* irow = iplane + std::size_t(iy) * w + kx - pad;
            int x0 = std::max(0, pad - kx);
            int x1 = std::min(w, w + pad - kx);
            for (int x = x0; x < x1; ++x) s += drow[x] * irow[x];
          }
          dwk[ky * k + kx] += s;
        }
      if (din) {
        double* dplane_in = din->ch(ci);
        const double* wk = &W.w[(std::size_t(co) * ci_n + ci) * k * k];
        for (int y = 0; y < h; ++y) {
          const double* drow = dplane + std::size_t(y) * w;
          for (int ky = 0; ky < k; ++ky) {
            int iy = y + ky - pad;
            if (iy < 0 || iy >= h) continue;
            double* dirow = dplane_in + std::size_t(iy) * w;
            for (int kx = 0; kx < k; ++kx) {
              double wv = wk[ky * k + kx];
              int x0 = std::max(0, pad - kx);
              int x1 = std::min(w, w + pad - kx);
              double* dish = dirow + kx - pad;
              for (int x = x0; x < x1; ++x) dish[x] += wv * drow[x];
            }
          }
        }
      }
    }
  }
}

// ---- group normalization (no affine), eps 1e-5 ---------------------------

constexpr double kGnEps = 1e-5;

int group_count(int channels, int preferred) {
  return (preferred > 0 && channels % preferred == 0) ? preferred : 1;
}

void gn_fwd(const Grid& x, int groups, Grid& out, std::vector<double>& mean,
            std::vector<double>& invstd) {
  const int cg = x.c / groups;
  const std::size_t plane = std::size_t(x.h) * x.w;
  const std::size_t n = cg * plane;
  mean.assign(groups, 0.0);
  invstd.assign(groups, 0.0);
  for (int g = 0; g < groups; ++g) {
    const double* base = x.ch(g * cg);
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += base[i];
    m /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = base[i] - m;
      var += d * d;
    }
    var /= double(n);
    double inv = 1.0 / std::sqrt(var + kGnEps);
    mean[g] = m;
    invstd[g] = inv;
    double* ob = out.ch(g * cg);
    for (std::size_t i = 0; i < n; ++i) ob[i] = (base[i] - m) * inv;
  }
}

// dx overwritten.
void gn_bwd(const Grid& x, const Grid& dout, int groups, const std::vector<double>& mean,
            const std::vector<double>& invstd, Grid& dx) {
  const int cg = x.c / groups;
  const std::size_t plane = std::size_t(x.h) * x.w;
  const std::size_t n = cg * plane;
  for (int g = 0; g < groups; ++g) {
    const double* xb = x.ch(g * cg);
    const double* db = dout.ch(g * cg);
    double* ob = dx.ch(g * cg);
    const double m = mean[g], inv = invstd[g];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double xhat = (xb[i] - m) * inv;
      sum_dy += db[i];
      sum_dy_xhat += db[i] * xhat;
    }
    const double invn = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      double xhat = (xb[i] - m) * inv;
      ob[i] = inv * (db[i] - invn * sum_dy - xhat * invn * sum_dy_xhat);
    }
  }
}

// ---- activations ----------------------------------------------------------

void silu_fwd(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * sigmoid(x[i]);
}
// dx overwritten
void silu_bwd(const double* x, const double* dout, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = sigmoid(x[i]);
    dx[i] = dout[i] * s * (1.0 + x[i] * (1.0 - s));
  }
}

void relu_fwd(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void relu_bwd(const double* x, const double* dout, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? dout[i] : 0.0;
}

// ---- dense layers ----------------------------------------------------------

void lin_fwd(const std::vector<double>& in, const ParamTensor& W, const ParamTensor& B,
             std::vector<double>& out) {
  const int m = W.shape[0], n = W.shape[1];
  out.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* row = &W.w[std::size_t(i) * n];
    double acc = B.w[i];
    for (int j = 0; j < n; ++j) acc += row[j] * in[j];
    out[i] = acc;
  }
}

void lin_bwd(const std::vector<double>& in, const ParamTensor& W, const std::vector<double>& dout,
             std::vector<double>* din, double* dW, double* dB) {
  const int m = W.shape[0], n = W.shape[1];
  for (int i = 0; i < m; ++i) {
    dB[i] += dout[i];
    double* drow = dW + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) drow[j] += dout[i] * in[j];
  }
  if (din) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < m; ++i) acc += W.w[std::size_t(i) * n + j] * dout[i];
      (*din)[j] += acc;
    }
  }
}

// ---- resampling ------------------------------------------------------------

void avgpool2_fwd(const Grid& in, Grid& out) {
  for (int c = 0; c < in.c; ++c) {
    const double* ip = in.ch(c);
    double* op = out.ch(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const double* r0 = ip + std::size_t(2 * y) * in.w + 2 * x;
        const double* r1 = r0 + in.w;
        op[std::size_t(y) * out.w + x] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
}

void avgpool2_bwd(const Grid& dout, Grid& din) {
  for (int c = 0; c < dout.c; ++c) {
    const double* dp = dout.ch(c);
    double* ip = din.ch(c);
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) {
        double g = 0.25 * dp[std::size_t(y) * dout.w + x];
        double* r0 = ip + std::size_t(2 * y) * din.w + 2 * x;
        double* r1 = r0 + din.w;
        r0[0] += g;
        r0[1] += g;
        r1[0] += g;
        r1[1] += g;
      }
  }
}

void upsample2_fwd(const Grid& in, Grid& out) {
  for (int c = 0; c < in.c; ++c) {
    const double* ip = in.ch(c);
    double* op = out.ch(c);
    for (int y = 0; y < out.h; ++y) {
      const double* irow = ip + std::size_t(y / 2) * in.w;
      double* orow = op + std::size_t(y) * out.w;
      for (int x = 0; x < out.w; ++x) orow[x] = irow[x / 2];
    }
  }
}

void upsample2_bwd(const Grid& dout, Grid& din) {
  for (int c = 0; c < dout.c; ++c) {
    const double* dp = dout.ch(c);
    double* ip = din.ch(c);
    for (int y = 0; y < dout.h; ++y) {
      double* irow = ip + std::size_t(y / 2) * din.w;
      const double* drow = dp + std::size_t(y) * dout.w;
      for (int x = 0; x < dout.w; ++x) irow[x / 2] += drow[x];
    }
  }
}

}  // namespace

// ---- construction -----------------------------------------------------------

void validate_denoiser_config(const DenoiserConfig& cfg) {
  if (cfg.levels < 1) throw std::invalid_argument("DenoiserConfig: levels must be >= 1");
  if (int(cfg.channel_mult.size()) != cfg.levels)
    throw std::invalid_argument("DenoiserConfig: channel_mult size must equal levels");
  int down = 1 << (cfg.levels - 1);
  if (cfg.height % down != 0 || cfg.width % down != 0)
    throw std::invalid_argument("DenoiserConfig: spatial size must divide 2^(levels-1)");
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
    throw std::invalid_argument("DenoiserConfig: time_embed_dim must be even and >= 2");
  if (cfg.base_channels < 1 || cfg.spade_hidden < 1 || cfg.bottleneck_hidden < 1)
    throw std::invalid_argument("DenoiserConfig: channel counts must be positive");
  for (int l : cfg.attention_levels)
    if (l < 0 || l >= cfg.levels)
      throw std::invalid_argument("DenoiserConfig: attention level out of range");
}

nlohmann::json denoiser_config_to_json(const DenoiserConfig& cfg) {
  return {{"levels", cfg.levels},
          {"base_channels", cfg.base_channels},
          {"channel_mult", cfg.channel_mult},
          {"attention_levels", cfg.attention_levels},
          {"time_embed_dim", cfg.time_embed_dim},
          {"spade_hidden", cfg.spade_hidden},
          {"bottleneck_hidden", cfg.bottleneck_hidden},
          {"groups", cfg.groups},
          {"height", cfg.height},
          {"width", cfg.width}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig cfg;
  cfg.levels = j.at("levels").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  cfg.attention_levels = j.at("attention_levels").get<std::vector<int>>();
  cfg.time_embed_dim = j.at("time_embed_dim").get<int>();
  cfg.spade_hidden = j.at("spade_hidden").get<int>();
  cfg.bottleneck_hidden = j.at("bottleneck_hidden").get<int>();
  cfg.groups = j.at("groups").get<int>();
  cfg.height = j.at("height").get<int>();
  cfg.width = j.at("width").get<int>();
  validate_denoiser_config(cfg);
  return cfg;
}

int Denoiser::add_param(const std::string& name, std::vector<int> shape, ParamKind kind,
                        int enc_block, int dec_block) {
  ParamTensor p;
  p.name = name;
  p.shape = std::move(shape);
  std::size_t n = 1;
  for (int d : p.shape) n *= std::size_t(d);
  p.w.assign(n, 0.0);
  p.kind = kind;
  p.enc_block = enc_block;
  p.dec_block = dec_block;
  p.offset = total_params_;
  total_params_ += n;
  params_.push_back(std::move(p));
  return int(params_.size()) - 1;
}

Denoiser::BlockIds Denoiser::add_block(const std::string& prefix, int cin, int cout, int res_h,
                                       int res_w, bool attn, ParamKind /*unused*/, int enc_block,
                                       int dec_block) {
  const int ch = cfg_.spade_hidden;
  BlockIds b;
  b.cin = cin;
  b.cout = cout;
  b.res_h = res_h;
  b.res_w = res_w;
  b.attn = attn;
  auto conv = [&](const std::string& n, int co, int ci, int k, ParamKind kind) {
    return add_param(prefix + n + ".w", {co, ci, k, k}, kind, enc_block, dec_block);
  };
  auto bias = [&](const std::string& n, int co, ParamKind kind) {
    return add_param(prefix + n + ".b", {co}, kind, enc_block, dec_block);
  };
  b.sh1 = conv("spade1.shared", ch, 1, 3, ParamKind::Spade);
  bias("spade1.shared", ch, ParamKind::Spade);
  b.g1 = conv("spade1.gamma", cin, ch, 3, ParamKind::Spade);
  bias("spade1.gamma", cin, ParamKind::Spade);
  b.b1 = conv("spade1.beta", cin, ch, 3, ParamKind::Spade);
  bias("spade1.beta", cin, ParamKind::Spade);
  b.conv1 = conv("conv1", cout, cin, 3, ParamKind::Conv);
  bias("conv1", cout, ParamKind::Conv);
  b.tproj = add_param(prefix + "temb_proj.w", {2 * cout, cfg_.time_embed_dim},
                      ParamKind::TembProj, enc_block, dec_block);
  add_param(prefix + "temb_proj.b", {2 * cout}, ParamKind::TembProj, enc_block, dec_block);
  b.sh2 = conv("spade2.shared", ch, 1, 3, ParamKind::Spade);
  bias("spade2.shared", ch, ParamKind::Spade);
  b.g2 = conv("spade2.gamma", cout, ch, 3, ParamKind::Spade);
  bias("spade2.gamma", cout, ParamKind::Spade);
  b.b2 = conv("spade2.beta", cout, ch, 3, ParamKind::Spade);
  bias("spade2.beta", cout, ParamKind::Spade);
  b.conv2 = conv("conv2", cout, cout, 3, ParamKind::Conv);
  bias("conv2", cout, ParamKind::Conv);
  if (cin != cout) {
    b.skip = conv("skip", cout, cin, 1, ParamKind::Skip);
    bias("skip", cout, ParamKind::Skip);
  }
  if (attn) {
    b.q = conv("attn.q", cout, cout, 1, ParamKind::Attention);
    bias("attn.q", cout, ParamKind::Attention);
    b.k = conv("attn.k", cout, cout, 1, ParamKind::Attention);
    bias("attn.k", cout, ParamKind::Attention);
    b.v = conv("attn.v", cout, cout, 1, ParamKind::Attention);
    bias("attn.v", cout, ParamKind::Attention);
    b.proj = conv("attn.proj", cout, cout, 1, ParamKind::Attention);
    bias("attn.proj", cout, ParamKind::Attention);
  }
  return b;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  validate_denoiser_config(cfg_);
  const int L = cfg_.levels, B = cfg_.base_channels, D = cfg_.time_embed_dim;
  auto channels = [&](int l) { return B * cfg_.channel_mult[l]; };
  auto has_attn = [&](int l) {
    for (int a : cfg_.attention_levels)
      if (a == l) return true;
    return false;
  };

  stem_w_ = add_param("stem.conv.w", {B, 2, 3, 3}, ParamKind::Stem, -1, -1);
  stem_b_ = add_param("stem.conv.b", {B}, ParamKind::Stem, -1, -1);
  temb1_w_ = add_param("temb.fc1.w", {D, D}, ParamKind::TembShared, -1, -1);
  temb1_b_ = add_param("temb.fc1.b", {D}, ParamKind::TembShared, -1, -1);
  temb2_w_ = add_param("temb.fc2.w", {D, D}, ParamKind::TembShared, -1, -1);
  temb2_b_ = add_param("temb.fc2.b", {D}, ParamKind::TembShared, -1, -1);

  int h = cfg_.height, w = cfg_.width;
  int cin = B;
  for (int l = 0; l < L; ++l) {
    enc_.push_back(add_block("enc" + std::to_string(l) + ".", cin, channels(l), h, w,
                             has_attn(l), ParamKind::Conv, l, -1));
    cin = channels(l);
    if (l < L - 1) {
      h /= 2;
      w /= 2;
    }
  }

  const int flat = channels(L - 1) * h * w;
  const int hidden = cfg_.bottleneck_hidden;
  mlp1_w_ = add_param("bottleneck.fc1.w", {hidden, flat}, ParamKind::Mlp, -1, -1);
  mlp1_b_ = add_param("bottleneck.fc1.b", {hidden}, ParamKind::Mlp, -1, -1);
  mlp2_w_ = add_param("bottleneck.fc2.w", {flat, hidden}, ParamKind::Mlp, -1, -1);
  mlp2_b_ = add_param("bottleneck.fc2.b", {flat}, ParamKind::Mlp, -1, -1);

  dec_.resize(L);
  int cu = channels(L - 1);
  for (int l = L - 1; l >= 0; --l) {
    int hh = cfg_.height >> l, ww = cfg_.width >> l;
    dec_[l] = add_block("dec" + std::to_string(l) + ".", cu + channels(l), channels(l), hh, ww,
                        has_attn(l), ParamKind::Conv, -1, l);
    cu = channels(l);
  }

  head_w_ = add_param("head.conv.w", {1, channels(0), 3, 3}, ParamKind::Head, -1, -1);
  head_b_ = add_param("head.conv.b", {1}, ParamKind::Head, -1, -1);

  init_weights(init_seed);
}

void Denoiser::init_weights(std::uint64_t seed) {
  RngStream rng(derive_seed(seed, 0x1417));
  auto is_zero_init = [&](const ParamTensor& p) {
    // biases, SPADE gamma/beta convs, second convs, time projections,
    // attention output proj, bottleneck fc2, head: start as identity/no-op.
    if (p.shape.size() == 1) return true;
    if (p.name.find("gamma.w") != std::string::npos) return true;
    if (p.name.find("beta.w") != std::string::npos) return true;
    if (p.name.find("conv2.w") != std::string::npos) return true;
    if (p.name.find("temb_proj.w") != std::string::npos) return true;
    if (p.name.find("attn.proj.w") != std::string::npos) return true;
    if (p.name.find("bottleneck.fc2.w") != std::string::npos) return true;
    if (p.name.find("head.conv.w") != std::string::npos) return true;
    return false;
  };
  for (auto& p : params_) {
    if (is_zero_init(p)) continue;
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < p.shape.size(); ++d) fan_in *= std::size_t(p.shape[d]);
    double stddev = std::sqrt(2.0 / double(fan_in));
    for (auto& v : p.w) v = rng.normal(0.0, stddev);
  }
}

Workspace Denoiser::make_workspace() const {
  Workspace ws;
  const int L = cfg_.levels;
  ws.cond.resize(L);
  ws.enc.resize(L);
  ws.dec.resize(L);
  ws.enc_out.resize(L);
  ws.pooled.resize(L);
  ws.cat_in.resize(L);
  ws.up_out.resize(L);
  ws.d_enc_out.resize(L);
  ws.d_pooled.resize(L);
  ws.d_cat.resize(L);
  ws.d_up.resize(L);

  auto stash_block = [&](const BlockIds& b, Workspace::BlockStash& s) {
    const int ch = cfg_.spade_hidden;
    int h = b.res_h, w = b.res_w;
    s.x = Grid(b.cin, h, w);
    s.sp1.sh_pre = Grid(ch, h, w);
    s.sp1.sh = Grid(ch, h, w);
    s.sp1.gamma = Grid(b.cin, h, w);
    s.sp1.beta = Grid(b.cin, h, w);
    s.sp1.normed = Grid(b.cin, h, w);
    s.sp1.modulated = Grid(b.cin, h, w);
    s.sp1.act = Grid(b.cin, h, w);
    s.sp1.d_sh = Grid(ch, h, w);
    s.sp1.d_normed = Grid(b.cin, h, w);
    s.c1 = Grid(b.cout, h, w);
    s.c1t = Grid(b.cout, h, w);
    s.ts.assign(2 * b.cout, 0.0);
    s.sp2.sh_pre = Grid(ch, h, w);
    s.sp2.sh = Grid(ch, h, w);
    s.sp2.gamma = Grid(b.cout, h, w);
    s.sp2.beta = Grid(b.cout, h, w);
    s.sp2.normed = Grid(b.cout, h, w);
    s.sp2.modulated = Grid(b.cout, h, w);
    s.sp2.act = Grid(b.cout, h, w);
    s.sp2.d_sh = Grid(ch, h, w);
    s.sp2.d_normed = Grid(b.cout, h, w);
    s.c2 = Grid(b.cout, h, w);
    if (b.skip >= 0) s.skip_out = Grid(b.cout, h, w);
    s.r = Grid(b.cout, h, w);
    s.out = Grid(b.cout, h, w);
    s.d_x = Grid(b.cin, h, w);
    s.d_c1 = Grid(b.cout, h, w);
    s.d_c1t = Grid(b.cout, h, w);
    s.d_c2 = Grid(b.cout, h, w);
    s.d_r = Grid(b.cout, h, w);
    s.d_out = Grid(b.cout, h, w);
    if (b.attn) {
      int n = h * w;
      s.na = Grid(b.cout, h, w);
      s.q = Grid(b.cout, h, w);
      s.k = Grid(b.cout, h, w);
      s.v = Grid(b.cout, h, w);
      s.attn = Grid(1, n, n);
      s.o = Grid(b.cout, h, w);
      s.proj_out = Grid(b.cout, h, w);
      s.d_na = Grid(b.cout, h, w);
      s.d_q = Grid(b.cout, h, w);
      s.d_k = Grid(b.cout, h, w);
      s.d_v = Grid(b.cout, h, w);
      s.d_attn = Grid(1, n, n);
      s.d_o = Grid(b.cout, h, w);
    }
  };

  for (int l = 0; l < L; ++l) {
    int h = cfg_.height >> l, w = cfg_.width >> l;
    ws.cond[l] = Grid(1, h, w);
    stash_block(enc_[l], ws.enc[l]);
    stash_block(dec_[l], ws.dec[l]);
    ws.enc_out[l] = Grid(enc_[l].cout, h, w);
    ws.d_enc_out[l] = Grid(enc_[l].cout, h, w);
    ws.pooled[l] = Grid(l == 0 ? cfg_.base_channels : enc_[l - 1].cout, h, w);
    ws.d_pooled[l] = Grid(ws.pooled[l].c, h, w);
    ws.cat_in[l] = Grid(dec_[l].cin, h, w);
    ws.d_cat[l] = Grid(dec_[l].cin, h, w);
    if (l > 0) {
      ws.up_out[l - 1] = Grid(enc_[l].cout, cfg_.height >> (l - 1), cfg_.width >> (l - 1));
      ws.d_up[l - 1] = Grid(ws.up_out[l - 1].c, ws.up_out[l - 1].h, ws.up_out[l - 1].w);
    }
  }
  ws.stem_in = Grid(2, cfg_.height, cfg_.width);
  ws.stem_out = Grid(cfg_.base_channels, cfg_.height, cfg_.width);
  ws.d_stem_out = Grid(cfg_.base_channels, cfg_.height, cfg_.width);
  const int hb = cfg_.height >> (L - 1), wb = cfg_.width >> (L - 1);
  const int flat = enc_[L - 1].cout * hb * wb;
  ws.flat.assign(flat, 0.0);
  ws.m2.assign(flat, 0.0);
  ws.bneck_out = Grid(enc_[L - 1].cout, hb, wb);
  ws.d_bneck = Grid(enc_[L - 1].cout, hb, wb);
  ws.head_norm = Grid(enc_[0].cout, cfg_.height, cfg_.width);
  ws.head_act = Grid(enc_[0].cout, cfg_.height, cfg_.width);
  ws.d_head_norm = Grid(enc_[0].cout, cfg_.height, cfg_.width);
  ws.d_head_act = Grid(enc_[0].cout, cfg_.height, cfg_.width);
  ws.eps_hat = Grid(1, cfg_.height, cfg_.width);
  return ws;
}

// ---- forward ----------------------------------------------------------------

namespace {

void spade_fwd(const Grid& x, const Grid& cond, const ParamTensor& sh_w, const ParamTensor& sh_b,
               const ParamTensor& g_w, const ParamTensor& g_b, const ParamTensor& b_w,
               const ParamTensor& b_b, int groups, Workspace::SpadeStash& s,
               std::vector<double>& mean, std::vector<double>& invstd) {
  conv_fwd(cond, sh_w, sh_b, s.sh_pre);
  relu_fwd(s.sh_pre.v.data(), s.sh.v.data(), s.sh.size());
  conv_fwd(s.sh, g_w, g_b, s.gamma);
  conv_fwd(s.sh, b_w, b_b, s.beta);
  gn_fwd(x, groups, s.normed, mean, invstd);
  for (std::size_t i = 0; i < x.size(); ++i)
    s.modulated.v[i] = s.normed.v[i] * (1.0 + s.gamma.v[i]) + s.beta.v[i];
  silu_fwd(s.modulated.v.data(), s.act.v.data(), s.act.size());
}

}  // namespace

Grid Denoiser::forward(const Grid& x_t, const Grid& nom_signal, int t, Workspace& ws) const {
  const int L = cfg_.levels, D = cfg_.time_embed_dim;
  if (x_t.c != 1 || x_t.h != cfg_.height || x_t.w != cfg_.width || nom_signal.h != cfg_.height ||
      nom_signal.w != cfg_.width || nom_signal.c != 1)
    throw ShapeMismatch("denoiser forward: grid shape does not match config");
  ws.last_t = t;

  // time embedding
  const int half = D / 2;
  ws.temb0.assign(D, 0.0);
  for (int i = 0; i < half; ++i) {
    double f = std::exp(-std::log(10000.0) * double(i) / double(half));
    ws.temb0[i] = std::sin(t * f);
    ws.temb0[half + i] = std::cos(t * f);
  }
  lin_fwd(ws.temb0, params_[temb1_w_], params_[temb1_b_], ws.temb_h);
  ws.temb_hs.assign(D, 0.0);
  silu_fwd(ws.temb_h.data(), ws.temb_hs.data(), D);
  lin_fwd(ws.temb_hs, params_[temb2_w_], params_[temb2_b_], ws.temb);

  // conditioning pyramid
  ws.cond[0] = nom_signal;
  for (int l = 1; l < L; ++l) avgpool2_fwd(ws.cond[l - 1], ws.cond[l]);

  // stem
  std::memcpy(ws.stem_in.ch(0), x_t.ch(0), sizeof(double) * x_t.size());
  std::memcpy(ws.stem_in.ch(1), nom_signal.ch(0), sizeof(double) * nom_signal.size());
  conv_fwd(ws.stem_in, params_[stem_w_], params_[stem_b_], ws.stem_out);

  auto run_block = [&](const BlockIds& b, Workspace::BlockStash& s, const Grid& input,
                       const Grid& cond) {
    s.x = input;
    spade_fwd(s.x, cond, params_[b.sh1], params_[b.sh1 + 1], params_[b.g1], params_[b.g1 + 1],
              params_[b.b1], params_[b.b1 + 1], group_count(b.cin, cfg_.groups), s.sp1,
              s.sp1.mean, s.sp1.invstd);
    conv_fwd(s.sp1.act, params_[b.conv1], params_[b.conv1 + 1], s.c1);
    lin_fwd(ws.temb, params_[b.tproj], params_[b.tproj + 1], s.ts);
    const std::size_t plane = std::size_t(b.res_h) * b.res_w;
    for (int c = 0; c < b.cout; ++c) {
      double scale = 1.0 + s.ts[c], shift = s.ts[b.cout + c];
      const double* src = s.c1.ch(c);
      double* dst = s.c1t.ch(c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
    spade_fwd(s.c1t, cond, params_[b.sh2], params_[b.sh2 + 1], params_[b.g2], params_[b.g2 + 1],
              params_[b.b2], params_[b.b2 + 1], group_count(b.cout, cfg_.groups), s.sp2,
              s.sp2.mean, s.sp2.invstd);
    conv_fwd(s.sp2.act, params_[b.conv2], params_[b.conv2 + 1], s.c2);
    if (b.skip >= 0) {
      conv_fwd(s.x, params_[b.skip], params_[b.skip + 1], s.skip_out);
      for (std::size_t i = 0; i < s.r.size(); ++i) s.r.v[i] = s.skip_out.v[i] + s.c2.v[i];
    } else {
      for (std::size_t i = 0; i < s.r.size(); ++i) s.r.v[i] = s.x.v[i] + s.c2.v[i];
    }
    if (!b.attn) {
      s.out = s.r;
      return;
    }
    gn_fwd(s.r, group_count(b.cout, cfg_.groups), s.na, s.na_mean, s.na_invstd);
    conv_fwd(s.na, params_[b.q], params_[b.q + 1], s.q);
    conv_fwd(s.na, params_[b.k], params_[b.k + 1], s.k);
    conv_fwd(s.na, params_[b.v], params_[b.v + 1], s.v);
    const int n = b.res_h * b.res_w, C = b.cout;
    const double scale = 1.0 / std::sqrt(double(C));
    for (int i = 0; i < n; ++i) {
      double* arow = &s.attn.v[std::size_t(i) * n];
      double mx = -1e300;
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c) acc += s.q.v[std::size_t(c) * n + i] * s.k.v[std::size_t(c) * n + j];
        arow[j] = acc * scale;
        mx = std::max(mx, arow[j]);
      }
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        arow[j] = std::exp(arow[j] - mx);
        sum += arow[j];
      }
      for (int j = 0; j < n; ++j) arow[j] /= sum;
    }
    for (int c = 0; c < C; ++c) {
      const double* vrow = s.v.ch(c);
      double* orow = s.o.ch(c);
      for (int i = 0; i < n; ++i) {
        const double* arow = &s.attn.v[std::size_t(i) * n];
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += vrow[j] * arow[j];
        orow[i] = acc;
      }
    }
    conv_fwd(s.o, params_[b.proj], params_[b.proj + 1], s.proj_out);
    for (std::size_t i = 0; i < s.out.size(); ++i) s.out.v[i] = s.r.v[i] + s.proj_out.v[i];
  };

  // encoder
  for (int l = 0; l < L; ++l) {
    const Grid& input = l == 0 ? ws.stem_out : ws.pooled[l];
    run_block(enc_[l], ws.enc[l], input, ws.cond[l]);
    ws.enc_out[l] = ws.enc[l].out;
    if (l < L - 1) avgpool2_fwd(ws.enc_out[l], ws.pooled[l + 1]);
  }

  // bottleneck MLP with residual connection
  ws.flat.assign(ws.enc_out[L - 1].v.begin(), ws.enc_out[L - 1].v.end());
  lin_fwd(ws.flat, params_[mlp1_w_], params_[mlp1_b_], ws.m1);
  ws.m1s.assign(ws.m1.size(), 0.0);
  silu_fwd(ws.m1.data(), ws.m1s.data(), ws.m1.size());
  lin_fwd(ws.m1s, params_[mlp2_w_], params_[mlp2_b_], ws.m2);
  for (std::size_t i = 0; i < ws.bneck_out.size(); ++i)
    ws.bneck_out.v[i] = ws.enc_out[L - 1].v[i] + ws.m2[i];

  // decoder
  const Grid* u = &ws.bneck_out;
  for (int l = L - 1; l >= 0; --l) {
    Grid& cat = ws.cat_in[l];
    std::memcpy(cat.v.data(), u->v.data(), sizeof(double) * u->size());
    std::memcpy(cat.v.data() + u->size(), ws.enc_out[l].v.data(),
                sizeof(double) * ws.enc_out[l].size());
    run_block(dec_[l], ws.dec[l], cat, ws.cond[l]);
    if (l > 0) {
      upsample2_fwd(ws.dec[l].out, ws.up_out[l - 1]);
      u = &ws.up_out[l - 1];
    }
  }

  // head
  gn_fwd(ws.dec[0].out, group_count(enc_[0].cout, cfg_.groups), ws.head_norm, ws.head_mean,
         ws.head_invstd);
  silu_fwd(ws.head_norm.v.data(), ws.head_act.v.data(), ws.head_act.size());
  conv_fwd(ws.head_act, params_[head_w_], params_[head_b_], ws.eps_hat);
  return ws.eps_hat;
}

// ---- backward ---------------------------------------------------------------

void Denoiser::backward(const Grid& d_eps_hat, Workspace& ws, std::vector<double>& grad) const {
  const int L = cfg_.levels;
  if (grad.size() != total_params_) grad.assign(total_params_, 0.0);

  ws.d_temb.assign(cfg_.time_embed_dim, 0.0);

  auto gptr = [&](int idx) { return grad.data() + params_[idx].offset; };

  auto spade_bwd = [&](const BlockIds& b, Workspace::SpadeStash& s, const Grid& x,
                       const Grid& cond, const Grid& d_act, Grid& d_x_out, bool accumulate,
                       int sh_idx, int g_idx, int b_idx, int channels) {
    // d_act -> silu -> modulation -> gn + conv weights
    Grid& d_mod = s.d_normed;  // reuse as scratch, holds d(modulated)
    silu_bwd(s.modulated.v.data(), d_act.v.data(), d_mod.v.data(), d_mod.size());
    // gamma/beta conv weight grads; d(normed) in place
    s.d_sh.zero();
    Grid d_gamma(channels, x.h, x.w);
    for (std::size_t i = 0; i < d_gamma.size(); ++i) d_gamma.v[i] = d_mod.v[i] * s.normed.v[i];
    conv_bwd(s.sh, params_[g_idx], d_gamma, &s.d_sh, gptr(g_idx), gptr(g_idx + 1));
    conv_bwd(s.sh, params_[b_idx], d_mod, &s.d_sh, gptr(b_idx), gptr(b_idx + 1));
    Grid d_sh_pre(s.sh_pre.c, x.h, x.w);
    relu_bwd(s.sh_pre.v.data(), s.d_sh.v.data(), d_sh_pre.v.data(), d_sh_pre.size());
    conv_bwd(cond, params_[sh_idx], d_sh_pre, nullptr, gptr(sh_idx), gptr(sh_idx + 1));
    for (std::size_t i = 0; i < d_mod.size(); ++i) d_mod.v[i] *= (1.0 + s.gamma.v[i]);
    Grid d_from_gn(channels, x.h, x.w);
    gn_bwd(x, d_mod, group_count(channels, cfg_.groups), s.mean, s.invstd, d_from_gn);
    if (accumulate) {
      for (std::size_t i = 0; i < d_x_out.size(); ++i) d_x_out.v[i] += d_from_gn.v[i];
    } else {
      d_x_out = d_from_gn;
    }
  };

  auto block_bwd = [&](const BlockIds& b, Workspace::BlockStash& s, const Grid& cond,
                       Grid& d_input_accum) {
    const int C = b.cout;
    const std::size_t plane = std::size_t(b.res_h) * b.res_w;
    if (b.attn) {
      const int n = b.res_h * b.res_w;
      const double scale = 1.0 / std::sqrt(double(C));
      // residual: d_r = d_out; attention path adds more later
      s.d_r = s.d_out;
      s.d_o.zero();
      conv_bwd(s.o, params_[b.proj], s.d_out, &s.d_o, gptr(b.proj), gptr(b.proj + 1));
      // o[c,i] = sum_j v[c,j] A[i][j]
      s.d_v.zero();
      s.d_attn.zero();
      for (int c = 0; c < C; ++c) {
        const double* do_row = s.d_o.ch(c);
        const double* v_row = s.v.ch(c);
        double* dv_row = s.d_v.ch(c);
        for (int i = 0; i < n; ++i) {
          const double g = do_row[i];
          const double* arow = &s.attn.v[std::size_t(i) * n];
          double* darow = &s.d_attn.v[std::size_t(i) * n];
          for (int j = 0; j < n; ++j) {
            dv_row[j] += g * arow[j];
            darow[j] += g * v_row[j];
          }
        }
      }
      // softmax backward into d_scores (reuse d_attn in place)
      for (int i = 0; i < n; ++i) {
        double* darow = &s.d_attn.v[std::size_t(i) * n];
        const double* arow = &s.attn.v[std::size_t(i) * n];
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += darow[j] * arow[j];
        for (int j = 0; j < n; ++j) darow[j] = arow[j] * (darow[j] - dot);
      }
      s.d_q.zero();
      s.d_k.zero();
      for (int c = 0; c < C; ++c) {
        const double* qrow = s.q.ch(c);
        const double* krow = s.k.ch(c);
        double* dq = s.d_q.ch(c);
        double* dk = s.d_k.ch(c);
        for (int i = 0; i < n; ++i) {
          const double* dsrow = &s.d_attn.v[std::size_t(i) * n];
          double acc = 0.0;
          for (int j = 0; j < n; ++j) {
            acc += dsrow[j] * krow[j];
            dk[j] += dsrow[j] * qrow[i] * scale;
          }
          dq[i] += acc * scale;
        }
      }
      s.d_na.zero();
      conv_bwd(s.na, params_[b.q], s.d_q, &s.d_na, gptr(b.q), gptr(b.q + 1));
      conv_bwd(s.na, params_[b.k], s.d_k, &s.d_na, gptr(b.k), gptr(b.k + 1));
      conv_bwd(s.na, params_[b.v], s.d_v, &s.d_na, gptr(b.v), gptr(b.v + 1));
      Grid d_r_from_attn(C, b.res_h, b.res_w);
      gn_bwd(s.r, s.d_na, group_count(C, cfg_.groups), s.na_mean, s.na_invstd, d_r_from_attn);
      for (std::size_t i = 0; i < s.d_r.size(); ++i) s.d_r.v[i] += d_r_from_attn.v[i];
    } else {
      s.d_r = s.d_out;
    }

    // r = skip(x) + c2
    s.d_x.zero();
    if (b.skip >= 0) {
      conv_bwd(s.x, params_[b.skip], s.d_r, &s.d_x, gptr(b.skip), gptr(b.skip + 1));
    } else {
      for (std::size_t i = 0; i < s.d_x.size(); ++i) s.d_x.v[i] += s.d_r.v[i];
    }
    // conv2 <- spade2.act
    Grid d_a2(C, b.res_h, b.res_w);
    conv_bwd(s.sp2.act, params_[b.conv2], s.d_r, &d_a2, gptr(b.conv2), gptr(b.conv2 + 1));
    spade_bwd(b, s.sp2, s.c1t, cond, d_a2, s.d_c1t, /*accumulate=*/false, b.sh2, b.g2, b.b2, C);

    // time modulation: c1t = c1 * (1 + ts) + tb
    std::vector<double> d_ts(2 * C, 0.0);
    for (int c = 0; c < C; ++c) {
      const double* dsrc = s.d_c1t.ch(c);
      const double* c1row = s.c1.ch(c);
      double* ddst = s.d_c1.ch(c);
      const double sc = 1.0 + s.ts[c];
      double dts = 0.0, dtb = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        ddst[i] = dsrc[i] * sc;
        dts += dsrc[i] * c1row[i];
        dtb += dsrc[i];
      }
      d_ts[c] = dts;
      d_ts[C + c] = dtb;
    }
    lin_bwd(ws.temb, params_[b.tproj], d_ts, &ws.d_temb, gptr(b.tproj), gptr(b.tproj + 1));

    Grid d_a1(b.cin, b.res_h, b.res_w);
    d_a1.zero();
    conv_bwd(s.sp1.act, params_[b.conv1], s.d_c1, &d_a1, gptr(b.conv1), gptr(b.conv1 + 1));
    spade_bwd(b, s.sp1, s.x, cond, d_a1, s.d_x, /*accumulate=*/true, b.sh1, b.g1, b.b1, b.cin);

    for (std::size_t i = 0; i < d_input_accum.size(); ++i) d_input_accum.v[i] += s.d_x.v[i];
  };

  // head
  ws.d_head_act.zero();
  conv_bwd(ws.head_act, params_[head_w_], d_eps_hat, &ws.d_head_act, gptr(head_w_),
           gptr(head_b_));
  silu_bwd(ws.head_norm.v.data(), ws.d_head_act.v.data(), ws.d_head_norm.v.data(),
           ws.d_head_norm.size());
  ws.dec[0].d_out.zero();
  gn_bwd(ws.dec[0].out, ws.d_head_norm, group_count(enc_[0].cout, cfg_.groups), ws.head_mean,
         ws.head_invstd, ws.dec[0].d_out);

  // decoder blocks in reverse execution order (levels 0 .. L-1)
  ws.d_bneck.zero();
  for (int l = 0; l < L; ++l) ws.d_enc_out[l].zero();
  for (int l = 0; l < L; ++l) {
    // for l > 0, ws.dec[l].d_out was filled by the upsample backward below
    ws.d_cat[l].zero();
    block_bwd(dec_[l], ws.dec[l], ws.cond[l], ws.d_cat[l]);
    // split concat gradient: first Cu channels -> u path, rest -> enc_out[l]
    const std::size_t cu = ws.cat_in[l].size() - ws.enc_out[l].size();
    for (std::size_t i = 0; i < ws.enc_out[l].size(); ++i)
      ws.d_enc_out[l].v[i] += ws.d_cat[l].v[cu + i];
    if (l < L - 1) {
      // u for level l was upsample(out of block l+1)
      Grid& dup = ws.d_up[l];
      std::memcpy(dup.v.data(), ws.d_cat[l].v.data(), sizeof(double) * cu);
      ws.dec[l + 1].d_out.zero();
      upsample2_bwd(dup, ws.dec[l + 1].d_out);
    } else {
      for (std::size_t i = 0; i < cu; ++i) ws.d_bneck.v[i] += ws.d_cat[l].v[i];
    }
  }

  // bottleneck backward: residual + MLP path
  for (std::size_t i = 0; i < ws.d_bneck.size(); ++i) ws.d_enc_out[L - 1].v[i] += ws.d_bneck.v[i];
  ws.d_m2.assign(ws.d_bneck.v.begin(), ws.d_bneck.v.end());
  ws.d_m1s.assign(ws.m1s.size(), 0.0);
  lin_bwd(ws.m1s, params_[mlp2_w_], ws.d_m2, &ws.d_m1s, gptr(mlp2_w_), gptr(mlp2_b_));
  ws.d_m1.assign(ws.m1.size(), 0.0);
  silu_bwd(ws.m1.data(), ws.d_m1s.data(), ws.d_m1.data(), ws.d_m1.size());
  ws.d_flat.assign(ws.flat.size(), 0.0);
  lin_bwd(ws.flat, params_[mlp1_w_], ws.d_m1, &ws.d_flat, gptr(mlp1_w_), gptr(mlp1_b_));
  for (std::size_t i = 0; i < ws.d_flat.size(); ++i) ws.d_enc_out[L - 1].v[i] += ws.d_flat[i];

  // encoder blocks, deepest first
  ws.d_stem_out.zero();
  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) {
      // gradient through the avgpool that fed level l+1
      avgpool2_bwd(ws.d_pooled[l + 1], ws.d_enc_out[l]);
    }
    ws.enc[l].d_out = ws.d_enc_out[l];
    if (l > 0) {
      ws.d_pooled[l].zero();
      block_bwd(enc_[l], ws.enc[l], ws.cond[l], ws.d_pooled[l]);
    } else {
      block_bwd(enc_[l], ws.enc[l], ws.cond[l], ws.d_stem_out);
    }
  }

  // stem
  conv_bwd(ws.stem_in, params_[stem_w_], ws.d_stem_out, nullptr, gptr(stem_w_), gptr(stem_b_));

  // shared time MLP
  std::vector<double> d_temb_hs(cfg_.time_embed_dim, 0.0);
  lin_bwd(ws.temb_hs, params_[temb2_w_], ws.d_temb, &d_temb_hs, gptr(temb2_w_), gptr(temb2_b_));
  std::vector<double> d_temb_h(cfg_.time_embed_dim, 0.0);
  silu_bwd(ws.temb_h.data(), d_temb_hs.data(), d_temb_h.data(), d_temb_h.size());
  lin_bwd(ws.temb0, params_[temb1_w_], d_temb_h, nullptr, gptr(temb1_w_), gptr(temb1_b_));
}

// ---- freeze / checkpoint ------------------------------------------------------

std::vector<bool> Denoiser::freeze_mask(const FreezeSpec& spec) const {
  for (int k : spec.frozen_blocks)
    if (k < 1 || k > cfg_.levels)
      throw UnknownBlockIndex("freeze: block index " + std::to_string(k) + " outside 1.." +
                              std::to_string(cfg_.levels));
  const bool whole_blocks = spec.frozen_layer_kinds.empty() ||
                            spec.frozen_layer_kinds.count(FreezeKind::AllInBlock) > 0;
  std::vector<bool> mask(params_.size(), false);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const ParamTensor& p = params_[i];
    if (whole_blocks && !spec.frozen_blocks.empty()) {
      for (int k : spec.frozen_blocks)
        if (p.enc_block == k - 1 || p.dec_block == k - 1) mask[i] = true;
    }
    if (spec.frozen_layer_kinds.count(FreezeKind::Attention) && p.kind == ParamKind::Attention)
      mask[i] = true;
    if (spec.frozen_layer_kinds.count(FreezeKind::ConditionalNorm) && p.kind == ParamKind::Spade)
      mask[i] = true;
    if (spec.frozen_layer_kinds.count(FreezeKind::Bottleneck) && p.kind == ParamKind::Mlp)
      mask[i] = true;
  }
  return mask;
}

Checkpoint Denoiser::to_checkpoint(const ScheduleSpec& schedule,
                                   const nlohmann::json& metadata) const {
  Checkpoint ckpt;
  ckpt.schedule = schedule;
  ckpt.config = cfg_;
  ckpt.metadata = metadata;
  ckpt.tensors.reserve(params_.size());
  for (const auto& p : params_) ckpt.tensors.push_back({p.name, p.shape, p.w});
  return ckpt;
}

void Denoiser::load_tensors(const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != params_.size())
    throw ShapeMismatch("checkpoint tensor count does not match denoiser");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const NamedTensor* src = nullptr;
    if (ckpt.tensors[i].name == params_[i].name) {
      src = &ckpt.tensors[i];
    } else {
      for (const auto& t : ckpt.tensors)
        if (t.name == params_[i].name) {
          src = &t;
          break;
        }
    }
    if (!src) throw ShapeMismatch("checkpoint missing tensor " + params_[i].name);
    if (src->shape != params_[i].shape || src->values.size() != params_[i].w.size())
      throw ShapeMismatch("checkpoint tensor shape mismatch for " + params_[i].name);
    params_[i].w = src->values;
  }
}

Denoiser Denoiser::from_checkpoint(const Checkpoint& ckpt) {
  Denoiser net(ckpt.config, /*init_seed=*/0);
  net.load_tensors(ckpt);
  return net;
}

}  // namespace gust
