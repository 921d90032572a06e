#include "mct/softprop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mct {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTiny = 1e-14;
constexpr double kRel = 1e-3;  // eps_val and eps_grad relative to the channel maxima

double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

struct PixelGate {
  double lo, hi, gx, gy, G;
  double pos, neg, b, r, alpha, c2, s2;
  std::uint32_t argmin, argmax;
  int il, ir, jd, ju;
};

struct ChannelGates {
  std::vector<PixelGate> px;
  double S = 0, Gs = 0;
  std::uint32_t arg_S = 0, arg_Gs = 0;
  double sign_S = 1;
};

ChannelGates channel_gates(const double* z, int n1, int n2, Spacing sp, const SoftOptions& opt) {
  ChannelGates cg;
  const std::size_t P = static_cast<std::size_t>(n1) * n2;
  cg.px.resize(P);
  for (std::size_t p = 0; p < P; ++p)
    if (std::abs(z[p]) > cg.S) cg.S = std::abs(z[p]), cg.arg_S = static_cast<std::uint32_t>(p), cg.sign_S = z[p] < 0 ? -1 : 1;
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      const std::size_t p = static_cast<std::size_t>(j) * n1 + i;
      PixelGate& g = cg.px[p];
      g.il = std::max(i - 1, 0), g.ir = std::min(i + 1, n1 - 1);
      g.jd = std::max(j - 1, 0), g.ju = std::min(j + 1, n2 - 1);
      g.gx = (z[static_cast<std::size_t>(j) * n1 + g.ir] - z[static_cast<std::size_t>(j) * n1 + g.il]) / ((g.ir - g.il) * sp.hx);
      g.gy = (z[static_cast<std::size_t>(g.ju) * n1 + i] - z[static_cast<std::size_t>(g.jd) * n1 + i]) / ((g.ju - g.jd) * sp.hy);
      g.G = std::hypot(g.gx, g.gy);
      if (g.G > cg.Gs) cg.Gs = g.G, cg.arg_Gs = static_cast<std::uint32_t>(p);
      g.lo = 1e300, g.hi = -1e300;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const std::size_t q = static_cast<std::size_t>(std::clamp(j + dj, 0, n2 - 1)) * n1 + std::clamp(i + di, 0, n1 - 1);
          if (z[q] < g.lo) g.lo = z[q], g.argmin = static_cast<std::uint32_t>(q);
          if (z[q] > g.hi) g.hi = z[q], g.argmax = static_cast<std::uint32_t>(q);
        }
    }
  for (auto& g : cg.px) {
    if (cg.S == 0.0) {
      g.pos = 0, g.neg = 1, g.b = 0;
    } else {
      const double t = opt.tau * cg.S;
      g.pos = sigmoid((g.lo - kRel * cg.S) / t);
      g.neg = sigmoid((kRel * cg.S - g.hi) / t);
      g.b = std::max(0.0, 1.0 - g.pos - g.neg);
    }
    g.r = cg.Gs == 0.0 ? 0.0 : sigmoid((g.G - kRel * cg.Gs) / (opt.tau_grad * cg.Gs));
    g.alpha = g.s2 = 0.0;
    g.c2 = 1.0;
    if (g.b > kTiny && g.r > kTiny && g.G > 0.0) {
      g.alpha = std::atan2(g.gy, g.gx);
      const double G2 = g.G * g.G;
      g.c2 = (g.gx * g.gx - g.gy * g.gy) / G2;
      g.s2 = 2 * g.gx * g.gy / G2;
    }
  }
  return cg;
}

double bump_kappa(int M) { return M < 2 ? 0.0 : std::log(2.0) / (1.0 - std::cos(2 * kPi / M)); }

struct Active {
  int channel;
  const PixelGate* g;
  std::vector<double> bump, dbump;
  std::vector<int> touched;

  void reset(int M) {
    if (static_cast<int>(bump.size()) != M) {
      bump.assign(M, 0.0);
      dbump.assign(M, 0.0);
    } else {
      for (int k : touched) bump[k] = dbump[k] = 0.0;
    }
    touched.clear();
  }
};

struct BumpTable {
  int M;
  double kappa;
  std::vector<double> c, s;  // cos and sin of 2 k pi / M

  explicit BumpTable(int bins) : M(bins), kappa(bump_kappa(bins)), c(bins), s(bins) {
    for (int k = 0; k < M; ++k) c[k] = std::cos(2 * kPi * k / M), s[k] = std::sin(2 * kPi * k / M);
  }
};

// Orientation bump and its derivative in alpha; zero outside the window.
void bump_values(const PixelGate& g, const BumpTable& t, const SoftOptions& opt, Active& a) {
  const int M = t.M;
  auto put = [&](int k) {
    const double cd = t.c[k] * g.c2 + t.s[k] * g.s2;  // cos 2(k pi/M - alpha)
    const double sd = t.s[k] * g.c2 - t.c[k] * g.s2;
    a.bump[k] = std::exp(t.kappa * (cd - 1));
    a.dbump[k] = 2 * t.kappa * a.bump[k] * sd;
    a.touched.push_back(k);
  };
  if (2 * opt.window + 1 >= M) {
    for (int k = 0; k < M; ++k) put(k);
    return;
  }
  double r = g.alpha < 0 ? g.alpha + kPi : g.alpha;
  if (r >= kPi) r -= kPi;
  const int c = static_cast<int>(std::lround(r * M / kPi)) % M;
  for (int d = -opt.window; d <= opt.window; ++d) put(((c + d) % M + M) % M);
}

// Channels at one pixel: saturated ones (gate fully open) only count.
int collect(std::size_t p, const std::vector<ChannelGates>& gates, const BumpTable& table, const SoftOptions& opt,
            std::vector<Active>& active, std::size_t& active_count) {
  int saturated = 0;
  std::size_t n = 0;
  for (std::size_t o = 0; o < gates.size(); ++o) {
    const PixelGate& g = gates[o].px[p];
    if (g.pos <= kTiny && g.b <= kTiny) continue;
    if (g.pos >= 1.0 - kTiny) {
      ++saturated;
      continue;
    }
    if (active.size() <= n) active.emplace_back();
    Active& a = active[n++];
    a.channel = static_cast<int>(o);
    a.g = &g;
    a.reset(table.M);
    if (g.b > kTiny && g.r > kTiny) bump_values(g, table, opt, a);
  }
  active_count = n;
  return saturated;
}

double o_value(const Active& a, double u, int k) {
  const PixelGate& g = *a.g;
  return g.pos * u + g.b * (1.0 - g.r + g.r * a.bump[k]);
}

// V = 1 - prod_o (1 - O_o), O_o = pos U + b (1 - r + r bump).
DigitalWavefrontSet fused_forward(const DigitalWavefrontSet& U, const std::vector<ChannelGates>& gates,
                                  const SoftOptions& opt) {
  const int M = U.bins();
  const BumpTable table(M);
  const std::size_t P = static_cast<std::size_t>(U.n1()) * U.n2();
  DigitalWavefrontSet V(U.n1(), U.n2(), M, DwfMode::soft);
  auto u = U.data();
  auto v = V.data();
  std::vector<Active> active;
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t A = 0;
    const int sat = collect(p, gates, table, opt, active, A);
    for (int k = 0; k < M; ++k) {
      const double uk = u[p * M + k];
      double q = std::pow(1.0 - uk, sat);
      for (std::size_t a = 0; a < A; ++a) q *= 1.0 - o_value(active[a], uk, k);
      v[p * M + k] = std::clamp(1.0 - q, 0.0, 1.0);
    }
  }
  return V;
}

void fused_backward(const DigitalWavefrontSet& U, const std::vector<ChannelGates>& gates,
                    const DwfGrad& gV, DwfGrad& gU, Tensor& gz, Spacing sp, const SoftOptions& opt) {
  const int M = U.bins(), n1 = U.n1();
  const BumpTable table(M);
  const std::size_t P = static_cast<std::size_t>(U.n1()) * U.n2();
  const int C = static_cast<int>(gates.size());
  auto u = U.data();
  gU.assign(U.size(), 0.0);
  std::vector<std::vector<double>> gG(C, std::vector<double>(P, 0.0)), gA(C, std::vector<double>(P, 0.0));
  std::vector<double> gS(C, 0.0), gGs(C, 0.0);
  std::vector<Active> active;
  std::vector<double> F, pre, suf;
  for (std::size_t p = 0; p < P; ++p) {
    bool any = false;
    for (int k = 0; k < M && !any; ++k) any = gV[p * M + k] != 0.0;
    if (!any) continue;
    std::size_t A = 0;
    const int sat = collect(p, gates, table, opt, active, A);
    F.resize(A);
    pre.resize(A + 1);
    suf.resize(A + 1);
    std::vector<double> gpos(A, 0.0), gneg(A, 0.0), gr(A, 0.0), galpha(A, 0.0);
    for (int k = 0; k < M; ++k) {
      const double gv = gV[p * M + k];
      if (gv == 0.0) continue;
      const double uk = u[p * M + k];
      for (std::size_t a = 0; a < A; ++a) F[a] = 1.0 - o_value(active[a], uk, k);
      pre[0] = 1.0;
      for (std::size_t a = 0; a < A; ++a) pre[a + 1] = pre[a] * F[a];
      suf[A] = 1.0;
      for (std::size_t a = A; a-- > 0;) suf[a] = suf[a + 1] * F[a];
      const double qs = std::pow(1.0 - uk, sat);
      double du = sat > 0 ? sat * std::pow(1.0 - uk, sat - 1) * pre[A] : 0.0;
      for (std::size_t a = 0; a < A; ++a) {
        const PixelGate& g = *active[a].g;
        const double e = gv * qs * pre[a] * suf[a + 1];
        du += g.pos * qs * pre[a] * suf[a + 1];
        const double c = 1.0 - g.r + g.r * active[a].bump[k];
        gpos[a] += e * (uk - c);
        gneg[a] -= e * c;
        gr[a] += e * g.b * (active[a].bump[k] - 1.0);
        galpha[a] += e * g.b * g.r * active[a].dbump[k];
      }
      gU[p * M + k] = gv * du;
    }
    for (std::size_t a = 0; a < A; ++a) {
      const int o = active[a].channel;
      const PixelGate& g = *active[a].g;
      const ChannelGates& cg = gates[o];
      double* gzo = gz.channel(o);
      const double t = opt.tau * cg.S;
      const double dp = g.pos * (1.0 - g.pos), dn = g.neg * (1.0 - g.neg);
      gzo[g.argmin] += gpos[a] * dp / t;
      gzo[g.argmax] -= gneg[a] * dn / t;
      gS[o] += -gpos[a] * dp * g.lo / (t * cg.S) + gneg[a] * dn * g.hi / (t * cg.S);
      if (cg.Gs > 0.0) {
        const double tg = opt.tau_grad * cg.Gs, dr = g.r * (1.0 - g.r);
        gG[o][p] += gr[a] * dr / tg;
        gGs[o] -= gr[a] * dr * g.G / (tg * cg.Gs);
      }
      gA[o][p] += galpha[a];
    }
  }
  for (int o = 0; o < C; ++o) {
    const ChannelGates& cg = gates[o];
    double* gzo = gz.channel(o);
    gzo[cg.arg_S] += gS[o] * cg.sign_S;
    gG[o][cg.arg_Gs] += gGs[o];
    for (std::size_t p = 0; p < P; ++p) {
      const PixelGate& g = cg.px[p];
      if (g.G == 0.0 || (gG[o][p] == 0.0 && gA[o][p] == 0.0)) continue;
      const double G2 = g.G * g.G;
      const double ggx = gG[o][p] * g.gx / g.G - gA[o][p] * g.gy / G2;
      const double ggy = gG[o][p] * g.gy / g.G + gA[o][p] * g.gx / G2;
      const int i = static_cast<int>(p % n1), j = static_cast<int>(p / n1);
      const double cx = ggx / ((g.ir - g.il) * sp.hx), cy = ggy / ((g.ju - g.jd) * sp.hy);
      gzo[static_cast<std::size_t>(j) * n1 + g.ir] += cx;
      gzo[static_cast<std::size_t>(j) * n1 + g.il] -= cx;
      gzo[static_cast<std::size_t>(g.ju) * n1 + i] += cy;
      gzo[static_cast<std::size_t>(g.jd) * n1 + i] -= cy;
    }
  }
}

std::vector<ChannelGates> layer_gates(const Tensor& z, Spacing sp, const SoftOptions& opt) {
  std::vector<ChannelGates> gates;
  gates.reserve(z.channels);
  for (int o = 0; o < z.channels; ++o) gates.push_back(channel_gates(z.channel(o), z.width, z.height, sp, opt));
  return gates;
}

DigitalWavefrontSet soft_union(const std::vector<DigitalWavefrontSet>& in) {
  DigitalWavefrontSet out(in.front().n1(), in.front().n2(), in.front().bins(), DwfMode::soft);
  auto o = out.data();
  std::fill(o.begin(), o.end(), 1.0);
  for (const auto& d : in) {
    auto s = d.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= 1.0 - s[i];
  }
  for (double& v : o) v = 1.0 - v;
  return out;
}

DigitalWavefrontSet as_soft(const DigitalWavefrontSet& d) {
  DigitalWavefrontSet out(d.n1(), d.n2(), d.bins(), DwfMode::soft);
  std::copy(d.data().begin(), d.data().end(), out.data().begin());
  return out;
}

void require_same(const DigitalWavefrontSet& d, int n1, int n2) {
  if (d.n1() != n1 || d.n2() != n2) throw ShapeError("DWF and feature grids differ");
}

}  // namespace

DigitalWavefrontSet soft_prop_relu(const DigitalWavefrontSet& dwf, const GridImage& feature, Spacing spacing,
                                   const SoftOptions& options) {
  require_same(dwf, feature.n1(), feature.n2());
  std::vector<ChannelGates> gates;
  gates.push_back(channel_gates(feature.values().data(), feature.n1(), feature.n2(), spacing, options));
  return fused_forward(dwf, gates, options);
}

std::vector<DigitalWavefrontSet> soft_prop_resnet(const std::vector<DigitalWavefrontSet>& dwf_in,
                                                  const ResNetCapture& cap, int out_channels, Spacing spacing,
                                                  const SoftOptions& options, SoftResnetTape* tape) {
  if (dwf_in.empty() || static_cast<int>(dwf_in.size()) != cap.input.channels)
    throw ShapeError("channel-count mismatch");
  if (out_channels > static_cast<int>(dwf_in.size())) throw ShapeError("residual needs as many inputs as outputs");
  for (const auto& d : dwf_in) {
    require_same(d, cap.input.width, cap.input.height);
    if (d.bins() != dwf_in.front().bins()) throw ShapeError("bin count mismatch");
  }
  std::array<DigitalWavefrontSet, 4> unions;
  unions[0] = soft_union(dwf_in);
  for (int j = 0; j < 3; ++j) unions[j + 1] = fused_forward(unions[j], layer_gates(cap.pre[j], spacing, options), options);
  std::vector<DigitalWavefrontSet> out;
  for (int c = 0; c < out_channels; ++c) out.push_back(soft_union({dwf_in[c], unions[3]}));
  if (tape) {
    tape->input = dwf_in;
    tape->unions = std::move(unions);
    tape->spacing = spacing;
  }
  return out;
}

SoftResnetGrads soft_prop_resnet_backward(const SoftResnetTape& tape, const ResNetCapture& cap,
                                          const std::vector<DwfGrad>& grad_out, const SoftOptions& options) {
  const std::size_t C = tape.input.size(), L = tape.unions[0].size();
  SoftResnetGrads g;
  g.input.assign(C, DwfGrad(L, 0.0));
  const auto w = tape.unions[3].data();
  DwfGrad gW(L, 0.0);
  for (std::size_t c = 0; c < grad_out.size(); ++c) {
    const auto in = tape.input[c].data();
    for (std::size_t e = 0; e < L; ++e) {
      gW[e] += grad_out[c][e] * (1.0 - in[e]);
      g.input[c][e] += grad_out[c][e] * (1.0 - w[e]);
    }
  }
  DwfGrad cur = std::move(gW), next;
  for (int j = 2; j >= 0; --j) {
    g.pre[j] = Tensor(cap.pre[j].channels, cap.pre[j].width, cap.pre[j].height);
    fused_backward(tape.unions[j], layer_gates(cap.pre[j], tape.spacing, options), cur, next, g.pre[j],
                   tape.spacing, options);
    cur.swap(next);
  }
  // Probabilistic OR of the inputs.
  std::vector<double> pre(C + 1), suf(C + 1);
  for (std::size_t e = 0; e < L; ++e) {
    if (cur[e] == 0.0) continue;
    pre[0] = 1.0;
    for (std::size_t c = 0; c < C; ++c) pre[c + 1] = pre[c] * (1.0 - tape.input[c].data()[e]);
    suf[C] = 1.0;
    for (std::size_t c = C; c-- > 0;) suf[c] = suf[c + 1] * (1.0 - tape.input[c].data()[e]);
    for (std::size_t c = 0; c < C; ++c) g.input[c][e] += cur[e] * pre[c] * suf[c + 1];
  }
  return g;
}

SoftLpdMaps::SoftLpdMaps(const Geometry& geo, const SoftLpdConfig& config)
    : to_sino(image_to_sino_map(geo, config.bins, config.sino_bins)),
      to_image(sino_to_image_map(geo, config.sino_bins, config.bins)) {}

DigitalWavefrontSet soft_prop_lpd(const DigitalWavefrontSet& dwf_g, const LpdCapture& cap, const Geometry& geo,
                                  const SoftLpdConfig& config, const SoftLpdMaps& maps, SoftLpdTape* tape) {
  const int N = static_cast<int>(cap.dual.size());
  if (N == 0 || cap.primal.size() != cap.dual.size()) throw ShapeError("capture does not match the iteration count");
  if (dwf_g.n1() != geo.m1 || dwf_g.n2() != geo.m2() || dwf_g.bins() != config.sino_bins)
    throw ShapeError("DWF grid mismatch");
  const int S = cap.dual.front().output.channels;
  const Spacing sino_sp = sinogram_spacing(geo);
  const Spacing img_sp{2.0 / (geo.n1 - 1), 2.0 / (geo.n2 - 1)};
  const DigitalWavefrontSet g = as_soft(dwf_g);
  std::vector<DigitalWavefrontSet> f(S, DigitalWavefrontSet(geo.n1, geo.n2, config.bins, DwfMode::soft));
  std::vector<DigitalWavefrontSet> h(S, g);
  if (tape) *tape = {};
  for (int i = 0; i < N; ++i) {
    std::vector<DigitalWavefrontSet> din = h;
    din.push_back(maps.to_sino.apply(f[0]));
    din.push_back(g);
    SoftResnetTape dt, pt;
    h = soft_prop_resnet(din, cap.dual[i], S, sino_sp, config.options, tape ? &dt : nullptr);
    std::vector<DigitalWavefrontSet> pin = f;
    pin.push_back(maps.to_image.apply(h[0]));
    if (tape) {
      tape->f_before.push_back(f[0]);
      tape->h_after.push_back(h[0]);
    }
    f = soft_prop_resnet(pin, cap.primal[i], S, img_sp, config.options, tape ? &pt : nullptr);
    if (tape) {
      tape->dual.push_back(std::move(dt));
      tape->primal.push_back(std::move(pt));
    }
  }
  return f[0];
}

DwfGrad pushforward_backward(const PushforwardMap& map, const DigitalWavefrontSet& input, const DwfGrad& grad_out) {
  DwfGrad g(input.size(), 0.0);
  const auto a = input.data();
  const auto& pairs = map.pairs();
  std::vector<double> pre, suf;
  for (std::size_t s = 0; s < pairs.size();) {
    std::size_t e = s;
    while (e < pairs.size() && pairs[e].dst == pairs[s].dst) ++e;
    const double go = grad_out[pairs[s].dst];
    if (go != 0.0) {
      const std::size_t n = e - s;
      pre.assign(n + 1, 1.0);
      suf.assign(n + 1, 1.0);
      for (std::size_t k = 0; k < n; ++k) pre[k + 1] = pre[k] * (1.0 - a[pairs[s + k].src]);
      for (std::size_t k = n; k-- > 0;) suf[k] = suf[k + 1] * (1.0 - a[pairs[s + k].src]);
      for (std::size_t k = 0; k < n; ++k) g[pairs[s + k].src] += go * pre[k] * suf[k + 1];
    }
    s = e;
  }
  return g;
}

LpdPreGrads soft_prop_lpd_backward(const SoftLpdTape& tape, const LpdCapture& cap, const SoftLpdConfig& config,
                                   const SoftLpdMaps& maps, const DwfGrad& grad_out) {
  const int N = static_cast<int>(tape.dual.size());
  if (N == 0 || static_cast<int>(cap.dual.size()) != N) throw ShapeError("tape does not match the capture");
  const int S = cap.dual.front().output.channels;
  const std::size_t Li = tape.primal.front().unions[0].size(), Ls = tape.dual.front().unions[0].size();
  LpdPreGrads out;
  out.dual.resize(N);
  out.primal.resize(N);
  std::vector<DwfGrad> gf(S, DwfGrad(Li, 0.0)), gh(S, DwfGrad(Ls, 0.0));
  gf[0] = grad_out;
  for (int i = N - 1; i >= 0; --i) {
    auto pr = soft_prop_resnet_backward(tape.primal[i], cap.primal[i], gf, config.options);
    out.primal[i] = std::move(pr.pre);
    auto back_h = pushforward_backward(maps.to_image, tape.h_after[i], pr.input[S]);
    for (std::size_t e = 0; e < Ls; ++e) gh[0][e] += back_h[e];
    auto dr = soft_prop_resnet_backward(tape.dual[i], cap.dual[i], gh, config.options);
    out.dual[i] = std::move(dr.pre);
    auto back_f = pushforward_backward(maps.to_sino, tape.f_before[i], dr.input[S]);
    for (int c = 0; c < S; ++c) gf[c] = std::move(pr.input[c]);
    for (std::size_t e = 0; e < Li; ++e) gf[0][e] += back_f[e];
    for (int c = 0; c < S; ++c) gh[c] = std::move(dr.input[c]);
  }
  return out;
}

}  // namespace mct
