#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fftw3.h>

#include "crossmoments/covmodels.hpp"
#include "crossmoments/error.hpp"
#include "crossmoments/fields.hpp"
#include "crossmoments/kacrice.hpp"
#include "crossmoments/numeric.hpp"
#include "crossmoments/parallel.hpp"
#include "crossmoments/rng.hpp"

namespace crossmoments {

/// Samples on a uniform grid: value(l, i, j) = layers[l][j * nx + i] at (i dx, j dy).
/// A process on a line has ny = 1.
struct GridField {
  int nx = 0;
  int ny = 1;
  double dx = 0.0;
  double dy = 0.0;
  std::vector<std::vector<double>> layers;

  [[nodiscard]] double value(std::size_t layer, int i, int j = 0) const {
    return layers[layer][static_cast<std::size_t>(j) * nx + i];
  }

  /// Every `factor`-th grid point along each axis (a nested coarser grid).
  [[nodiscard]] GridField subsample(int factor) const {
    require(factor >= 1 && (nx - 1) % factor == 0 && (ny - 1) % factor == 0, ErrorCode::InvalidConfig,
            "subsampling factor must divide the number of intervals");
    GridField out;
    out.nx = (nx - 1) / factor + 1;
    out.ny = (ny - 1) / factor + 1;
    out.dx = dx * factor;
    out.dy = dy * factor;
    for (const auto& layer : layers) {
      std::vector<double> v(static_cast<std::size_t>(out.nx) * out.ny);
      for (int j = 0; j < out.ny; ++j)
        for (int i = 0; i < out.nx; ++i)
          v[static_cast<std::size_t>(j) * out.nx + i] = layer[static_cast<std::size_t>(j) * factor * nx + i * factor];
      out.layers.push_back(std::move(v));
    }
    return out;
  }
};

enum class SampleMethod { Circulant, CirculantSparse, Spectral, ExactRank2 };

constexpr std::string_view to_string(SampleMethod m) {
  switch (m) {
    case SampleMethod::Circulant: return "circulant";
    case SampleMethod::CirculantSparse: return "circulant-sparse";
    case SampleMethod::Spectral: return "spectral";
    case SampleMethod::ExactRank2: return "exact-rank2";
  }
  return "circulant";
}

struct EmbeddingOptions {
  /// Padding escalates x2 up to this factor over the minimal power of two.
  int max_padding = 16;
  /// Eigenvalues >= -psd_tol * max are clipped to 0 and accepted.
  double psd_tol = 1e-9;
  /// Modes with eigenvalue <= drop_tol * max carry no variance at double
  /// precision and are skipped by the sparse synthesizer.
  double drop_tol = 1e-13;
  bool spectral_fallback = true;
  int spectral_terms = 10000;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  fftw_complex* data = nullptr;
  explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {
    require(data != nullptr, ErrorCode::InvalidConfig, "FFT buffer allocation failed");
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

// Forward complex DFT of size n0 x n1 (n1 = 1 for a line). FFTW_ESTIMATE
// keeps the algorithm choice, and therefore every output bit, independent
// of timing.
class FftPlan {
 public:
  FftPlan(int n0, int n1) : n0_(n0), n1_(n1) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    FftwBuffer in(size()), out(size());
    plan_ = n1 == 1 ? fftw_plan_dft_1d(n0, in.data, out.data, FFTW_FORWARD, FFTW_ESTIMATE)
                    : fftw_plan_dft_2d(n0, n1, in.data, out.data, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(n0_) * n1_; }
  void execute(fftw_complex* in, fftw_complex* out) const { fftw_execute_dft(plan_, in, out); }

 private:
  int n0_, n1_;
  fftw_plan plan_ = nullptr;
};

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p *= 2;
  return p;
}

}  // namespace detail

/// Exact sampler of a stationary Gaussian vector on an nx x ny grid by
/// circulant embedding. Each draw yields two independent samples (real and
/// imaginary parts of one complex synthesis).
class CirculantGaussian {
 public:
  /// cov(kx, ky) = covariance at lag (kx dx, ky dy), kx, ky >= 0.
  template <class Cov>
  static std::optional<CirculantGaussian> build(Cov&& cov, int nx, int ny, const EmbeddingOptions& opt,
                                                double& min_eigenvalue) {
    const int base_x = detail::next_pow2(std::max(2, 2 * (nx - 1)));
    const int base_y = ny > 1 ? detail::next_pow2(std::max(2, 2 * (ny - 1))) : 1;
    min_eigenvalue = -kInf;
    // covariance at distinct lags, kept across padding escalations
    std::vector<double> lags;
    int lx = 0, ly = 0;
    for (int f = 1; f <= opt.max_padding; f *= 2) {
      CirculantGaussian g;
      g.nx_ = nx;
      g.ny_ = ny;
      g.mx_ = base_x * f;
      g.my_ = ny > 1 ? base_y * f : 1;
      const int hx = g.mx_ / 2 + 1, hy = g.my_ / 2 + 1;
      std::vector<double> next(static_cast<std::size_t>(hx) * hy);
      std::vector<std::size_t> todo;
      for (int kx = 0; kx < hx; ++kx)
        for (int ky = 0; ky < hy; ++ky) {
          const std::size_t idx = static_cast<std::size_t>(kx) * hy + ky;
          if (kx < lx && ky < ly)
            next[idx] = lags[static_cast<std::size_t>(kx) * ly + ky];
          else
            todo.push_back(idx);
        }
      parallel_for(todo.size(), [&](std::size_t t) {
        const std::size_t idx = todo[t];
        next[idx] = cov(static_cast<int>(idx / hy), static_cast<int>(idx % hy));
      });
      lags = std::move(next);
      lx = hx;
      ly = hy;
      const std::size_t M = static_cast<std::size_t>(g.mx_) * g.my_;
      detail::FftwBuffer in(M), out(M);
      for (int ix = 0; ix < g.mx_; ++ix) {
        const int kx = std::min(ix, g.mx_ - ix);
        for (int iy = 0; iy < g.my_; ++iy) {
          const int ky = std::min(iy, g.my_ - iy);
          const std::size_t idx = static_cast<std::size_t>(ix) * g.my_ + iy;
          in.data[idx][0] = lags[static_cast<std::size_t>(kx) * ly + ky];
          in.data[idx][1] = 0.0;
        }
      }
      {
        detail::FftPlan plan(g.mx_, g.my_);
        plan.execute(in.data, out.data);
      }
      std::vector<double> lam(M);
      double lo = kInf, hi = -kInf;
      for (std::size_t k = 0; k < M; ++k) {
        lam[k] = out.data[k][0];
        lo = std::min(lo, lam[k]);
        hi = std::max(hi, lam[k]);
      }
      min_eigenvalue = lo / hi;
      if (lo < -opt.psd_tol * hi) continue;
      g.padding_ = f;
      g.amp_.resize(M);
      for (std::size_t k = 0; k < M; ++k) g.amp_[k] = std::sqrt(std::max(0.0, lam[k]) / static_cast<double>(M));
      g.setup_synthesis(hi, opt.drop_tol);
      return g;
    }
    return std::nullopt;
  }

  [[nodiscard]] int padding() const { return padding_; }
  [[nodiscard]] bool sparse() const { return sparse_; }
  [[nodiscard]] std::size_t points() const { return static_cast<std::size_t>(nx_) * ny_; }

  /// Writes two independent samples, layout a[j * nx + i].
  void sample_pair(RandomStream& rng, double* a, double* b) const {
    if (sparse_)
      sample_sparse(rng, a, b);
    else
      sample_dense(rng, a, b);
  }

 private:
  CirculantGaussian() = default;

  void setup_synthesis(double lam_max, double drop_tol) {
    // wrapped bounding box of the significant modes
    kx_ = 0;
    ky_ = 0;
    const double floor = drop_tol * lam_max;
    const double amp_floor = std::sqrt(std::max(0.0, floor) / static_cast<double>(amp_.size()));
    for (int ix = 0; ix < mx_; ++ix)
      for (int iy = 0; iy < my_; ++iy)
        if (amp_[static_cast<std::size_t>(ix) * my_ + iy] > amp_floor) {
          kx_ = std::max(kx_, std::min(ix, mx_ - ix));
          ky_ = std::max(ky_, std::min(iy, my_ - iy));
        }
    const double bx = 2.0 * kx_ + 1.0, by = 2.0 * ky_ + 1.0;
    const double sparse_cost = 8.0 * (bx * by * nx_ + by * nx_ * ny_);
    const double M = static_cast<double>(amp_.size());
    const double dense_cost = 5.0 * M * std::log2(M) + 20.0 * M;  // FFT plus normals
    const double table = 16.0 * (bx * nx_ + by * ny_);
    sparse_ = sparse_cost < dense_cost && table < 256e6 && 2 * kx_ < mx_ && (my_ == 1 || 2 * ky_ < my_);
    if (!sparse_) {
      plan_ = std::make_shared<detail::FftPlan>(mx_, my_);
      return;
    }
    auto twiddles = [](int K, int m, int n) {
      std::vector<std::complex<double>> t(static_cast<std::size_t>(2 * K + 1) * n);
      for (int k = -K; k <= K; ++k)
        for (int j = 0; j < n; ++j) {
          const long long w = ((static_cast<long long>(k) * j) % m + m) % m;
          const double angle = -2.0 * kPi * static_cast<double>(w) / m;
          t[static_cast<std::size_t>(k + K) * n + j] = {std::cos(angle), std::sin(angle)};
        }
      return t;
    };
    tx_ = twiddles(kx_, mx_, nx_);
    ty_ = twiddles(ky_, my_, ny_);
    sparse_amp_.clear();
    for (int kx = -kx_; kx <= kx_; ++kx)
      for (int ky = -ky_; ky <= ky_; ++ky) {
        const int ix = (kx + mx_) % mx_, iy = (ky + my_) % my_;
        const double a = amp_[static_cast<std::size_t>(ix) * my_ + iy];
        sparse_amp_.push_back(a > amp_floor ? a : 0.0);
      }
  }

  void sample_dense(RandomStream& rng, double* a, double* b) const {
    const std::size_t M = amp_.size();
    detail::FftwBuffer in(M), out(M);
    for (std::size_t k = 0; k < M; ++k) {
      const double z1 = rng.normal(), z2 = rng.normal();
      in.data[k][0] = amp_[k] * z1;
      in.data[k][1] = amp_[k] * z2;
    }
    plan_->execute(in.data, out.data);
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) {
        const std::size_t src = static_cast<std::size_t>(i) * my_ + j;
        const std::size_t dst = static_cast<std::size_t>(j) * nx_ + i;
        a[dst] = out.data[src][0];
        b[dst] = out.data[src][1];
      }
  }

  void sample_sparse(RandomStream& rng, double* a, double* b) const {
    using C = std::complex<double>;
    const int bx = 2 * kx_ + 1, by = 2 * ky_ + 1;
    std::vector<C> w(static_cast<std::size_t>(bx) * by);
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (sparse_amp_[k] == 0.0) continue;
      const double z1 = rng.normal(), z2 = rng.normal();
      w[k] = sparse_amp_[k] * C(z1, z2);
    }
    // U[ky][i] = sum_kx W[kx][ky] Tx[kx][i]. Complex products are spelled out
    // in real arithmetic: std::complex multiplication keeps a NaN recovery
    // branch that blocks vectorization.
    std::vector<C> U(static_cast<std::size_t>(by) * nx_);
    for (int x = 0; x < bx; ++x) {
      const double* tx = reinterpret_cast<const double*>(&tx_[static_cast<std::size_t>(x) * nx_]);
      for (int y = 0; y < by; ++y) {
        const C wv = w[static_cast<std::size_t>(x) * by + y];
        if (wv == C(0.0, 0.0)) continue;
        const double wr = wv.real(), wi = wv.imag();
        double* u = reinterpret_cast<double*>(&U[static_cast<std::size_t>(y) * nx_]);
        for (int i = 0; i < nx_; ++i) {
          const double tr = tx[2 * i], ti = tx[2 * i + 1];
          u[2 * i] += wr * tr - wi * ti;
          u[2 * i + 1] += wr * ti + wi * tr;
        }
      }
    }
    // Y[i][j] = sum_ky U[ky][i] Ty[ky][j]
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) {
        double re = 0.0, im = 0.0;
        for (int y = 0; y < by; ++y) {
          const C u = U[static_cast<std::size_t>(y) * nx_ + i], t = ty_[static_cast<std::size_t>(y) * ny_ + j];
          re += u.real() * t.real() - u.imag() * t.imag();
          im += u.real() * t.imag() + u.imag() * t.real();
        }
        const std::size_t dst = static_cast<std::size_t>(j) * nx_ + i;
        a[dst] = re;
        b[dst] = im;
      }
  }

  int nx_ = 0, ny_ = 1, mx_ = 0, my_ = 1, padding_ = 1;
  std::vector<double> amp_;
  bool sparse_ = false;
  int kx_ = 0, ky_ = 0;
  std::vector<std::complex<double>> tx_, ty_;
  std::vector<double> sparse_amp_;
  std::shared_ptr<detail::FftPlan> plan_;
};

/// Sampler of a stationary process on [0, T] at intervals + 1 grid points.
class ProcessSampler1D {
 public:
  ProcessSampler1D(const CovarianceModel1D& model, double T, int intervals, const EmbeddingOptions& opt = {})
      : model_(model), n_(intervals + 1), dx_(T / intervals), opt_(opt) {
    require(T > 0.0 && intervals >= 2, ErrorCode::InvalidConfig, "need T > 0 and at least 2 intervals");
    if (model.kind() == ModelKind::SineCosine) {
      method_ = SampleMethod::ExactRank2;
      return;
    }
    const double dx = dx_;
    const CovarianceModel1D& m = model_;
    embed_ = CirculantGaussian::build([&](int k, int) { return m.cov(k * dx); }, n_, 1, opt, min_eigenvalue_);
    if (embed_) {
      method_ = embed_->sparse() ? SampleMethod::CirculantSparse : SampleMethod::Circulant;
      return;
    }
    if (!opt.spectral_fallback)
      fail(ErrorCode::EmbeddingNotPSD, "circulant embedding not PSD up to padding x" +
                                           std::to_string(opt.max_padding) +
                                           ", min eigenvalue / max = " + std::to_string(min_eigenvalue_));
    method_ = SampleMethod::Spectral;
  }

  [[nodiscard]] SampleMethod method() const { return method_; }
  [[nodiscard]] int padding() const { return embed_ ? embed_->padding() : 0; }
  [[nodiscard]] double min_eigenvalue() const { return min_eigenvalue_; }
  [[nodiscard]] int points() const { return n_; }
  [[nodiscard]] double spacing() const { return dx_; }

  /// Two independent paths from one stream.
  void sample_pair(RandomStream& rng, std::vector<double>& a, std::vector<double>& b) const {
    a.assign(static_cast<std::size_t>(n_), 0.0);
    b.assign(static_cast<std::size_t>(n_), 0.0);
    switch (method_) {
      case SampleMethod::ExactRank2:
        for (auto* x : {&a, &b}) {
          const double xi1 = rng.normal(), xi2 = rng.normal();
          const double w = model_.param1();
          for (int j = 0; j < n_; ++j) (*x)[j] = xi1 * std::sin(w * j * dx_) + xi2 * std::cos(w * j * dx_);
        }
        return;
      case SampleMethod::Spectral:
        for (auto* x : {&a, &b}) spectral(rng, *x);
        return;
      default: embed_->sample_pair(rng, a.data(), b.data());
    }
  }

  [[nodiscard]] GridField sample(RandomStream& rng) const {
    GridField g;
    g.nx = n_;
    g.dx = dx_;
    std::vector<double> a, b;
    sample_pair(rng, a, b);
    g.layers.push_back(std::move(a));
    return g;
  }

 private:
  // X(t) = sqrt(2/M) sum cos(lambda_m t + phi_m), lambda_m from the spectral measure
  void spectral(RandomStream& rng, std::vector<double>& x) const {
    const int M = opt_.spectral_terms;
    const double c = std::sqrt(2.0 / M);
    for (int m = 0; m < M; ++m) {
      const double lam = model_.sample_frequency(rng);
      const double phi = 2.0 * kPi * rng.uniform();
      for (int j = 0; j < n_; ++j) x[j] += c * std::cos(lam * j * dx_ + phi);
    }
  }

  CovarianceModel1D model_;
  int n_;
  double dx_;
  EmbeddingOptions opt_;
  SampleMethod method_ = SampleMethod::Circulant;
  double min_eigenvalue_ = 0.0;
  std::optional<CirculantGaussian> embed_;
};

/// Exact sample of X on [0, T] at n_points grid points.
inline GridField sample_process_1d(const CovarianceModel1D& model, double T, int n_points, std::uint64_t seed,
                                   const EmbeddingOptions& opt = {}) {
  const ProcessSampler1D s(model, T, n_points - 1, opt);
  RandomStream rng(seed, 0);
  return s.sample(rng);
}

/// Sampler of one isotropic coordinate on a rectangle grid with
/// intervals + 1 points per side.
class FieldSampler2D {
 public:
  FieldSampler2D(const RadialProfile& profile, const Rectangle& rect, int intervals, const EmbeddingOptions& opt = {})
      : profile_(profile), n_(intervals + 1), dx_(rect.a / intervals), dy_(rect.b / intervals), opt_(opt) {
    require(rect.a > 0.0 && rect.b > 0.0 && intervals >= 2, ErrorCode::InvalidConfig,
            "need a nonempty rectangle and at least 2 intervals");
    const double dx = dx_, dy = dy_;
    const CovarianceModel1D& r = profile_.restriction();
    embed_ = CirculantGaussian::build([&](int kx, int ky) { return r.cov(std::hypot(kx * dx, ky * dy)); }, n_, n_,
                                      opt, min_eigenvalue_);
    if (embed_) {
      method_ = embed_->sparse() ? SampleMethod::CirculantSparse : SampleMethod::Circulant;
      return;
    }
    if (!opt.spectral_fallback)
      fail(ErrorCode::EmbeddingNotPSD, "2D circulant embedding not PSD up to padding x" +
                                           std::to_string(opt.max_padding) +
                                           ", min eigenvalue / max = " + std::to_string(min_eigenvalue_));
    method_ = SampleMethod::Spectral;
  }

  [[nodiscard]] SampleMethod method() const { return method_; }
  [[nodiscard]] int padding() const { return embed_ ? embed_->padding() : 0; }
  [[nodiscard]] double min_eigenvalue() const { return min_eigenvalue_; }
  [[nodiscard]] int points_per_side() const { return n_; }
  [[nodiscard]] double dx() const { return dx_; }
  [[nodiscard]] double dy() const { return dy_; }

  void sample_pair(RandomStream& rng, std::vector<double>& a, std::vector<double>& b) const {
    const std::size_t N = static_cast<std::size_t>(n_) * n_;
    a.assign(N, 0.0);
    b.assign(N, 0.0);
    if (embed_) {
      embed_->sample_pair(rng, a.data(), b.data());
      return;
    }
    // omega = sqrt(s) (Z1, Z2) has the spectral law of rho(|h|^2) = E exp(-s |h|^2 / 2)
    const int M = opt_.spectral_terms;
    const double c = std::sqrt(2.0 / M);
    const CovarianceModel1D& r = profile_.restriction();
    for (auto* x : {&a, &b})
      for (int m = 0; m < M; ++m) {
        const double s = r.mixing()->sample(rng);
        const double w1 = std::sqrt(s) * rng.normal(), w2 = std::sqrt(s) * rng.normal();
        const double phi = 2.0 * kPi * rng.uniform();
        for (int j = 0; j < n_; ++j)
          for (int i = 0; i < n_; ++i)
            (*x)[static_cast<std::size_t>(j) * n_ + i] += c * std::cos(w1 * i * dx_ + w2 * j * dy_ + phi);
      }
  }

 private:
  RadialProfile profile_;
  int n_;
  double dx_, dy_;
  EmbeddingOptions opt_;
  SampleMethod method_ = SampleMethod::Circulant;
  double min_eigenvalue_ = 0.0;
  std::optional<CirculantGaussian> embed_;
};

/// Independent layers, one per coordinate of the field.
inline GridField sample_field_2d(const IsotropicFieldModel& field, const Rectangle& rect, int intervals,
                                 std::uint64_t seed, const EmbeddingOptions& opt = {}) {
  GridField g;
  RandomStream rng(seed, 0);
  std::vector<double> a, b;
  for (const auto& p : field.coords) {
    const FieldSampler2D s(p, rect, intervals, opt);
    s.sample_pair(rng, a, b);
    g.nx = g.ny = s.points_per_side();
    g.dx = s.dx();
    g.dy = s.dy();
    g.layers.push_back(a);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Level-set statistics
// ---------------------------------------------------------------------------

struct CrossingCount {
  std::size_t count = 0;
  /// Cells next to a local extremum whose parabola through three grid
  /// values crosses u: possible pairs of crossings the grid cannot see.
  std::size_t tangency_candidates = 0;
};

/// Sign changes of X - u between adjacent grid points (X = u counts as
/// above), plus tangency screening by a secant-parabola test.
inline CrossingCount count_crossings(std::span<const double> x, double u) {
  CrossingCount out;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i + 1 < n; ++i)
    if ((x[i] >= u) != (x[i + 1] >= u)) ++out.count;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const bool s0 = x[i - 1] >= u, s1 = x[i] >= u, s2 = x[i + 1] >= u;
    if (s0 != s1 || s1 != s2) continue;
    const double d1 = x[i] - x[i - 1], d2 = x[i + 1] - x[i];
    if (d1 * d2 >= 0.0) continue;  // no interior extremum
    const double a = 0.5 * (d2 - d1), b = 0.5 * (d1 + d2);
    const double vertex = x[i] - b * b / (4.0 * a);
    if ((vertex >= u) != s1) ++out.tangency_candidates;
  }
  return out;
}

inline CrossingCount count_crossings(const GridField& g, double u) {
  return count_crossings(std::span<const double>(g.layers.at(0)), u);
}

struct RootCount {
  std::size_t count = 0;
  std::size_t newton_stalls = 0;
  std::vector<std::array<double, 2>> roots;
  std::vector<std::array<int, 2>> stalled_cells;
};

namespace detail {

// Roots in [0,1]^2 of two bilinear forms a0 + a1 s + a2 t + a3 s t.
inline int bilinear_roots(const std::array<double, 4>& a, const std::array<double, 4>& b,
                          std::array<std::array<double, 2>, 2>& out) {
  const double c2 = a[2] * b[3] - b[2] * a[3];
  const double c1 = a[0] * b[3] + a[2] * b[1] - b[0] * a[3] - b[2] * a[1];
  const double c0 = a[0] * b[1] - b[0] * a[1];
  double ts[2];
  int nt = 0;
  const double scale = std::abs(c0) + std::abs(c1) + std::abs(c2);
  if (scale == 0.0) return 0;
  if (std::abs(c2) <= 1e-14 * scale) {
    if (c1 != 0.0) ts[nt++] = -c0 / c1;
  } else {
    const double disc = c1 * c1 - 4.0 * c2 * c0;
    if (disc < 0.0) return 0;
    const double q = -0.5 * (c1 + std::copysign(std::sqrt(disc), c1));
    ts[nt++] = q / c2;
    if (q != 0.0) ts[nt++] = c0 / q;
  }
  int n = 0;
  constexpr double eps = 1e-12;
  for (int k = 0; k < nt; ++k) {
    const double t = ts[k];
    if (!(t >= -eps && t <= 1.0 + eps)) continue;
    const double da = a[1] + a[3] * t, db = b[1] + b[3] * t;
    double s;
    if (std::abs(da) >= std::abs(db)) {
      if (da == 0.0) continue;
      s = -(a[0] + a[2] * t) / da;
    } else {
      s = -(b[0] + b[2] * t) / db;
    }
    if (!(s >= -eps && s <= 1.0 + eps)) continue;
    if (n == 1 && std::abs(out[0][0] - s) < 1e-12 && std::abs(out[0][1] - t) < 1e-12) continue;
    out[n++] = {s, t};
  }
  return n;
}

}  // namespace detail

/// Roots of (X_1 - u_1, X_2 - u_2) on the grid rectangle: bilinear sign test
/// per cell, exact bilinear solve polished by damped Newton, cross-cell
/// duplicates within half a grid step merged.
inline RootCount count_roots_2d(const GridField& g, std::array<double, 2> u) {
  require(g.layers.size() >= 2 && g.ny >= 2, ErrorCode::InvalidConfig, "root counting needs two 2D layers");
  RootCount out;
  struct Found {
    double x, y;
    int cell;
  };
  std::vector<Found> found;
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i) {
      std::array<std::array<double, 4>, 2> coef;
      bool straddles = true;
      for (int l = 0; l < 2; ++l) {
        const double f00 = g.value(l, i, j) - u[l], f10 = g.value(l, i + 1, j) - u[l];
        const double f01 = g.value(l, i, j + 1) - u[l], f11 = g.value(l, i + 1, j + 1) - u[l];
        const double lo = std::min({f00, f10, f01, f11}), hi = std::max({f00, f10, f01, f11});
        if (lo > 0.0 || hi < 0.0) straddles = false;
        coef[l] = {f00, f10 - f00, f01 - f00, f00 - f10 - f01 + f11};
      }
      if (!straddles) continue;
      std::array<std::array<double, 2>, 2> st;
      const int n = detail::bilinear_roots(coef[0], coef[1], st);
      for (int k = 0; k < n; ++k) {
        double s = st[k][0], t = st[k][1];
        auto F = [&](int l, double ss, double tt) {
          const auto& c = coef[l];
          return c[0] + c[1] * ss + c[2] * tt + c[3] * ss * tt;
        };
        const double fscale = std::abs(coef[0][0]) + std::abs(coef[0][1]) + std::abs(coef[0][2]) +
                              std::abs(coef[1][0]) + std::abs(coef[1][1]) + std::abs(coef[1][2]) + 1e-300;
        bool ok = false;
        for (int it = 0; it < 8; ++it) {
          const double r0 = F(0, s, t), r1 = F(1, s, t);
          if (std::abs(r0) + std::abs(r1) <= 1e-12 * fscale) {
            ok = true;
            break;
          }
          const double j00 = coef[0][1] + coef[0][3] * t, j01 = coef[0][2] + coef[0][3] * s;
          const double j10 = coef[1][1] + coef[1][3] * t, j11 = coef[1][2] + coef[1][3] * s;
          const double det = j00 * j11 - j01 * j10;
          if (det == 0.0) break;
          const double ds = (r0 * j11 - r1 * j01) / det, dt = (j00 * r1 - j10 * r0) / det;
          double step = 1.0;
          const double before = std::abs(r0) + std::abs(r1);
          while (step > 1e-4) {
            const double ns = s - step * ds, nt = t - step * dt;
            if (std::abs(F(0, ns, nt)) + std::abs(F(1, ns, nt)) < before) {
              s = ns;
              t = nt;
              break;
            }
            step *= 0.5;
          }
          if (step <= 1e-4) break;
        }
        if (!ok) {
          ++out.newton_stalls;
          out.stalled_cells.push_back({i, j});
        }
        s = std::clamp(s, 0.0, 1.0);
        t = std::clamp(t, 0.0, 1.0);
        found.push_back({(i + s) * g.dx, (j + t) * g.dy, j * g.nx + i});
      }
    }
  std::sort(found.begin(), found.end(), [](const Found& p, const Found& q) { return p.x < q.x; });
  const double tol = 0.5 * std::min(g.dx, g.dy);
  std::vector<char> dup(found.size(), 0);
  for (std::size_t p = 0; p < found.size(); ++p) {
    if (dup[p]) continue;
    for (std::size_t q = p + 1; q < found.size() && found[q].x - found[p].x < tol; ++q)
      if (!dup[q] && found[q].cell != found[p].cell && std::hypot(found[q].x - found[p].x, found[q].y - found[p].y) < tol)
        dup[q] = 1;
  }
  for (std::size_t p = 0; p < found.size(); ++p)
    if (!dup[p]) out.roots.push_back({found[p].x, found[p].y});
  out.count = out.roots.size();
  return out;
}

/// Length of {X = u} by marching squares with linear interpolation on cell
/// edges; saddle cells are resolved by the cell-center average.
inline double contour_length(const GridField& g, double u, std::size_t layer = 0) {
  require(g.ny >= 2, ErrorCode::InvalidConfig, "contour length needs a 2D layer");
  double total = 0.0;
  auto cross = [](double fa, double fb) { return fa / (fa - fb); };
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i) {
      const double f00 = g.value(layer, i, j) - u, f10 = g.value(layer, i + 1, j) - u;
      const double f01 = g.value(layer, i, j + 1) - u, f11 = g.value(layer, i + 1, j + 1) - u;
      const bool p00 = f00 >= 0, p10 = f10 >= 0, p01 = f01 >= 0, p11 = f11 >= 0;
      // edge points in cell units: bottom, right, top, left
      std::array<double, 2> pts[4];
      bool has[4] = {p00 != p10, p10 != p11, p01 != p11, p00 != p01};
      if (has[0]) pts[0] = {cross(f00, f10), 0.0};
      if (has[1]) pts[1] = {1.0, cross(f10, f11)};
      if (has[2]) pts[2] = {cross(f01, f11), 1.0};
      if (has[3]) pts[3] = {0.0, cross(f00, f01)};
      auto seg = [&](int e1, int e2) {
        total += std::hypot((pts[e1][0] - pts[e2][0]) * g.dx, (pts[e1][1] - pts[e2][1]) * g.dy);
      };
      const int edges = has[0] + has[1] + has[2] + has[3];
      if (edges == 2) {
        int e[2], k = 0;
        for (int q = 0; q < 4; ++q)
          if (has[q]) e[k++] = q;
        seg(e[0], e[1]);
      } else if (edges == 4) {
        const bool center = 0.25 * (f00 + f10 + f01 + f11) >= 0;
        // cut off the corners whose sign differs from the center
        if (p00 != center) seg(0, 3);
        if (p10 != center) seg(0, 1);
        if (p11 != center) seg(1, 2);
        if (p01 != center) seg(2, 3);
      }
    }
  return total;
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

enum class EnsembleKind { Crossings1D, Roots2D, Length2D };

constexpr std::string_view to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::Crossings1D: return "crossings";
    case EnsembleKind::Roots2D: return "roots";
    case EnsembleKind::Length2D: return "length";
  }
  return "crossings";
}

struct EnsembleConfig {
  EnsembleKind kind = EnsembleKind::Crossings1D;
  std::optional<CovarianceModel1D> model;    // Crossings1D
  std::optional<IsotropicFieldModel> field;  // Roots2D (2 coords), Length2D (1 coord)
  std::array<double, 2> u{0.0, 0.0};
  double T = 1.0;
  Rectangle rect;
  /// Grid intervals (per side in 2D) at the finest level.
  int resolution = 1024;
  std::size_t replicates = 1000;
  std::uint64_t seed = 1;
  /// Nested coarser grids (factor 2 each) evaluated on the same samples.
  int levels = 2;
  EmbeddingOptions embedding;
};

struct LevelStats {
  int intervals = 0;
  double delta = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double se = 0.0;
  /// E[N(N-1)] for counts, E[L^2] for lengths.
  double second = 0.0;
  double second_se = 0.0;
};

struct SimulationEnsemble {
  EnsembleKind kind = EnsembleKind::Crossings1D;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;
  int resolution = 0;
  std::string method;
  int padding = 0;
  double min_eigenvalue = 0.0;
  /// values[level][replicate]; level 0 is the finest grid.
  std::vector<std::vector<double>> values;
  std::vector<LevelStats> levels;
  /// Two-resolution Richardson extrapolation 2 m_0 - m_1 and the bias m_0 - m_1.
  double richardson_mean = 0.0;
  double richardson_bias = 0.0;
  std::size_t failures = 0;
  std::size_t newton_stalls = 0;
  std::size_t tangency_candidates = 0;
};

namespace detail {

inline LevelStats level_stats(const std::vector<double>& v, bool counts, int intervals, double delta) {
  LevelStats s;
  s.intervals = intervals;
  s.delta = delta;
  const auto b = numeric::batch_means(v, 20);
  s.mean = b.mean;
  s.variance = b.variance;
  s.se = b.se;
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = counts ? v[i] * (v[i] - 1.0) : v[i] * v[i];
  const auto b2 = numeric::batch_means(w, 20);
  s.second = b2.mean;
  s.second_se = b2.se;
  return s;
}

}  // namespace detail

/// Runs the replicates on independent Philox substreams (one stream per
/// pair of replicates, which share one complex synthesis) and aggregates
/// per resolution level in replicate order.
inline SimulationEnsemble run_ensemble(const EnsembleConfig& cfg) {
  require(cfg.replicates > 0, ErrorCode::InvalidConfig, "replicates must be positive");
  require(cfg.levels >= 1 && cfg.levels <= 8, ErrorCode::InvalidConfig, "levels must be in 1..8");
  require(cfg.resolution >= 2 && cfg.resolution % (1 << (cfg.levels - 1)) == 0, ErrorCode::InvalidConfig,
          "resolution must be divisible by 2^(levels-1)");
  SimulationEnsemble ens;
  ens.kind = cfg.kind;
  ens.seed = cfg.seed;
  ens.replicates = cfg.replicates;
  ens.resolution = cfg.resolution;
  const int L = cfg.levels;
  ens.values.assign(static_cast<std::size_t>(L), std::vector<double>(cfg.replicates, 0.0));
  std::vector<char> failed(cfg.replicates, 0);
  std::vector<std::size_t> stalls(cfg.replicates, 0), tangency(cfg.replicates, 0);
  const std::size_t pairs = (cfg.replicates + 1) / 2;
  const std::uint64_t seed = derive_seed(cfg.seed, 0x5e55);

  std::optional<ProcessSampler1D> s1;
  std::vector<FieldSampler2D> s2;
  double base_delta = 0.0;
  if (cfg.kind == EnsembleKind::Crossings1D) {
    require(cfg.model.has_value(), ErrorCode::InvalidConfig, "crossing ensemble needs a 1D model");
    s1.emplace(*cfg.model, cfg.T, cfg.resolution, cfg.embedding);
    ens.method = to_string(s1->method());
    ens.padding = s1->padding();
    ens.min_eigenvalue = s1->min_eigenvalue();
    base_delta = s1->spacing();
  } else {
    require(cfg.field.has_value(), ErrorCode::InvalidConfig, "2D ensemble needs a field");
    const int need = cfg.kind == EnsembleKind::Roots2D ? 2 : 1;
    require(cfg.field->dim() == need, ErrorCode::InvalidConfig,
            cfg.kind == EnsembleKind::Roots2D ? "root ensemble needs 2 coordinates" : "length ensemble needs 1 coordinate");
    for (const auto& p : cfg.field->coords) s2.emplace_back(p, cfg.rect, cfg.resolution, cfg.embedding);
    ens.method = to_string(s2.front().method());
    ens.padding = s2.front().padding();
    ens.min_eigenvalue = s2.front().min_eigenvalue();
    base_delta = s2.front().dx();
  }

  auto evaluate = [&](std::size_t rep, const GridField& g) {
    for (int l = 0; l < L; ++l) {
      const GridField h = l == 0 ? GridField() : g.subsample(1 << l);
      const GridField& f = l == 0 ? g : h;
      double v = 0.0;
      switch (cfg.kind) {
        case EnsembleKind::Crossings1D: {
          const auto c = count_crossings(f, cfg.u[0]);
          v = static_cast<double>(c.count);
          if (l == 0) tangency[rep] = c.tangency_candidates;
          break;
        }
        case EnsembleKind::Roots2D: {
          const auto c = count_roots_2d(f, cfg.u);
          v = static_cast<double>(c.count);
          if (l == 0) stalls[rep] = c.newton_stalls;
          break;
        }
        case EnsembleKind::Length2D: v = contour_length(f, cfg.u[0]); break;
      }
      ens.values[static_cast<std::size_t>(l)][rep] = v;
    }
  };

  parallel_for(pairs, [&](std::size_t p) {
    const std::size_t r0 = 2 * p, r1 = 2 * p + 1;
    try {
      RandomStream rng(seed, p);
      GridField ga, gb;
      std::vector<double> a, b;
      if (s1) {
        s1->sample_pair(rng, a, b);
        ga.nx = gb.nx = s1->points();
        ga.dx = gb.dx = s1->spacing();
        ga.layers.push_back(std::move(a));
        gb.layers.push_back(std::move(b));
      } else {
        for (const auto& s : s2) {
          s.sample_pair(rng, a, b);
          ga.nx = ga.ny = gb.nx = gb.ny = s.points_per_side();
          ga.dx = gb.dx = s.dx();
          ga.dy = gb.dy = s.dy();
          ga.layers.push_back(a);
          gb.layers.push_back(b);
        }
      }
      evaluate(r0, ga);
      if (r1 < cfg.replicates) evaluate(r1, gb);
    } catch (const Error&) {
      failed[r0] = 1;
      if (r1 < cfg.replicates) failed[r1] = 1;
    }
  });

  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    ens.failures += failed[r];
    ens.newton_stalls += stalls[r];
    ens.tangency_candidates += tangency[r];
  }
  if (static_cast<double>(ens.failures) > 0.01 * static_cast<double>(cfg.replicates))
    fail(ErrorCode::ReplicateFailures, std::to_string(ens.failures) + " of " + std::to_string(cfg.replicates) +
                                            " replicates failed");
  const bool counts = cfg.kind != EnsembleKind::Length2D;
  for (int l = 0; l < L; ++l) {
    std::vector<double> ok;
    ok.reserve(cfg.replicates);
    for (std::size_t r = 0; r < cfg.replicates; ++r)
      if (!failed[r]) ok.push_back(ens.values[static_cast<std::size_t>(l)][r]);
    ens.levels.push_back(detail::level_stats(ok, counts, cfg.resolution >> l, base_delta * (1 << l)));
  }
  if (L >= 2) {
    ens.richardson_bias = ens.levels[0].mean - ens.levels[1].mean;
    ens.richardson_mean = ens.levels[0].mean + ens.richardson_bias;
  } else {
    ens.richardson_mean = ens.levels[0].mean;
  }
  return ens;
}

/// One row per replicate at the finest grid: replicate_id,value,delta.
inline void write_ensemble_csv(std::ostream& os, const SimulationEnsemble& ens) {
  os << "replicate_id," << (ens.kind == EnsembleKind::Length2D ? "length" : "count") << ",delta\n";
  char buf[96];
  const double delta = ens.levels.empty() ? 0.0 : ens.levels[0].delta;
  for (std::size_t r = 0; r < ens.replicates; ++r) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r, ens.values[0][r], delta);
    os << buf;
  }
}

}  // namespace crossmoments
