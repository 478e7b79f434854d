#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Dense>

#include "soc/conv.hpp"

namespace soc {

inline constexpr double kDefaultGain = 0.7;
inline constexpr int kDefaultPowerIterations = 50;
inline constexpr double kPowerIterationTolerance = 1e-10;

template <Scalar T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <Scalar T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// A filter L built as M - conv_transpose(M), so its Jacobian is skew-symmetric
/// (skew-Hermitian for complex scalars) at every input size.
template <Scalar T>
struct BasicSkewFilter {
  BasicFilter<T> params;  // free tensor M
  BasicFilter<T> skew;    // L, possibly rescaled by normalize()
  double norm_bound = 0.0;
  double gain = kDefaultGain;
};

using SkewFilter = BasicSkewFilter<double>;
using ComplexSkewFilter = BasicSkewFilter<Complex>;

/// The four filter reshapes whose spectral norms bound the Jacobian norm.
///   R: (c_out h) x (c_in w)   S: (c_out w) x (c_in h)
///   T: c_out x (c_in h w)     U: (c_out h w) x c_in
enum class Reshape : std::uint8_t { R = 0, S = 1, T = 2, U = 3 };
inline constexpr std::array<Reshape, 4> kAllReshapes = {Reshape::R, Reshape::S, Reshape::T, Reshape::U};

struct SpectralBound {
  double r_norm = 0.0;
  double s_norm = 0.0;
  double t_norm = 0.0;
  double u_norm = 0.0;
  std::size_t hw = 1;
  double bound = 0.0;  // sqrt(hw) * min of the four norms

  double min_norm() const { return std::min({r_norm, s_norm, t_norm, u_norm}); }
};

template <Scalar T>
Matrix<T> reshape_filter(const BasicFilter<T>& filter, Reshape kind);

/// Inverse of reshape_filter for a filter of the given (c_out, c_in, h, w) shape.
Filter filter_from_reshape(const Matrix<double>& matrix, Reshape kind, const Shape& filter_dims);

/// Deterministic unit start vector (fixed-seed Gaussian) for power iteration.
Vector<double> default_start_vector(std::size_t size);

struct PowerIterationResult {
  double sigma = 0.0;
  Vector<double> right;  // unit right singular vector estimate
  int iterations = 0;
};

/// Largest singular value of `a` by power iteration on a^H a, starting from
/// `start` and stopping once the estimate changes by at most `tol` (relative).
template <Scalar T>
PowerIterationResult power_iteration(const Matrix<T>& a, Vector<double> start, int max_iters,
                                     double tol = kPowerIterationTolerance);

/// Upper bound on the Jacobian spectral norm from the four filter reshapes.
template <Scalar T>
SpectralBound spectral_bound(const BasicFilter<T>& filter, int iters = kDefaultPowerIterations);

/// Builds L = M - conv_transpose(M). Even spatial sides of M are zero-padded on
/// the trailing edge first. Throws if M is not square in channels.
template <Scalar T>
BasicSkewFilter<T> make_skew(const BasicFilter<T>& params, double gain = kDefaultGain);

/// Scales the skew filter by gain / min(||R||, ||S||, ||T||, ||U||), giving a
/// certified Jacobian norm of at most gain * sqrt(hw). Zero filters are returned
/// unchanged with norm_bound 0.
template <Scalar T>
BasicSkewFilter<T> normalize(const BasicSkewFilter<T>& sf, int iters = kDefaultPowerIterations);

/// True when L == -conv_transpose(L) entrywise within `tol`.
template <Scalar T>
bool is_skew_filter(const BasicFilter<T>& filter, double tol = 0.0);

/// A filter M with M - conv_transpose(M) == L for any skew filter L: strictly
/// upper channel blocks copied, lower blocks zero, and on diagonal blocks the
/// lexicographically leading taps copied with the centre tap halved.
template <Scalar T>
BasicFilter<T> skew_preimage(const BasicFilter<T>& skew);

// 3D counterparts over (c, c, d, h, w) filters.
template <Scalar T>
BasicFilter<T> make_skew_3d(const BasicFilter<T>& params);
template <Scalar T>
BasicFilter<T> skew_preimage_3d(const BasicFilter<T>& skew);

/// Warm-started power-iteration vectors for the four reshapes of one filter.
/// Owned by a single layer's training context.
struct NormalizationState {
  std::array<Vector<double>, 4> right;

  bool initialized() const { return right[0].size() > 0; }
  /// Runs up to `iters` power-iteration steps per reshape from the stored vectors.
  void refresh(const Filter& skew, int iters, double tol = kPowerIterationTolerance);
};

/// Normalization scalar evaluated with frozen right vectors:
/// sigma = min_r ||A_r(L) v_r||, differentiable in L with v_r held constant.
struct FrozenNormalization {
  double sigma = 0.0;
  Reshape which = Reshape::R;
  Vector<double> left;   // A v / ||A v|| of the selected reshape
  Vector<double> right;  // v of the selected reshape
};

FrozenNormalization evaluate_frozen(const NormalizationState& state, const Filter& skew);

/// gain * L / sigma using frozen vectors (zero filter stays zero).
Filter apply_normalization(const Filter& skew, const FrozenNormalization& frozen, double gain);

/// Pulls a gradient w.r.t. the normalized filter back to the raw skew filter L.
Filter normalization_backward(const Filter& skew, const FrozenNormalization& frozen, double gain,
                              const Filter& grad_normalized);

/// Adjoint of M -> M - conv_transpose(M): G_M = G_L - conv_transpose(G_L).
Filter skew_backward(const Filter& grad_skew);

}  // namespace soc
