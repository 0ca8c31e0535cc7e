#pragma once

#include "posegauss/fusion.hpp"
#include "posegauss/posekit.hpp"

#include <vector>

namespace pg {

struct SolverConfig {
  int iterations = 8;    // T
  int downsample = 3;    // k: feature maps are 1/2^k of the input
  int radius = 4;        // lookup half-width
  int hidden = 32;       // GRU width
  int context = 16;      // context features fed to every GRU step
  double d_min = 0.05;   // positivity floor (m)

  void validate() const;
};

template <typename Scalar>
struct SolverParams {
  ConvParams<Scalar> context;  // 1×1 fused features → context
  GRUParams<Scalar> gru;
  ConvParams<Scalar> head1;    // 3×3 hidden → hidden/2
  ConvParams<Scalar> head2;    // 3×3 → ΔD (the "depth head")
};

template <typename Scalar>
SolverParams<Scalar> make_solver(ParamStore<Scalar>& store, const std::string& name,
                                 int fused_channels, const SolverConfig& config, std::uint64_t seed);

template <typename Scalar>
struct DepthState {
  Var<Scalar> depth;   // H′×W′×1
  Var<Scalar> hidden;  // H′×W′×hidden
  Scalar initial = 0;  // D⁽⁰⁾, also the prewarp plane depth
  int step = 0;
};

/// Median camera-space depth of the visible joints, or `fallback` when none
/// is visible. Even counts average the two middle values.
template <typename Scalar>
Scalar median_joint_depth(const Joints2D<Scalar>& joints, Scalar fallback);

/// D⁽⁰⁾ ≡ median joint depth, zero hidden state.
template <typename Scalar>
DepthState<Scalar> init_depth(Tape<Scalar>& tape, const Joints2D<Scalar>& joints, Scalar fallback,
                              int height, int width, const SolverConfig& config);

/// Context features computed once from the fused features.
template <typename Scalar>
Var<Scalar> solver_context(Var<Scalar> fused, const SolverParams<Scalar>& params);

/// One GRU update: lookup at the current depth, GRU step, ΔD head,
/// D ← max(D + ΔD, d_min).
template <typename Scalar>
DepthState<Scalar> refine_step(const DepthState<Scalar>& state, Var<Scalar> volume,
                               const LookupGeometry<Scalar>& geometry, Var<Scalar> context,
                               const SolverParams<Scalar>& params, const SolverConfig& config);

template <typename Scalar>
struct SolveResult {
  std::vector<Var<Scalar>> depths;  // d_1 … d_T at feature resolution
  Var<Scalar> hidden;
};

template <typename Scalar>
SolveResult<Scalar> solve_depth(DepthState<Scalar> state, Var<Scalar> volume,
                                const LookupGeometry<Scalar>& geometry, Var<Scalar> context,
                                const SolverParams<Scalar>& params, const SolverConfig& config);

}  // namespace pg
