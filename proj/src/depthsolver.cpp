#include "posegauss/depthsolver.hpp"

#include <algorithm>
#include <stdexcept>

namespace pg {

void SolverConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("solver: iterations must be >= 1");
  if (downsample != 3 && downsample != 4) throw std::invalid_argument("solver: k must be 3 or 4");
  if (radius < 0) throw std::invalid_argument("solver: radius must be >= 0");
  if (hidden < 2 || context < 1) throw std::invalid_argument("solver: widths too small");
  if (!(d_min > 0)) throw std::invalid_argument("solver: d_min must be positive");
}

template <typename Scalar>
SolverParams<Scalar> make_solver(ParamStore<Scalar>& store, const std::string& name,
                                 int fused_channels, const SolverConfig& config, std::uint64_t seed) {
  SolverParams<Scalar> p;
  const int taps = 2 * config.radius + 1;
  p.context = make_conv(store, name + ".context", 1, 1, fused_channels, config.context, seed);
  p.gru = make_conv_gru(store, name + ".gru", config.hidden, taps + 1 + config.context, seed);
  p.head1 = make_conv(store, name + ".head1", 3, 3, config.hidden, config.hidden / 2, seed);
  p.head2 = make_conv(store, name + ".head2", 3, 3, config.hidden / 2, 1, seed);
  // Small initial steps keep the untrained solver close to D⁽⁰⁾.
  init_fan_in_uniform(*p.head2.weight, 9 * (config.hidden / 2), seed, 0.1);
  return p;
}

template <typename Scalar>
Scalar median_joint_depth(const Joints2D<Scalar>& joints, Scalar fallback) {
  std::vector<Scalar> z;
  for (int j = 0; j < joints.size(); ++j)
    if (joints.visible[j] && joints.depth[j] > 0) z.push_back(joints.depth[j]);
  if (z.empty()) return fallback;
  std::sort(z.begin(), z.end());
  const std::size_t n = z.size();
  return n % 2 ? z[n / 2] : Scalar(0.5) * (z[n / 2 - 1] + z[n / 2]);
}

template <typename Scalar>
DepthState<Scalar> init_depth(Tape<Scalar>& tape, const Joints2D<Scalar>& joints, Scalar fallback,
                              int height, int width, const SolverConfig& config) {
  DepthState<Scalar> s;
  s.initial = std::max(median_joint_depth(joints, fallback), Scalar(config.d_min));
  s.depth = tape.constant(Tensor3<Scalar>::constant(height, width, 1, s.initial));
  s.hidden = tape.constant(Tensor3<Scalar>(height, width, config.hidden));
  return s;
}

template <typename Scalar>
Var<Scalar> solver_context(Var<Scalar> fused, const SolverParams<Scalar>& params) {
  return relu(conv2d(fused, params.context, 1, 0));
}

template <typename Scalar>
DepthState<Scalar> refine_step(const DepthState<Scalar>& state, Var<Scalar> volume,
                               const LookupGeometry<Scalar>& geometry, Var<Scalar> context,
                               const SolverParams<Scalar>& params, const SolverConfig& config) {
  if (state.step >= config.iterations) throw std::invalid_argument("refine_step: already at T");
  Var<Scalar> corr = lookup_correlation(volume, state.depth, geometry, config.radius);
  Var<Scalar> rel = affine(state.depth, Scalar(1) / state.initial, Scalar(-1));
  Var<Scalar> input = concat_channels<Scalar>({corr, rel, context});
  DepthState<Scalar> next = state;
  next.hidden = conv_gru_step(state.hidden, input, params.gru);
  Var<Scalar> delta = conv2d(relu(conv2d(next.hidden, params.head1, 1, 1)), params.head2, 1, 1);
  next.depth = clamp_min(add(state.depth, delta), Scalar(config.d_min));
  next.step = state.step + 1;
  return next;
}

template <typename Scalar>
SolveResult<Scalar> solve_depth(DepthState<Scalar> state, Var<Scalar> volume,
                                const LookupGeometry<Scalar>& geometry, Var<Scalar> context,
                                const SolverParams<Scalar>& params, const SolverConfig& config) {
  config.validate();
  SolveResult<Scalar> out;
  while (state.step < config.iterations) {
    state = refine_step(state, volume, geometry, context, params, config);
    out.depths.push_back(state.depth);
  }
  out.hidden = state.hidden;
  return out;
}

#define PG_INSTANTIATE_SOLVER(S)                                                                \
  template SolverParams<S> make_solver(ParamStore<S>&, const std::string&, int,                 \
                                       const SolverConfig&, std::uint64_t);                     \
  template S median_joint_depth(const Joints2D<S>&, S);                                         \
  template DepthState<S> init_depth(Tape<S>&, const Joints2D<S>&, S, int, int,                  \
                                    const SolverConfig&);                                       \
  template Var<S> solver_context(Var<S>, const SolverParams<S>&);                               \
  template DepthState<S> refine_step(const DepthState<S>&, Var<S>, const LookupGeometry<S>&,    \
                                     Var<S>, const SolverParams<S>&, const SolverConfig&);      \
  template SolveResult<S> solve_depth(DepthState<S>, Var<S>, const LookupGeometry<S>&, Var<S>,  \
                                      const SolverParams<S>&, const SolverConfig&);

PG_INSTANTIATE_SOLVER(float)
PG_INSTANTIATE_SOLVER(double)

}  // namespace pg
