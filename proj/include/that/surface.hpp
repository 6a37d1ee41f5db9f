#pragma once

#include <string>
#include <vector>

#include "that/attack.hpp"

namespace that {

enum class DirectionKind { rademacher, adversarial, zero };

const char* to_string(DirectionKind d) noexcept;
DirectionKind parse_direction(const std::string& text);

struct SurfaceSpec {
  DirectionKind d1 = DirectionKind::adversarial;
  DirectionKind d2 = DirectionKind::rademacher;
  std::uint64_t seed = 0;  // rademacher draws; d2 uses a separate stream
  // Entries of both directions have magnitude `scale` (epsilon by default);
  // the grid sweeps [-radius, radius] in multiples of that direction.
  double scale = 8.0 / 255.0;
  double radius = 1.0;
  int resolution = 21;
  AttackLoss loss = AttackLoss::classification;
  double lo = 0.0;
  double hi = 1.0;

  void validate() const;
};

// Entries are +scale or -scale with equal probability.
Tensor<float> rademacher_direction(std::size_t dim, double scale, Rng& rng);

// scale * sign of the input gradient of the loss at x (a single row).
Tensor<float> adversarial_direction(const Tensor<float>& x, int y,
                                    const EncoderParams<float>& params,
                                    AttackLoss loss, double scale);

struct SurfaceGrid {
  std::vector<double> a;     // offsets along d1
  std::vector<double> b;     // offsets along d2
  Tensor<double> loss;       // [S, S], cell (i, j) at a[i], b[j]
  std::size_t clamped = 0;   // grid points that needed pixel clamping
  double center = 0.0;
};

// Cell (i, j) = loss(clamp(x + a_i d1 + b_j d2), y). The centre cell is
// computed on the same path as objective_values, so it equals the plain
// loss at x exactly.
SurfaceGrid loss_grid(const Tensor<float>& x, int y,
                      const EncoderParams<float>& params,
                      const SurfaceSpec& spec,
                      const Executor& exec = Executor());

// Directions as used by loss_grid.
std::pair<Tensor<float>, Tensor<float>> surface_directions(
    const Tensor<float>& x, int y, const EncoderParams<float>& params,
    const SurfaceSpec& spec);

// "# key=value" metadata lines, then S rows of S comma-separated losses.
std::string surface_csv(const SurfaceGrid& grid, const SurfaceSpec& spec,
                        std::size_t sample_index);
// Companion file: axis,index,offset.
std::string surface_axes_csv(const SurfaceGrid& grid);

}  // namespace that
