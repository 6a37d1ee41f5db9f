#include "that/surface.hpp"

#include <algorithm>
#include <sstream>

#include "that/strings.hpp"

namespace that {

namespace {

constexpr std::uint64_t kFirstDirection = 0xD1;
constexpr std::uint64_t kSecondDirection = 0xD2;

}  // namespace

const char* to_string(DirectionKind d) noexcept {
  switch (d) {
    case DirectionKind::rademacher: return "rademacher";
    case DirectionKind::adversarial: return "adv";
    case DirectionKind::zero: return "zero";
  }
  return "?";
}

DirectionKind parse_direction(const std::string& text) {
  if (text == "rademacher") return DirectionKind::rademacher;
  if (text == "adv" || text == "adversarial") return DirectionKind::adversarial;
  if (text == "zero") return DirectionKind::zero;
  fail(ErrorCode::config, "unknown surface direction '" + text + "'");
}

void SurfaceSpec::validate() const {
  require(resolution >= 1 && resolution % 2 == 1, ErrorCode::config,
          "surface: resolution must be a positive odd number");
  require(radius > 0.0, ErrorCode::config, "surface: radius must be positive");
  require(scale > 0.0, ErrorCode::config, "surface: scale must be positive");
  require(lo < hi, ErrorCode::config, "surface: pixel bounds need lo < hi");
}

Tensor<float> rademacher_direction(std::size_t dim, double scale, Rng& rng) {
  Tensor<float> d(Shape{1, dim});
  const auto s = static_cast<float>(scale);
  for (float& v : d.data()) v = rng.coin() ? s : -s;
  return d;
}

Tensor<float> adversarial_direction(const Tensor<float>& x, int y,
                                    const EncoderParams<float>& params,
                                    AttackLoss loss, double scale) {
  require(x.rank() == 2 && x.rows() == 1, ErrorCode::shape_mismatch,
          "adversarial_direction: expects a single [1, dim] row");
  require(y >= 0 && static_cast<std::size_t>(y) < params.arch.classes,
          ErrorCode::invalid_label, "adversarial_direction: label out of range");
  const AttackObjective objective = attack_objective(params, loss);
  Graph<float> g;
  const Var xv = g.leaf(x, true);
  const int labels[] = {y};
  const Var l = g.sum(objective(g, xv, x, labels));
  const Var wrt[] = {xv};
  Tensor<float> d = std::move(g.grad(l, wrt)[0]);
  const auto s = static_cast<float>(scale);
  for (float& v : d.data()) v = v > 0.0F ? s : (v < 0.0F ? -s : 0.0F);
  return d;
}

std::pair<Tensor<float>, Tensor<float>> surface_directions(
    const Tensor<float>& x, int y, const EncoderParams<float>& params,
    const SurfaceSpec& spec) {
  auto make = [&](DirectionKind kind, std::uint64_t stream) {
    switch (kind) {
      case DirectionKind::rademacher: {
        Rng rng(derive_seed(spec.seed, stream));
        return rademacher_direction(x.cols(), spec.scale, rng);
      }
      case DirectionKind::adversarial:
        return adversarial_direction(x, y, params, spec.loss, spec.scale);
      case DirectionKind::zero:
        break;
    }
    return Tensor<float>(Shape{1, x.cols()});
  };
  return {make(spec.d1, kFirstDirection), make(spec.d2, kSecondDirection)};
}

SurfaceGrid loss_grid(const Tensor<float>& x, int y,
                      const EncoderParams<float>& params,
                      const SurfaceSpec& spec, const Executor& exec) {
  spec.validate();
  require(x.rank() == 2 && x.rows() == 1 && x.cols() == params.arch.input_dim(),
          ErrorCode::shape_mismatch, "loss_grid: expects one input row");
  const auto [d1, d2] = surface_directions(x, y, params, spec);
  const auto S = static_cast<std::size_t>(spec.resolution);
  const std::size_t half = S / 2;

  SurfaceGrid grid;
  grid.a.resize(S);
  for (std::size_t i = 0; i < S; ++i) {
    // Integer steps keep the centre exactly at zero and the axes symmetric.
    grid.a[i] = half == 0 ? 0.0
                          : spec.radius * (static_cast<double>(i) - static_cast<double>(half)) /
                                static_cast<double>(half);
  }
  grid.b = grid.a;

  const std::size_t dim = x.cols();
  Tensor<float> points(Shape{S * S, dim});
  const auto lo = static_cast<float>(spec.lo), hi = static_cast<float>(spec.hi);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      auto row = points.row(i * S + j);
      bool clamped = false;
      for (std::size_t k = 0; k < dim; ++k) {
        const double v = static_cast<double>(x[k]) + grid.a[i] * d1[k] + grid.b[j] * d2[k];
        const float f = i == half && j == half ? x[k] : static_cast<float>(v);
        const float c = std::clamp(f, lo, hi);
        clamped = clamped || c != f;
        row[k] = c;
      }
      if (clamped) ++grid.clamped;
    }
  }
  const std::vector<int> labels(S * S, y);
  const std::vector<double> values =
      objective_values(points, labels, attack_objective(params, spec.loss), exec);
  grid.loss = Tensor<double>(Shape{S, S}, values);
  grid.center = grid.loss.at(half, half);
  return grid;
}

std::string surface_csv(const SurfaceGrid& grid, const SurfaceSpec& spec,
                        std::size_t sample_index) {
  std::ostringstream os;
  os << "# sample=" << sample_index << '\n'
     << "# d1=" << to_string(spec.d1) << '\n'
     << "# d2=" << to_string(spec.d2) << '\n'
     << "# seed=" << spec.seed << '\n'
     << "# scale=" << format_double(spec.scale) << '\n'
     << "# radius=" << format_double(spec.radius) << '\n'
     << "# resolution=" << spec.resolution << '\n'
     << "# loss=" << to_string(spec.loss) << '\n'
     << "# clamped=" << grid.clamped << '\n'
     << "# center=" << format_double(grid.center) << '\n';
  const std::size_t S = grid.a.size();
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      if (j) os << ',';
      os << format_double(grid.loss.at(i, j));
    }
    os << '\n';
  }
  return os.str();
}

std::string surface_axes_csv(const SurfaceGrid& grid) {
  std::ostringstream os;
  os << "axis,index,offset\n";
  for (std::size_t i = 0; i < grid.a.size(); ++i)
    os << "a," << i << ',' << format_double(grid.a[i]) << '\n';
  for (std::size_t j = 0; j < grid.b.size(); ++j)
    os << "b," << j << ',' << format_double(grid.b[j]) << '\n';
  return os.str();
}

}  // namespace that
